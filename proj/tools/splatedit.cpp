#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "splatedit/splatedit.hpp"

namespace {

/// One subcommand's worth of option state: every flag mirrors a
/// PipelineConfig field and overrides the config file when given.
struct CommandState {
    std::string config_path;
    splatedit::PipelineConfig flags;
    std::vector<double> background;
    CLI::App* cmd = nullptr;

    splatedit::PipelineConfig resolve() const {
        splatedit::PipelineConfig base;
        if (!config_path.empty()) base = splatedit::load_config(config_path);
        const auto passed = [&](const std::string& name) {
            return cmd->count(name) > 0;
        };
        if (passed("--source")) base.source_ply = flags.source_ply;
        if (passed("--asset")) base.asset_ply = flags.asset_ply;
        if (passed("--bbox")) base.bbox = flags.bbox;
        if (passed("--cameras")) base.cameras = flags.cameras;
        if (passed("--masks")) base.masks_dir = flags.masks_dir;
        if (passed("--ref")) base.ref_image = flags.ref_image;
        if (passed("--scores")) base.scores_csv = flags.scores_csv;
        if (passed("--tokens")) base.tokens_dir = flags.tokens_dir;
        if (passed("--workdir")) base.workdir = flags.workdir;
        if (passed("--mode")) base.mode = flags.mode;
        if (passed("--iterations")) base.iterations = flags.iterations;
        if (passed("--key-views")) base.key_views = flags.key_views;
        if (passed("--patch")) base.patch = flags.patch;
        if (passed("--similarity-patch")) base.similarity_patch = flags.similarity_patch;
        if (passed("--weighting")) base.weighting = flags.weighting;
        if (passed("--lambda-mae")) base.lambda_mae = flags.lambda_mae;
        if (passed("--lambda-perceptual")) base.lambda_perceptual = flags.lambda_perceptual;
        if (passed("--epochs")) base.epochs = flags.epochs;
        if (passed("--lr")) base.lr = flags.lr;
        if (passed("--seed")) base.seed = flags.seed;
        if (passed("--workers")) base.workers = flags.workers;
        if (passed("--vote-fraction")) base.vote_fraction = flags.vote_fraction;
        if (passed("--orbit-views")) base.orbit_views = flags.orbit_views;
        if (passed("--render-size")) base.render_size = flags.render_size;
        if (passed("--prompt")) base.prompt = flags.prompt;
        if (passed("--negative-prompt")) base.negative_prompt = flags.negative_prompt;
        if (passed("--timeout")) base.translator_timeout = flags.translator_timeout;
        if (passed("--background"))
            for (std::size_t i = 0; i < 3; ++i) base.background[i] = background[i];
        return base;
    }
};

void add_options(CLI::App* cmd, CommandState& state) {
    state.cmd = cmd;
    auto& f = state.flags;
    cmd->add_option("-c,--config", state.config_path, "JSON config file");
    cmd->add_option("--source", f.source_ply, "source scene PLY");
    cmd->add_option("--asset", f.asset_ply, "asset PLY to integrate");
    cmd->add_option("--bbox", f.bbox, "oriented box JSON (add mode)");
    cmd->add_option("--cameras", f.cameras, "camera set JSON; omit for an orbit");
    cmd->add_option("--masks", f.masks_dir, "directory of <view>.png masks (replace mode)");
    cmd->add_option("--ref", f.ref_image, "reference photo PNG");
    cmd->add_option("--scores", f.scores_csv, "external similarity CSV");
    cmd->add_option("--tokens", f.tokens_dir, "directory of <view>.tokg token grids");
    cmd->add_option("-w,--workdir", f.workdir, "pipeline working directory");
    cmd->add_option("--mode", f.mode, "add | replace")
        ->check(CLI::IsMember({"add", "replace"}));
    cmd->add_option("-T,--iterations", f.iterations, "translator rounds (0 skips selection)");
    cmd->add_option("-k,--key-views", f.key_views, "key view count");
    cmd->add_option("--patch", f.patch, "token patch size in pixels");
    cmd->add_option("--similarity-patch", f.similarity_patch, "builtin similarity patch size");
    cmd->add_option("--weighting", f.weighting, "direct | inverse")
        ->check(CLI::IsMember({"direct", "inverse"}));
    cmd->add_option("--lambda-mae", f.lambda_mae, "absolute-error loss weight");
    cmd->add_option("--lambda-perceptual", f.lambda_perceptual, "structural loss weight");
    cmd->add_option("--epochs", f.epochs, "fine-tuning epochs");
    cmd->add_option("--lr", f.lr, "fine-tuning learning rate");
    cmd->add_option("--seed", f.seed, "view shuffling seed");
    cmd->add_option("-j,--workers", f.workers, "worker threads");
    cmd->add_option("--vote-fraction", f.vote_fraction, "replace-mode mask vote threshold");
    cmd->add_option("--orbit-views", f.orbit_views, "orbit view count when no cameras given");
    cmd->add_option("--render-size", f.render_size, "orbit render resolution in pixels");
    cmd->add_option("--background", state.background, "render background RGB")
        ->expected(3);
    cmd->add_option("--prompt", f.prompt, "translator prompt");
    cmd->add_option("--negative-prompt", f.negative_prompt, "translator negative prompt");
    cmd->add_option("--timeout", f.translator_timeout, "translator timeout in seconds");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"3D Gaussian splat scene editing and fine-tuning"};
    app.require_subcommand(1);

    struct Registered {
        const char* name;
        std::function<bool(const splatedit::PipelineConfig&)> fn;
        CommandState state;
    };
    std::vector<Registered> commands;
    commands.push_back({"integrate", splatedit::cmd_integrate, {}});
    commands.push_back({"render", splatedit::cmd_render, {}});
    commands.push_back({"select", splatedit::cmd_select, {}});
    commands.push_back({"harmonize", splatedit::cmd_harmonize, {}});
    commands.push_back({"finetune", splatedit::cmd_finetune, {}});
    commands.push_back({"run", splatedit::cmd_run, {}});

    const char* const descriptions[] = {
        "merge an asset into the source scene",
        "render the integrated scene from every view",
        "expand the training set via the external translator",
        "rewrite guidance tokens for cross-view consistency",
        "fine-tune inserted splats against the guidance images",
        "run every stage in order",
    };
    for (std::size_t i = 0; i < commands.size(); ++i)
        add_options(app.add_subcommand(commands[i].name, descriptions[i]),
                    commands[i].state);

    CLI11_PARSE(app, argc, argv);

    try {
        for (auto& c : commands) {
            if (!c.state.cmd->parsed()) continue;
            const bool ran = c.fn(c.state.resolve());
            std::printf("%s: %s\n", c.name, ran ? "updated" : "up to date");
        }
    } catch (const splatedit::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
