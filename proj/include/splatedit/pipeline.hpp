#ifndef SPLATEDIT_PIPELINE_HPP
#define SPLATEDIT_PIPELINE_HPP

#include <array>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include <nlohmann/json.hpp>

#include "splatedit/camera.hpp"
#include "splatedit/consistency.hpp"
#include "splatedit/finetune.hpp"
#include "splatedit/ply.hpp"
#include "splatedit/scene_edit.hpp"
#include "splatedit/selection.hpp"
#include "splatedit/similarity.hpp"

namespace splatedit {

/// Everything the pipeline commands need, loadable from JSON. Fields that a
/// particular command does not use may stay empty.
struct PipelineConfig {
    // files and directories
    std::string source_ply;
    std::string asset_ply;
    std::string bbox;       // oriented box JSON, add mode
    std::string cameras;    // camera JSON; empty = orbit around the edited scene
    std::string masks_dir;  // <view>.png foreground, optional <view>_ground.png
    std::string ref_image;  // reference photo for training-set expansion
    std::string scores_csv; // external similarity table; empty = builtin
    std::string tokens_dir; // pre-tokenized <view>.tokg inputs for harmonize
    std::string workdir;

    std::string mode = "add";  // "add" or "replace"
    int iterations = 0;        // translator rounds; 0 skips selection
    int key_views = 4;
    int patch = 8;             // token patch size, pixels
    int similarity_patch = 8;  // builtin similarity patch size
    std::string weighting = "direct";  // "direct" or "inverse"
    double lambda_mae = 1.0;
    double lambda_perceptual = 0.2;
    int epochs = 10;
    double lr = 0.001;
    std::uint64_t seed = 0;
    int workers = 1;
    double vote_fraction = 0.5;
    int orbit_views = 16;
    int render_size = 128;
    /// PLY files carry no background, so rendering and fine-tuning take
    /// theirs from the config and stay consistent with each other.
    std::array<double, 3> background{0.0, 0.0, 0.0};
    std::string prompt;
    std::string negative_prompt =
        "ugly, deformed, disfigured, poor details, bad anatomy, cartoon, CGI, unrealistic";
    double translator_timeout = 60.0;

    void validate() const {
        if (workdir.empty()) throw InputError("workdir is required");
        if (source_ply.empty()) throw InputError("source_ply is required");
        if (mode != "add" && mode != "replace")
            throw InputError("mode must be \"add\" or \"replace\"");
        if (weighting != "direct" && weighting != "inverse")
            throw InputError("weighting must be \"direct\" or \"inverse\"");
        if (iterations < 0) throw InputError("iterations must be >= 0");
        if (key_views < 1) throw InputError("key_views must be >= 1");
        if (patch < 1) throw InputError("patch must be >= 1");
        if (similarity_patch < 2) throw InputError("similarity_patch must be >= 2");
        if (epochs < 1) throw InputError("epochs must be >= 1");
        if (!(lr > 0.0)) throw InputError("lr must be positive");
        if (workers < 1) throw InputError("workers must be >= 1");
        if (orbit_views < 2) throw InputError("orbit_views must be >= 2");
        if (render_size < 8) throw InputError("render_size must be >= 8");
        if (!(vote_fraction >= 0.0 && vote_fraction <= 1.0))
            throw InputError("vote_fraction must be in [0, 1]");
        for (const double b : background)
            if (!(b >= 0.0 && b <= 1.0))
                throw InputError("background channels must be in [0, 1]");
        if (mode == "add" && bbox.empty()) throw InputError("add mode requires a bbox file");
        if (mode == "replace" && (cameras.empty() || masks_dir.empty()))
            throw InputError("replace mode requires cameras and masks_dir");
        if (iterations > 0 && ref_image.empty())
            throw InputError("selection requires ref_image");
        if (iterations > 0 && prompt.empty())
            throw InputError("selection requires a prompt");
        LossConfig lc;
        lc.lambda_mae = lambda_mae;
        lc.lambda_perceptual = lambda_perceptual;
        lc.validate();
    }
};

inline void to_json(nlohmann::json& j, const PipelineConfig& c) {
    j = nlohmann::json{{"source_ply", c.source_ply},
                       {"asset_ply", c.asset_ply},
                       {"bbox", c.bbox},
                       {"cameras", c.cameras},
                       {"masks_dir", c.masks_dir},
                       {"ref_image", c.ref_image},
                       {"scores_csv", c.scores_csv},
                       {"tokens_dir", c.tokens_dir},
                       {"workdir", c.workdir},
                       {"mode", c.mode},
                       {"iterations", c.iterations},
                       {"key_views", c.key_views},
                       {"patch", c.patch},
                       {"similarity_patch", c.similarity_patch},
                       {"weighting", c.weighting},
                       {"lambda_mae", c.lambda_mae},
                       {"lambda_perceptual", c.lambda_perceptual},
                       {"epochs", c.epochs},
                       {"lr", c.lr},
                       {"seed", c.seed},
                       {"workers", c.workers},
                       {"vote_fraction", c.vote_fraction},
                       {"orbit_views", c.orbit_views},
                       {"render_size", c.render_size},
                       {"background", c.background},
                       {"prompt", c.prompt},
                       {"negative_prompt", c.negative_prompt},
                       {"translator_timeout", c.translator_timeout}};
}

inline void from_json(const nlohmann::json& j, PipelineConfig& c) {
    const PipelineConfig defaults;
    for (const auto& [key, value] : j.items()) {
        (void)value;
        static const nlohmann::json known = [] {
            nlohmann::json k;
            to_json(k, PipelineConfig{});
            return k;
        }();
        if (!known.contains(key)) throw FormatError("unknown config field: " + key);
    }
    c.source_ply = j.value("source_ply", defaults.source_ply);
    c.asset_ply = j.value("asset_ply", defaults.asset_ply);
    c.bbox = j.value("bbox", defaults.bbox);
    c.cameras = j.value("cameras", defaults.cameras);
    c.masks_dir = j.value("masks_dir", defaults.masks_dir);
    c.ref_image = j.value("ref_image", defaults.ref_image);
    c.scores_csv = j.value("scores_csv", defaults.scores_csv);
    c.tokens_dir = j.value("tokens_dir", defaults.tokens_dir);
    c.workdir = j.value("workdir", defaults.workdir);
    c.mode = j.value("mode", defaults.mode);
    c.iterations = j.value("iterations", defaults.iterations);
    c.key_views = j.value("key_views", defaults.key_views);
    c.patch = j.value("patch", defaults.patch);
    c.similarity_patch = j.value("similarity_patch", defaults.similarity_patch);
    c.weighting = j.value("weighting", defaults.weighting);
    c.lambda_mae = j.value("lambda_mae", defaults.lambda_mae);
    c.lambda_perceptual = j.value("lambda_perceptual", defaults.lambda_perceptual);
    c.epochs = j.value("epochs", defaults.epochs);
    c.lr = j.value("lr", defaults.lr);
    c.seed = j.value("seed", defaults.seed);
    c.workers = j.value("workers", defaults.workers);
    c.vote_fraction = j.value("vote_fraction", defaults.vote_fraction);
    c.orbit_views = j.value("orbit_views", defaults.orbit_views);
    c.render_size = j.value("render_size", defaults.render_size);
    c.background = j.value("background", defaults.background);
    c.prompt = j.value("prompt", defaults.prompt);
    c.negative_prompt = j.value("negative_prompt", defaults.negative_prompt);
    c.translator_timeout = j.value("translator_timeout", defaults.translator_timeout);
}

inline PipelineConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw FormatError("config " + path + ": " + e.what());
    }
    return j.get<PipelineConfig>();
}

namespace detail {

inline std::string sha256_hex(const unsigned char* digest, unsigned len) {
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

inline std::string sha256_string(const std::string& text) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx, text.data(), text.size()) != 1 ||
        EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
        EVP_MD_CTX_free(ctx);
        throw IoError("sha256 failure");
    }
    EVP_MD_CTX_free(ctx);
    return sha256_hex(digest, len);
}

inline std::string sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for hashing: " + path);
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
        EVP_MD_CTX_free(ctx);
        throw IoError("sha256 failure");
    }
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        const std::streamsize got = in.gcount();
        if (got > 0 && EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(got)) != 1) {
            EVP_MD_CTX_free(ctx);
            throw IoError("sha256 failure");
        }
    }
    if (EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
        EVP_MD_CTX_free(ctx);
        throw IoError("sha256 failure");
    }
    EVP_MD_CTX_free(ctx);
    return sha256_hex(digest, len);
}

/// Hash of every config field except workdir, so relocating a workdir does
/// not invalidate its manifests.
inline std::string config_fingerprint(const PipelineConfig& config) {
    nlohmann::json j = config;
    j.erase("workdir");
    return sha256_string(j.dump());
}

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        out << text;
        if (!out) throw IoError("failed writing " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

/// Exclusive per-workdir lock, held for the duration of one command.
class WorkdirLock {
public:
    explicit WorkdirLock(const std::filesystem::path& workdir)
        : path_(workdir / ".lock") {
        std::error_code ec;
        std::filesystem::create_directories(workdir, ec);
        if (!std::filesystem::create_directory(path_, ec) || ec)
            throw PipelineError("another pipeline instance holds " + path_.string() +
                                " (remove it if stale)");
    }
    ~WorkdirLock() {
        std::error_code ec;
        std::filesystem::remove(path_, ec);
    }
    WorkdirLock(const WorkdirLock&) = delete;
    WorkdirLock& operator=(const WorkdirLock&) = delete;

private:
    std::filesystem::path path_;
};

using PathPairs = std::vector<std::pair<std::string, std::string>>;  // record key -> file

inline std::filesystem::path manifest_path(const PipelineConfig& config,
                                           const std::string& stage) {
    return std::filesystem::path(config.workdir) / ("manifest_" + stage + ".json");
}

/// True when the stage's manifest matches the current config fingerprint and
/// every recorded input and output file still hashes to the recorded value.
inline bool stage_up_to_date(const PipelineConfig& config, const std::string& stage,
                             const std::string& fingerprint, const PathPairs& inputs) {
    const auto mpath = manifest_path(config, stage);
    std::ifstream in(mpath);
    if (!in) return false;
    nlohmann::json m;
    try {
        in >> m;
    } catch (const std::exception&) {
        return false;
    }
    if (m.value("status", "") != "ok") return false;
    if (m.value("config_hash", "") != fingerprint) return false;
    const auto recorded = m.value("inputs", nlohmann::json::object());
    if (recorded.size() != inputs.size()) return false;
    for (const auto& [key, file] : inputs) {
        if (!recorded.contains(key)) return false;
        try {
            if (recorded[key].get<std::string>() != sha256_file(file)) return false;
        } catch (const Error&) {
            return false;
        }
    }
    const nlohmann::json outputs = m.value("outputs", nlohmann::json::object());
    for (const auto& [rel, hash] : outputs.items()) {
        try {
            if (sha256_file((std::filesystem::path(config.workdir) / rel).string()) !=
                hash.get<std::string>())
                return false;
        } catch (const Error&) {
            return false;
        }
    }
    return true;
}

inline void write_manifest(const PipelineConfig& config, const std::string& stage,
                           const std::string& fingerprint, const PathPairs& inputs,
                           const std::vector<std::string>& output_rels) {
    nlohmann::json m;
    m["stage"] = stage;
    m["status"] = "ok";
    m["config_hash"] = fingerprint;
    m["inputs"] = nlohmann::json::object();
    for (const auto& [key, file] : inputs) m["inputs"][key] = sha256_file(file);
    m["outputs"] = nlohmann::json::object();
    for (const auto& rel : output_rels)
        m["outputs"][rel] =
            sha256_file((std::filesystem::path(config.workdir) / rel).string());
    write_text_atomic(manifest_path(config, stage), m.dump(2) + "\n");
}

inline void write_failed_manifest(const PipelineConfig& config, const std::string& stage,
                                  const std::string& fingerprint, const std::string& error) {
    nlohmann::json m;
    m["stage"] = stage;
    m["status"] = "failed";
    m["config_hash"] = fingerprint;
    m["error"] = error;
    try {
        write_text_atomic(manifest_path(config, stage), m.dump(2) + "\n");
    } catch (const std::exception&) {
    }
}

/// Runs `body` (which returns the produced workdir-relative paths) unless the
/// stage is already up to date. Failures are recorded before rethrowing.
template <typename Body>
bool run_stage(const PipelineConfig& config, const std::string& stage,
               const PathPairs& inputs, Body&& body) {
    const std::string fingerprint = config_fingerprint(config);
    if (stage_up_to_date(config, stage, fingerprint, inputs)) return false;
    try {
        const std::vector<std::string> outputs = body();
        write_manifest(config, stage, fingerprint, inputs, outputs);
        return true;
    } catch (const std::exception& e) {
        write_failed_manifest(config, stage, fingerprint, e.what());
        throw;
    }
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return j;
}

inline std::vector<std::size_t> load_inserted(const PipelineConfig& config,
                                              std::string* ground_source = nullptr) {
    const auto j = read_json(std::filesystem::path(config.workdir) / "inserted.json");
    if (ground_source) *ground_source = j.value("ground_source", "");
    return j.at("inserted").get<std::vector<std::size_t>>();
}

inline bool stage_integrate(const PipelineConfig& config) {
    PathPairs inputs{{config.source_ply, config.source_ply},
                     {config.asset_ply, config.asset_ply}};
    ViewSet views;
    if (config.mode == "add") {
        inputs.emplace_back(config.bbox, config.bbox);
    } else {
        inputs.emplace_back(config.cameras, config.cameras);
        views = load_cameras(config.cameras);
        for (const auto& v : views) {
            const auto mask = std::filesystem::path(config.masks_dir) / (v.id + ".png");
            inputs.emplace_back(config.masks_dir + "/" + v.id + ".png", mask.string());
            const auto ground =
                std::filesystem::path(config.masks_dir) / (v.id + "_ground.png");
            if (std::filesystem::exists(ground))
                inputs.emplace_back(config.masks_dir + "/" + v.id + "_ground.png",
                                    ground.string());
        }
    }

    return run_stage(config, "integrate", inputs, [&]() -> std::vector<std::string> {
        const SplatScene source = load_ply(config.source_ply);
        const SplatScene asset = load_ply(config.asset_ply);
        IntegrateResult result;
        if (config.mode == "add") {
            result = integrate_add(source, asset, load_bbox(config.bbox));
        } else {
            ReplaceInputs in;
            in.views = views;
            std::size_t grounds = 0;
            for (const auto& v : in.views) {
                in.masks.push_back(read_png_mask(
                    (std::filesystem::path(config.masks_dir) / (v.id + ".png")).string()));
                const auto ground =
                    std::filesystem::path(config.masks_dir) / (v.id + "_ground.png");
                if (std::filesystem::exists(ground)) {
                    in.ground_masks.push_back(read_png_mask(ground.string()));
                    ++grounds;
                }
            }
            if (grounds != 0 && grounds != in.views.size())
                throw InputError("ground masks must cover all views or none");
            in.vote_fraction = config.vote_fraction;
            in.workers = config.workers;
            result = integrate_replace(source, asset, in);
        }
        save_ply(result.scene, (std::filesystem::path(config.workdir) / "integrated.ply").string());
        nlohmann::json j;
        j["inserted"] = result.inserted;
        j["ground_source"] = result.ground_source;
        write_text_atomic(std::filesystem::path(config.workdir) / "inserted.json",
                          j.dump(2) + "\n");
        return {"integrated.ply", "inserted.json"};
    });
}

inline bool stage_render(const PipelineConfig& config) {
    const std::filesystem::path wd(config.workdir);
    PathPairs inputs{{"integrated.ply", (wd / "integrated.ply").string()},
                     {"inserted.json", (wd / "inserted.json").string()}};
    if (!config.cameras.empty()) inputs.emplace_back(config.cameras, config.cameras);

    return run_stage(config, "render", inputs, [&]() -> std::vector<std::string> {
        SplatScene scene = load_ply((wd / "integrated.ply").string());
        scene.background_color =
            Vec3(config.background[0], config.background[1], config.background[2]);
        const std::vector<std::size_t> inserted = load_inserted(config);

        ViewSet views;
        if (!config.cameras.empty()) {
            views = load_cameras(config.cameras);
        } else {
            Vec3 target = Vec3::Zero();
            for (const auto& s : scene.splats) target += s.position.cast<double>();
            if (!scene.splats.empty()) target /= static_cast<double>(scene.splats.size());
            double radius = 0;
            for (const auto& s : scene.splats)
                radius = std::max(radius, (s.position.cast<double>() - target).norm());
            radius = std::max(radius, 0.4);
            views = make_orbit_views(config.orbit_views, target, 2.5 * radius, 0.7 * radius,
                                     config.render_size, 1.1 * config.render_size);
        }

        std::filesystem::create_directories(wd / "renders");
        save_cameras(views, (wd / "renders" / "cameras.json").string());
        std::vector<std::string> outputs{"renders/cameras.json"};

        RenderOptions ropts;
        ropts.workers = config.workers;
        for (const auto& view : views) {
            const RenderedView rv = render(scene, view, &inserted, ropts);
            const Image rgb = round_to_float32(rv.rgb);
            write_frgb(rgb, (wd / "renders" / (view.id + ".frgb")).string());
            write_png_rgb(rgb, (wd / "renders" / (view.id + ".png")).string());
            write_depth(rv.depth, (wd / "renders" / (view.id + "_depth.dpth")).string());
            write_png_mask(*rv.subset_mask,
                           (wd / "renders" / (view.id + "_mask.png")).string());
            outputs.push_back("renders/" + view.id + ".frgb");
            outputs.push_back("renders/" + view.id + ".png");
            outputs.push_back("renders/" + view.id + "_depth.dpth");
            outputs.push_back("renders/" + view.id + "_mask.png");
        }
        return outputs;
    });
}

inline bool stage_select(const PipelineConfig& config) {
    if (config.iterations < 1)
        throw InputError("selection needs iterations >= 1");
    const std::filesystem::path wd(config.workdir);
    const ViewSet views = load_cameras((wd / "renders" / "cameras.json").string());

    PathPairs inputs{{"renders/cameras.json", (wd / "renders" / "cameras.json").string()},
                     {config.ref_image, config.ref_image}};
    for (const auto& v : views) {
        inputs.emplace_back("renders/" + v.id + ".png",
                            (wd / "renders" / (v.id + ".png")).string());
        inputs.emplace_back("renders/" + v.id + "_mask.png",
                            (wd / "renders" / (v.id + "_mask.png")).string());
    }
    if (!config.scores_csv.empty())
        inputs.emplace_back(config.scores_csv, config.scores_csv);

    return run_stage(config, "select", inputs, [&]() -> std::vector<std::string> {
        // leftover handshake files from an interrupted run could be mistaken
        // for fresh translator output, so the exchange starts from scratch;
        // translators must therefore attach after the stage begins
        std::filesystem::remove_all(wd / "select");

        ImageEntry ref;
        ref.id = "ref";
        ref.image = read_png_rgb(config.ref_image);

        ImageSet renders;
        for (const auto& v : views) {
            ImageEntry e;
            e.id = v.id;
            e.image = read_png_rgb((wd / "renders" / (v.id + ".png")).string());
            e.fg_mask = read_png_mask((wd / "renders" / (v.id + "_mask.png")).string());
            renders.entries.push_back(std::move(e));
        }

        TranslatorProtocol proto;
        proto.root = (wd / "select").string();
        proto.timeout_seconds = config.translator_timeout;
        IterationConfig ic;
        ic.prompt = config.prompt;
        ic.negative_prompt = config.negative_prompt;
        ic.iterations = config.iterations;
        ic.workers = config.workers;

        ImageSet train;
        if (!config.scores_csv.empty()) {
            train = run_iterations(ref, renders, proto, ic,
                                   ScoreTableBackend(config.scores_csv));
        } else {
            train = run_iterations(ref, renders, proto, ic,
                                   PatchNccBackend(config.similarity_patch));
        }

        std::filesystem::create_directories(wd / "select" / "train");
        std::vector<std::string> outputs;
        nlohmann::json ids = nlohmann::json::array();
        for (const auto& e : train.entries) {
            write_png_rgb(e.image, (wd / "select" / "train" / (e.id + ".png")).string());
            outputs.push_back("select/train/" + e.id + ".png");
            ids.push_back(e.id);
        }
        nlohmann::json j;
        j["train_ids"] = ids;
        write_text_atomic(wd / "select" / "train.json", j.dump(2) + "\n");
        outputs.push_back("select/train.json");
        return outputs;
    });
}

/// Latest translator output for a view: the highest iteration that produced
/// one (views chosen in round t are never re-translated afterwards).
inline std::filesystem::path latest_translation(const std::filesystem::path& wd,
                                                const std::string& id, int iterations) {
    for (int t = iterations; t >= 1; --t) {
        const auto p =
            wd / "select" / ("iter_" + std::to_string(t)) / "translated" / (id + ".png");
        if (std::filesystem::exists(p)) return p;
    }
    throw PipelineError("no translated image found for view " + id);
}

inline bool stage_harmonize(const PipelineConfig& config) {
    const std::filesystem::path wd(config.workdir);
    const ViewSet views = load_cameras((wd / "renders" / "cameras.json").string());

    PathPairs inputs{{"renders/cameras.json", (wd / "renders" / "cameras.json").string()}};
    std::vector<std::string> candidate_files;
    for (const auto& v : views) {
        std::filesystem::path cand;
        if (config.iterations > 0)
            cand = latest_translation(wd, v.id, config.iterations);
        else
            cand = wd / "renders" / (v.id + ".frgb");
        candidate_files.push_back(cand.string());
        // manifests must not mention the workdir by name, so in-tree files
        // are keyed by their relative path
        inputs.emplace_back(std::filesystem::relative(cand, wd).generic_string(),
                            cand.string());
        inputs.emplace_back("renders/" + v.id + "_mask.png",
                            (wd / "renders" / (v.id + "_mask.png")).string());
        if (!config.tokens_dir.empty())
            inputs.emplace_back(config.tokens_dir + "/" + v.id + ".tokg",
                                (std::filesystem::path(config.tokens_dir) / (v.id + ".tokg"))
                                    .string());
    }

    return run_stage(config, "harmonize", inputs, [&]() -> std::vector<std::string> {
        std::vector<Image> candidates;
        std::vector<ImageMask> masks;
        for (std::size_t i = 0; i < views.size(); ++i) {
            if (config.iterations > 0)
                candidates.push_back(read_png_rgb(candidate_files[i]));
            else
                candidates.push_back(read_frgb(candidate_files[i]));
            masks.push_back(
                read_png_mask((wd / "renders" / (views[i].id + "_mask.png")).string()));
        }

        std::filesystem::create_directories(wd / "harmonize");
        std::vector<std::string> outputs;
        const auto emit = [&](std::size_t i, const Image& img) {
            const Image out = round_to_float32(img);
            write_frgb(out, (wd / "harmonize" / (views[i].id + ".frgb")).string());
            write_png_rgb(out, (wd / "harmonize" / (views[i].id + ".png")).string());
            outputs.push_back("harmonize/" + views[i].id + ".frgb");
            outputs.push_back("harmonize/" + views[i].id + ".png");
        };

        bool any_foreground = false;
        for (const auto& m : masks)
            if (m.count() > 0) any_foreground = true;
        if (!any_foreground) {
            // nothing marked editable in any view, so there is nothing to
            // harmonize and the candidates pass through unchanged
            for (std::size_t i = 0; i < views.size(); ++i) emit(i, candidates[i]);
            return outputs;
        }

        std::vector<TokenGrid> grids;
        for (std::size_t i = 0; i < views.size(); ++i) {
            if (!config.tokens_dir.empty()) {
                TokenGrid g = load_tokens(
                    (std::filesystem::path(config.tokens_dir) / (views[i].id + ".tokg"))
                        .string());
                g.view_id = views[i].id;
                grids.push_back(std::move(g));
            } else {
                TokenGrid g = tokenize(candidates[i], config.patch, &masks[i]);
                g.view_id = views[i].id;
                grids.push_back(std::move(g));
            }
        }

        const std::size_t k =
            std::min<std::size_t>(static_cast<std::size_t>(config.key_views), views.size());
        const KeyViewSet keys = select_key_views(views, masks, k);

        ReplaceOptions ropts;
        ropts.inverse_distance = config.weighting == "inverse";
        ropts.workers = config.workers;
        const std::vector<TokenGrid> replaced = replace_tokens(grids, views, keys, ropts);

        for (std::size_t i = 0; i < views.size(); ++i) {
            Image out = candidates[i];
            const Image detok = detokenize(replaced[i], 3);
            const int stride = replaced[i].stride;
            for (int ty = 0; ty < replaced[i].height; ++ty)
                for (int tx = 0; tx < replaced[i].width; ++tx) {
                    const double* before = grids[i].token(ty, tx);
                    const double* after = replaced[i].token(ty, tx);
                    if (std::memcmp(before, after,
                                    sizeof(double) * static_cast<std::size_t>(
                                                         replaced[i].dim)) == 0)
                        continue;  // untouched tokens keep their original pixels
                    for (int dy = 0; dy < stride; ++dy)
                        for (int dx = 0; dx < stride; ++dx)
                            for (int ch = 0; ch < 3; ++ch)
                                out.at(ty * stride + dy, tx * stride + dx, ch) =
                                    detok.at(ty * stride + dy, tx * stride + dx, ch);
                }
            emit(i, out);
        }
        return outputs;
    });
}

inline bool stage_finetune(const PipelineConfig& config) {
    const std::filesystem::path wd(config.workdir);
    const ViewSet views = load_cameras((wd / "renders" / "cameras.json").string());

    PathPairs inputs{{"integrated.ply", (wd / "integrated.ply").string()},
                     {"inserted.json", (wd / "inserted.json").string()},
                     {"renders/cameras.json", (wd / "renders" / "cameras.json").string()}};
    for (const auto& v : views)
        inputs.emplace_back("harmonize/" + v.id + ".frgb",
                            (wd / "harmonize" / (v.id + ".frgb")).string());

    return run_stage(config, "finetune", inputs, [&]() -> std::vector<std::string> {
        SplatScene scene = load_ply((wd / "integrated.ply").string());
        scene.background_color =
            Vec3(config.background[0], config.background[1], config.background[2]);
        const std::vector<std::size_t> editable = load_inserted(config);
        std::vector<Image> guidance;
        for (const auto& v : views)
            guidance.push_back(read_frgb((wd / "harmonize" / (v.id + ".frgb")).string()));

        FinetuneOptions opts;
        opts.loss.lambda_mae = config.lambda_mae;
        opts.loss.lambda_perceptual = config.lambda_perceptual;
        opts.lr = config.lr;
        opts.epochs = config.epochs;
        opts.seed = config.seed;
        opts.workers = config.workers;
        opts.round_render_to_f32 = true;

        const FinetuneResult result = finetune(scene, views, guidance, editable, opts);
        save_ply(result.scene, (wd / "finetuned.ply").string());
        save_loss_log(result.log, (wd / "loss_log.csv").string());
        if (result.diverged)
            throw PipelineError(
                "fine-tuning diverged; finetuned.ply holds the last finite-loss scene");
        return {"finetuned.ply", "loss_log.csv"};
    });
}

} // namespace detail

/// Each command validates the config, takes the workdir lock, and skips work
/// that an existing manifest proves is already done.

inline bool cmd_integrate(const PipelineConfig& config) {
    config.validate();
    detail::WorkdirLock lock(config.workdir);
    return detail::stage_integrate(config);
}

inline bool cmd_render(const PipelineConfig& config) {
    config.validate();
    detail::WorkdirLock lock(config.workdir);
    return detail::stage_render(config);
}

inline bool cmd_select(const PipelineConfig& config) {
    config.validate();
    detail::WorkdirLock lock(config.workdir);
    return detail::stage_select(config);
}

inline bool cmd_harmonize(const PipelineConfig& config) {
    config.validate();
    detail::WorkdirLock lock(config.workdir);
    return detail::stage_harmonize(config);
}

inline bool cmd_finetune(const PipelineConfig& config) {
    config.validate();
    detail::WorkdirLock lock(config.workdir);
    return detail::stage_finetune(config);
}

/// integrate -> render -> select (when iterations > 0) -> harmonize ->
/// finetune, with per-stage manifests making reruns no-ops.
inline bool cmd_run(const PipelineConfig& config) {
    config.validate();
    detail::WorkdirLock lock(config.workdir);
    bool ran = false;
    ran |= detail::stage_integrate(config);
    ran |= detail::stage_render(config);
    if (config.iterations > 0) ran |= detail::stage_select(config);
    ran |= detail::stage_harmonize(config);
    ran |= detail::stage_finetune(config);
    return ran;
}

} // namespace splatedit

#endif
