#ifndef SPLATEDIT_FINETUNE_HPP
#define SPLATEDIT_FINETUNE_HPP

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "splatedit/adam.hpp"
#include "splatedit/loss.hpp"
#include "splatedit/render.hpp"

namespace splatedit {

struct FinetuneOptions {
    LossConfig loss;
    double lr = 0.001;
    int epochs = 10;
    std::uint64_t seed = 0;
    int workers = 1;
    /// Quantize each render through float32 before the loss, so in-process
    /// results match a pipeline that exchanges float32 image files.
    bool round_render_to_f32 = false;
};

struct LossLogEntry {
    int epoch = 0;
    std::string view_id;
    double loss = 0;
    double mae = 0;
    double perceptual = 0;
};

struct FinetuneResult {
    SplatScene scene;
    std::vector<LossLogEntry> log;
    bool diverged = false;
};

/// Fits the color and opacity of the editable splats to per-view guidance
/// images. Each epoch visits the views in a freshly shuffled order (seeded,
/// so runs are reproducible) and takes one Adam step per view. Colors are
/// kept in [0, 1] by projection after each step. Splats outside `editable`
/// are never touched. A non-finite loss aborts the loop and returns the
/// scene as of the last finite-loss step, flagged as diverged.
inline FinetuneResult finetune(const SplatScene& scene, const std::vector<CameraView>& views,
                               const std::vector<Image>& guidance,
                               const std::vector<std::size_t>& editable,
                               const FinetuneOptions& options = {}) {
    options.loss.validate();
    if (options.epochs < 1) throw InputError("epochs must be at least 1");
    if (!(std::isfinite(options.lr) && options.lr > 0.0))
        throw InputError("lr must be finite and positive");
    if (views.empty()) throw InputError("finetune needs at least one view");
    if (guidance.size() != views.size())
        throw InputError("need exactly one guidance image per view");
    for (std::size_t i = 0; i < views.size(); ++i) {
        views[i].validate();
        if (guidance[i].height != views[i].height || guidance[i].width != views[i].width ||
            guidance[i].channels != 3)
            throw InputError("guidance image does not match view " + views[i].id);
    }
    {
        std::vector<std::size_t> sorted(editable);
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
            throw InputError("editable indices contain duplicates");
        if (!sorted.empty() && sorted.back() >= scene.splats.size())
            throw InputError("editable index out of range");
    }

    FinetuneResult res;
    res.scene = scene;

    // parameter layout: [r, g, b, opacity_logit] per editable splat
    const std::size_t k = editable.size();
    std::vector<double> params(k * 4);
    for (std::size_t j = 0; j < k; ++j) {
        const GaussianSplat& s = res.scene.splats[editable[j]];
        const Eigen::Vector3f c = s.color();
        params[j * 4 + 0] = c.x();
        params[j * 4 + 1] = c.y();
        params[j * 4 + 2] = c.z();
        params[j * 4 + 3] = s.opacity_logit;
    }
    std::vector<double> written = params;
    std::vector<double> last_good = params;
    std::vector<double> grads(k * 4);

    const auto write_back = [&](const std::vector<double>& p) {
        for (std::size_t j = 0; j < k; ++j) {
            GaussianSplat& s = res.scene.splats[editable[j]];
            if (p[j * 4] != written[j * 4] || p[j * 4 + 1] != written[j * 4 + 1] ||
                p[j * 4 + 2] != written[j * 4 + 2])
                s.set_color(Eigen::Vector3f(static_cast<float>(p[j * 4]),
                                            static_cast<float>(p[j * 4 + 1]),
                                            static_cast<float>(p[j * 4 + 2])));
            if (p[j * 4 + 3] != written[j * 4 + 3])
                s.opacity_logit = static_cast<float>(p[j * 4 + 3]);
        }
        written = p;
    };

    AdamState adam;
    adam.lr = options.lr;
    RenderOptions ropts;
    ropts.workers = options.workers;

    std::mt19937_64 rng(options.seed);
    std::vector<std::size_t> order(views.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (int epoch = 1; epoch <= options.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (const std::size_t vi : order) {
            RenderedView rv = render(res.scene, views[vi], nullptr, ropts);
            if (options.round_render_to_f32)
                for (auto& px : rv.rgb.data) px = static_cast<double>(static_cast<float>(px));

            const LossResult lr = loss_and_grad(rv.rgb, guidance[vi], options.loss);
            res.log.push_back({epoch, views[vi].id, lr.loss, lr.mae, lr.perceptual});
            if (!std::isfinite(lr.loss)) {
                write_back(last_good);
                res.diverged = true;
                return res;
            }
            last_good = params;
            if (k == 0) continue;

            const SplatGradients sg = render_backward(res.scene, views[vi], lr.grad, ropts);
            for (std::size_t j = 0; j < k; ++j) {
                const std::size_t idx = editable[j];
                grads[j * 4 + 0] = sg.color[idx].x();
                grads[j * 4 + 1] = sg.color[idx].y();
                grads[j * 4 + 2] = sg.color[idx].z();
                grads[j * 4 + 3] = sg.opacity_logit[idx];
            }
            adam_step(adam, params, grads);
            for (std::size_t j = 0; j < k; ++j)
                for (int c = 0; c < 3; ++c)
                    params[j * 4 + static_cast<std::size_t>(c)] = std::clamp(
                        params[j * 4 + static_cast<std::size_t>(c)], 0.0, 1.0);
            write_back(params);
        }
    }
    return res;
}

/// Loss log as CSV: epoch, view_id, loss, mae, perceptual.
inline void save_loss_log(const std::vector<LossLogEntry>& log, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "epoch,view_id,loss,mae,perceptual\n";
    out.precision(17);
    for (const auto& e : log)
        out << e.epoch << "," << e.view_id << "," << e.loss << "," << e.mae << ","
            << e.perceptual << "\n";
    if (!out) throw IoError("failed writing " + path);
}

} // namespace splatedit

#endif
