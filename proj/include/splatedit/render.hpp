#ifndef SPLATEDIT_RENDER_HPP
#define SPLATEDIT_RENDER_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "splatedit/camera.hpp"
#include "splatedit/image.hpp"
#include "splatedit/parallel.hpp"
#include "splatedit/splat.hpp"

namespace splatedit {

/// Output of the rasterizer for one view. `depth` is the alpha-weighted mean
/// of contributing splat depths and is exactly 0 on pixels with no coverage.
struct RenderedView {
    Image rgb;    // H x W x 3
    Image depth;  // H x W x 1
    Image alpha;  // H x W x 1
    /// Pixels where the designated subset's accumulated alpha reaches 0.5.
    std::optional<ImageMask> subset_mask;
};

/// Per-splat gradients of a scalar loss through the rendered RGB.
struct SplatGradients {
    std::vector<Vec3> color;           // d loss / d color, per splat
    std::vector<double> opacity_logit; // d loss / d opacity_logit, per splat
};

struct RenderOptions {
    int workers = 1;
};

namespace detail {

/// Screen-space footprint of one splat: projected center, conic (inverse 2D
/// covariance), pixel bounds of the 3-sigma ellipse.
struct SplatFootprint {
    double u = 0, v = 0, depth = 0;
    double conic_a = 0, conic_b = 0, conic_c = 0;  // exponent = -0.5 (a dx^2 + 2 b dx dy + c dy^2)
    Vec3 color = Vec3::Zero();
    double opacity = 0;
    std::size_t index = 0;  // index into scene.splats
    bool in_subset = false;
    int x0 = 0, x1 = -1, y0 = 0, y1 = -1;

    bool covers(int x, int y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }

    /// Squared Mahalanobis distance of pixel (x, y) from the projected center.
    double mahalanobis2(double x, double y) const {
        const double dx = x - u, dy = y - v;
        return conic_a * dx * dx + 2.0 * conic_b * dx * dy + conic_c * dy * dy;
    }
};

/// Projects splats through the EWA approximation and returns footprints
/// sorted front to back (depth, then original index).
inline std::vector<SplatFootprint> project_splats(const SplatScene& scene,
                                                  const CameraView& camera,
                                                  const std::vector<std::uint8_t>* subset_flags) {
    std::vector<SplatFootprint> fps;
    fps.reserve(scene.splats.size());
    for (std::size_t i = 0; i < scene.splats.size(); ++i) {
        const GaussianSplat& s = scene.splats[i];
        const Vec3 pc = camera.rotation * s.position.cast<double>() + camera.translation;
        const double z = pc.z();
        if (z <= 1e-9) continue;  // behind the camera

        SplatFootprint fp;
        fp.index = i;
        fp.depth = z;
        fp.u = camera.fx * pc.x() / z + camera.cx;
        fp.v = camera.fy * pc.y() / z + camera.cy;

        // 2D covariance J Sigma_cam J^T
        Eigen::Matrix<double, 2, 3> jac;
        jac << camera.fx / z, 0, -camera.fx * pc.x() / (z * z),
               0, camera.fy / z, -camera.fy * pc.y() / (z * z);
        const Mat3 cov_cam = camera.rotation * s.covariance() * camera.rotation.transpose();
        const Eigen::Matrix2d cov2 = jac * cov_cam * jac.transpose();
        const double det = cov2(0, 0) * cov2(1, 1) - cov2(0, 1) * cov2(0, 1);
        if (!(det > 0) || !std::isfinite(det)) continue;
        fp.conic_a = cov2(1, 1) / det;
        fp.conic_b = -cov2(0, 1) / det;
        fp.conic_c = cov2(0, 0) / det;

        const double rx = 3.0 * std::sqrt(cov2(0, 0));
        const double ry = 3.0 * std::sqrt(cov2(1, 1));
        fp.x0 = std::max(0, static_cast<int>(std::ceil(fp.u - rx)));
        fp.x1 = std::min(camera.width - 1, static_cast<int>(std::floor(fp.u + rx)));
        fp.y0 = std::max(0, static_cast<int>(std::ceil(fp.v - ry)));
        fp.y1 = std::min(camera.height - 1, static_cast<int>(std::floor(fp.v + ry)));
        if (fp.x0 > fp.x1 || fp.y0 > fp.y1) continue;

        fp.color = s.color().cast<double>();
        fp.opacity = 1.0 / (1.0 + std::exp(-static_cast<double>(s.opacity_logit)));
        fp.in_subset = subset_flags && (*subset_flags)[i];
        fps.push_back(fp);
    }
    std::sort(fps.begin(), fps.end(), [](const SplatFootprint& a, const SplatFootprint& b) {
        if (a.depth != b.depth) return a.depth < b.depth;
        return a.index < b.index;
    });
    return fps;
}

inline std::vector<std::uint8_t> subset_to_flags(const SplatScene& scene,
                                                 const std::vector<std::size_t>& subset) {
    std::vector<std::uint8_t> flags(scene.splats.size(), 0);
    for (std::size_t idx : subset) {
        if (idx >= scene.splats.size()) throw InputError("subset index out of range");
        flags[idx] = 1;
    }
    return flags;
}

} // namespace detail

/// Rasterizes the scene: front-to-back alpha compositing of the projected
/// Gaussians, each truncated at its 3-sigma ellipse. When `subset` is given,
/// the result carries a mask of pixels the subset covers with accumulated
/// alpha >= 0.5.
inline RenderedView render(const SplatScene& scene, const CameraView& camera,
                           const std::vector<std::size_t>* subset = nullptr,
                           const RenderOptions& opts = {}) {
    camera.validate();
    const int w = camera.width, h = camera.height;
    RenderedView out;
    out.rgb = Image(h, w, 3);
    out.depth = Image(h, w, 1);
    out.alpha = Image(h, w, 1);
    if (subset) out.subset_mask = ImageMask(h, w);

    std::vector<std::uint8_t> flags;
    if (subset) flags = detail::subset_to_flags(scene, *subset);
    const auto fps = detail::project_splats(scene, camera, subset ? &flags : nullptr);

    parallel_chunks(static_cast<std::size_t>(h), opts.workers,
                    [&](int, std::size_t row_begin, std::size_t row_end) {
        std::vector<const detail::SplatFootprint*> row_fps;
        for (std::size_t yy = row_begin; yy < row_end; ++yy) {
            const int y = static_cast<int>(yy);
            row_fps.clear();
            for (const auto& fp : fps)
                if (y >= fp.y0 && y <= fp.y1) row_fps.push_back(&fp);
            for (int x = 0; x < w; ++x) {
                double transmit = 1.0;
                Vec3 color = Vec3::Zero();
                double alpha_acc = 0.0, depth_acc = 0.0, subset_acc = 0.0;
                for (const auto* fp : row_fps) {
                    if (x < fp->x0 || x > fp->x1) continue;
                    const double m2 = fp->mahalanobis2(x, y);
                    if (m2 > 9.0) continue;
                    const double a = fp->opacity * std::exp(-0.5 * m2);
                    const double wgt = transmit * a;
                    color += wgt * fp->color;
                    alpha_acc += wgt;
                    depth_acc += wgt * fp->depth;
                    if (fp->in_subset) subset_acc += wgt;
                    transmit *= 1.0 - a;
                }
                color += transmit * scene.background_color;
                for (int c = 0; c < 3; ++c) out.rgb.at(y, x, c) = color[c];
                out.alpha.at(y, x, 0) = alpha_acc;
                out.depth.at(y, x, 0) = alpha_acc > 0.0 ? depth_acc / alpha_acc : 0.0;
                if (out.subset_mask) out.subset_mask->set(y, x, subset_acc >= 0.5);
            }
        }
    });
    return out;
}

/// Exact gradients of sum(grad_rgb * rendered_rgb) with respect to per-splat
/// color and opacity_logit, under the same forward model (including the
/// 3-sigma truncation). Per-worker partials are reduced in worker order, so
/// results are deterministic for a fixed worker count.
inline SplatGradients render_backward(const SplatScene& scene, const CameraView& camera,
                                      const Image& grad_rgb, const RenderOptions& opts = {}) {
    camera.validate();
    if (grad_rgb.height != camera.height || grad_rgb.width != camera.width ||
        grad_rgb.channels != 3)
        throw InputError("grad_rgb dimensions do not match the camera image");
    if (!grad_rgb.all_finite()) throw InputError("grad_rgb contains non-finite values");

    const int w = camera.width, h = camera.height;
    const std::size_t n = scene.splats.size();
    const auto fps = detail::project_splats(scene, camera, nullptr);

    const int workers = std::max(1, opts.workers);
    const std::size_t nchunks =
        std::min<std::size_t>(static_cast<std::size_t>(workers), std::max<std::size_t>(1, h));
    std::vector<std::vector<double>> partial_color(nchunks);
    std::vector<std::vector<double>> partial_logit(nchunks);
    for (auto& p : partial_color) p.assign(n * 3, 0.0);
    for (auto& p : partial_logit) p.assign(n, 0.0);

    parallel_chunks(static_cast<std::size_t>(h), workers,
                    [&](int worker, std::size_t row_begin, std::size_t row_end) {
        auto& gcol = partial_color[static_cast<std::size_t>(worker)];
        auto& glog = partial_logit[static_cast<std::size_t>(worker)];
        std::vector<const detail::SplatFootprint*> row_fps;
        struct Hit {
            const detail::SplatFootprint* fp;
            double alpha;
            double gauss;
            double transmit;  // transmittance in front of this hit
        };
        std::vector<Hit> hits;
        for (std::size_t yy = row_begin; yy < row_end; ++yy) {
            const int y = static_cast<int>(yy);
            row_fps.clear();
            for (const auto& fp : fps)
                if (y >= fp.y0 && y <= fp.y1) row_fps.push_back(&fp);
            for (int x = 0; x < w; ++x) {
                hits.clear();
                double transmit = 1.0;
                for (const auto* fp : row_fps) {
                    if (x < fp->x0 || x > fp->x1) continue;
                    const double m2 = fp->mahalanobis2(x, y);
                    if (m2 > 9.0) continue;
                    const double g = std::exp(-0.5 * m2);
                    const double a = fp->opacity * g;
                    hits.push_back({fp, a, g, transmit});
                    transmit *= 1.0 - a;
                }
                if (hits.empty()) continue;
                const Vec3 gr(grad_rgb.at(y, x, 0), grad_rgb.at(y, x, 1), grad_rgb.at(y, x, 2));
                // Suffix composite: color seen behind hit k (background included).
                Vec3 behind = scene.background_color;
                for (std::size_t k = hits.size(); k-- > 0;) {
                    const Hit& hit = hits[k];
                    const std::size_t si = hit.fp->index;
                    const double wgt = hit.transmit * hit.alpha;
                    for (int c = 0; c < 3; ++c) gcol[si * 3 + c] += gr[c] * wgt;
                    const double dalpha = gr.dot(hit.transmit * (hit.fp->color - behind));
                    const double o = hit.fp->opacity;
                    glog[si] += dalpha * hit.gauss * o * (1.0 - o);
                    behind = hit.alpha * hit.fp->color + (1.0 - hit.alpha) * behind;
                }
            }
        }
    });

    SplatGradients grads;
    grads.color.assign(n, Vec3::Zero());
    grads.opacity_logit.assign(n, 0.0);
    for (std::size_t c = 0; c < nchunks; ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            grads.color[i] += Vec3(partial_color[c][i * 3], partial_color[c][i * 3 + 1],
                                   partial_color[c][i * 3 + 2]);
            grads.opacity_logit[i] += partial_logit[c][i];
        }
    }
    return grads;
}

} // namespace splatedit

#endif
