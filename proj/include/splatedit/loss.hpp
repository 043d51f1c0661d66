#ifndef SPLATEDIT_LOSS_HPP
#define SPLATEDIT_LOSS_HPP

#include <cmath>
#include <cstddef>
#include <vector>

#include "splatedit/common.hpp"
#include "splatedit/image.hpp"

namespace splatedit {

enum class PerceptualKind {
    builtin_dssim,
    none,
};

/// Weights for the guidance loss: lambda_mae * mean|r - g| plus
/// lambda_perceptual * mean(1 - SSIM(r, g)).
struct LossConfig {
    double lambda_mae = 1.0;
    double lambda_perceptual = 0.2;
    PerceptualKind perceptual_kind = PerceptualKind::builtin_dssim;

    void validate() const {
        if (!(std::isfinite(lambda_mae) && lambda_mae >= 0.0))
            throw InputError("lambda_mae must be finite and non-negative");
        if (!(std::isfinite(lambda_perceptual) && lambda_perceptual >= 0.0))
            throw InputError("lambda_perceptual must be finite and non-negative");
        const double effective =
            perceptual_kind == PerceptualKind::none ? 0.0 : lambda_perceptual;
        if (lambda_mae == 0.0 && effective == 0.0)
            throw InputError("loss weights are all zero");
    }
};

struct LossResult {
    double loss = 0;
    double mae = 0;
    double perceptual = 0;
    Image grad;  // d loss / d render, H x W x 3
};

namespace detail {

inline const std::vector<double>& ssim_kernel() {
    static const std::vector<double> kernel = [] {
        std::vector<double> k(11);
        const double sigma = 1.5;
        double sum = 0;
        for (int i = 0; i < 11; ++i) {
            const double d = i - 5;
            k[static_cast<std::size_t>(i)] = std::exp(-(d * d) / (2.0 * sigma * sigma));
            sum += k[static_cast<std::size_t>(i)];
        }
        for (auto& v : k) v /= sum;
        return k;
    }();
    return kernel;
}

/// Separable 11-tap Gaussian with zero padding, same output size. The kernel
/// is symmetric, so this operator is its own adjoint.
inline void ssim_blur(const std::vector<double>& in, int h, int w, std::vector<double>& tmp,
                      std::vector<double>& out) {
    const auto& k = ssim_kernel();
    tmp.resize(in.size());
    out.resize(in.size());
    for (int y = 0; y < h; ++y) {
        const double* row = in.data() + static_cast<std::size_t>(y) * w;
        double* trow = tmp.data() + static_cast<std::size_t>(y) * w;
        for (int x = 0; x < w; ++x) {
            const int t0 = std::max(-5, -x), t1 = std::min(5, w - 1 - x);
            double acc = 0;
            for (int t = t0; t <= t1; ++t) acc += k[static_cast<std::size_t>(t + 5)] * row[x + t];
            trow[x] = acc;
        }
    }
    for (int y = 0; y < h; ++y) {
        const int t0 = std::max(-5, -y), t1 = std::min(5, h - 1 - y);
        double* orow = out.data() + static_cast<std::size_t>(y) * w;
        for (int x = 0; x < w; ++x) {
            double acc = 0;
            for (int t = t0; t <= t1; ++t)
                acc += k[static_cast<std::size_t>(t + 5)] *
                       tmp[static_cast<std::size_t>(y + t) * w + x];
            orow[x] = acc;
        }
    }
}

} // namespace detail

/// Loss and its exact gradient with respect to the rendered image. The SSIM
/// term uses 11x11 Gaussian windows (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2,
/// computed per channel on zero-padded same-size convolutions. When the two
/// images are bitwise equal the loss is exactly 0 and every gradient entry
/// compares equal to 0.0.
inline LossResult loss_and_grad(const Image& render, const Image& guidance,
                                const LossConfig& config = {}) {
    config.validate();
    if (render.channels != 3 || guidance.channels != 3)
        throw InputError("loss expects 3-channel images");
    if (!render.same_shape(guidance))
        throw InputError("render and guidance dimensions do not match");

    const int h = render.height, w = render.width;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const double n = static_cast<double>(plane * 3);

    LossResult res;
    res.grad = Image(h, w, 3);

    double mae_sum = 0;
    for (std::size_t i = 0; i < plane * 3; ++i) {
        const double d = render.data[i] - guidance.data[i];
        mae_sum += std::abs(d);
        double s = 0.0;
        if (d > 0.0) s = 1.0;
        else if (d < 0.0) s = -1.0;
        res.grad.data[i] = config.lambda_mae * s / n;
    }
    res.mae = mae_sum / n;

    if (config.perceptual_kind == PerceptualKind::builtin_dssim &&
        config.lambda_perceptual > 0.0) {
        const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
        const double grad_scale = -config.lambda_perceptual / n;
        std::vector<double> x(plane), y(plane), xx(plane), yy(plane), xy(plane);
        std::vector<double> ux, uy, vx, vy, wxy, tmp;
        std::vector<double> fu(plane), fv(plane), fw(plane), bu, bv, bw;
        double dssim_sum = 0;

        for (int c = 0; c < 3; ++c) {
            for (std::size_t i = 0; i < plane; ++i) {
                x[i] = render.data[i * 3 + static_cast<std::size_t>(c)];
                y[i] = guidance.data[i * 3 + static_cast<std::size_t>(c)];
                xx[i] = x[i] * x[i];
                yy[i] = y[i] * y[i];
                xy[i] = x[i] * y[i];
            }
            detail::ssim_blur(x, h, w, tmp, ux);
            detail::ssim_blur(y, h, w, tmp, uy);
            detail::ssim_blur(xx, h, w, tmp, vx);
            detail::ssim_blur(yy, h, w, tmp, vy);
            detail::ssim_blur(xy, h, w, tmp, wxy);

            for (std::size_t i = 0; i < plane; ++i) {
                const double sxy = wxy[i] - ux[i] * uy[i];
                const double sx2 = vx[i] - ux[i] * ux[i];
                const double sy2 = vy[i] - uy[i] * uy[i];
                const double a1 = 2.0 * ux[i] * uy[i] + c1;
                const double a2 = 2.0 * sxy + c2;
                const double b1 = ux[i] * ux[i] + uy[i] * uy[i] + c1;
                const double b2 = sx2 + sy2 + c2;
                const double den = b1 * b2;
                const double s = (a1 * a2) / den;
                dssim_sum += 1.0 - s;

                // written so that at render == guidance the adjoint terms
                // cancel exactly: a2/b2 is then 1.0 and fw equals -2 * fv
                const double ratio = grad_scale * (a1 / den);
                fu[i] = grad_scale *
                        ((2.0 * uy[i] * (a2 - a1) - 2.0 * ux[i] * s * (b2 - b1)) / den);
                fv[i] = -ratio * (a2 / b2);
                fw[i] = 2.0 * ratio;
            }
            detail::ssim_blur(fu, h, w, tmp, bu);
            detail::ssim_blur(fv, h, w, tmp, bv);
            detail::ssim_blur(fw, h, w, tmp, bw);
            for (std::size_t i = 0; i < plane; ++i)
                res.grad.data[i * 3 + static_cast<std::size_t>(c)] +=
                    bu[i] + (2.0 * x[i] * bv[i] + y[i] * bw[i]);
        }
        res.perceptual = dssim_sum / n;
    }

    res.loss = config.lambda_mae * res.mae + config.lambda_perceptual * res.perceptual;
    return res;
}

} // namespace splatedit

#endif
