#ifndef SPLATEDIT_SPLAT_HPP
#define SPLATEDIT_SPLAT_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "splatedit/common.hpp"

namespace splatedit {

/// Zeroth-order spherical-harmonic basis constant. Diffuse color is stored on
/// disk as f_dc with color = 0.5 + SH0_C * f_dc.
inline constexpr float kSh0 = 0.28209479177f;

/// One anisotropic 3D Gaussian.
///
/// Scalar fields are kept in the exact pre-activation float32 form used on
/// disk, so an unedited splat serializes back bit-for-bit. Color is exposed
/// decoded (SH degree 0, clamped to [0,1]); setting it re-encodes f_dc.
struct GaussianSplat {
    Eigen::Vector3f position = Eigen::Vector3f::Zero();
    Eigen::Vector3f log_scale = Eigen::Vector3f::Zero();
    /// Unit quaternion, (w, x, y, z).
    Eigen::Vector4f rotation = Eigen::Vector4f(1.f, 0.f, 0.f, 0.f);
    float opacity_logit = 0.f;
    /// Raw degree-0 SH coefficients as stored in the PLY.
    Eigen::Vector3f f_dc = Eigen::Vector3f::Zero();
    /// Higher-band SH coefficients, preserved opaquely and never interpreted.
    std::vector<float> sh_rest;

    Eigen::Vector3f color() const {
        Eigen::Vector3f c = (0.5f + kSh0 * f_dc.array()).matrix();
        return c.cwiseMax(0.f).cwiseMin(1.f);
    }

    void set_color(const Eigen::Vector3f& c) {
        Eigen::Vector3f cc = c.cwiseMax(0.f).cwiseMin(1.f);
        f_dc = ((cc.array() - 0.5f) / kSh0).matrix();
    }

    float opacity() const { return 1.f / (1.f + std::exp(-opacity_logit)); }

    Eigen::Vector3f scale() const { return log_scale.array().exp().matrix(); }

    /// World-space rotation matrix of the splat frame.
    Mat3 rotation_matrix() const {
        const double w = rotation[0], x = rotation[1], y = rotation[2], z = rotation[3];
        Mat3 r;
        r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
             2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
             2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
        return r;
    }

    /// World-space 3x3 covariance R S S^T R^T, evaluated in double.
    Mat3 covariance() const {
        const Mat3 r = rotation_matrix();
        const Vec3 s = log_scale.cast<double>().array().exp();
        return r * s.cwiseProduct(s).asDiagonal() * r.transpose();
    }

    /// Normalizes the quaternion unless it is already within `tol` of unit
    /// length. Skipping the near-unit case keeps load->save->load bit-stable.
    void normalize_rotation(double tol = 1e-6) {
        const double n = rotation.cast<double>().norm();
        if (std::abs(n - 1.0) <= tol) return;
        if (!(n > 0.0) || !std::isfinite(n))
            throw NumericError("splat quaternion has zero or non-finite norm");
        rotation = (rotation.cast<double>() / n).cast<float>();
    }

    bool all_finite() const {
        return position.allFinite() && log_scale.allFinite() && rotation.allFinite() &&
               std::isfinite(opacity_logit) && f_dc.allFinite() &&
               std::all_of(sh_rest.begin(), sh_rest.end(),
                           [](float v) { return std::isfinite(v); });
    }
};

/// An ordered collection of Gaussians plus the compositing background.
/// Scenes are treated as immutable values after load; editing operations
/// return new scenes.
struct SplatScene {
    std::vector<GaussianSplat> splats;
    Vec3 background_color = Vec3::Zero();

    std::size_t size() const { return splats.size(); }
    bool empty() const { return splats.empty(); }
};

/// Concatenates b's splats after a's. Background comes from a.
inline SplatScene merge(const SplatScene& a, const SplatScene& b) {
    SplatScene out;
    out.background_color = a.background_color;
    out.splats.reserve(a.splats.size() + b.splats.size());
    out.splats.insert(out.splats.end(), a.splats.begin(), a.splats.end());
    out.splats.insert(out.splats.end(), b.splats.begin(), b.splats.end());
    return out;
}

} // namespace splatedit

#endif
