#ifndef SPLATEDIT_OBB_HPP
#define SPLATEDIT_OBB_HPP

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "splatedit/common.hpp"

namespace splatedit {

/// Box with arbitrary orthonormal axes. Column k of `axes` is the world
/// direction of local axis k (right, forward, up); `half_extents` are along
/// those columns.
struct OrientedBBox {
    Vec3 center = Vec3::Zero();
    Mat3 axes = Mat3::Identity();
    Vec3 half_extents = Vec3::Ones();

    void validate() const {
        if ((axes.transpose() * axes - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9)
            throw InputError("bbox axes are not orthonormal");
        if (std::abs(axes.determinant() - 1.0) > 1e-9)
            throw InputError("bbox axes are not right-handed");
        if (!(half_extents.minCoeff() > 0)) throw InputError("bbox half_extents must be > 0");
    }

    Vec3 to_local(const Vec3& world) const { return axes.transpose() * (world - center); }
    Vec3 to_world(const Vec3& local) const { return center + axes * local; }

    bool contains(const Vec3& world, double slack = 0.0) const {
        const Vec3 l = to_local(world).cwiseAbs();
        return (l - half_extents * (1.0 + slack)).maxCoeff() <= 0.0;
    }
};

namespace detail {

/// Linear-interpolation quantile at rank position (n-1)*p.
inline double quantile(std::vector<double> values, double p) {
    if (values.empty()) throw InputError("quantile of empty range");
    std::sort(values.begin(), values.end());
    const double pos = (static_cast<double>(values.size()) - 1.0) * p;
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[hi] * frac;
}

inline Vec3 centroid(const std::vector<Vec3>& pts) {
    Vec3 c = Vec3::Zero();
    for (const auto& p : pts) c += p;
    return c / static_cast<double>(pts.size());
}

inline Mat3 covariance_of(const std::vector<Vec3>& pts) {
    const Vec3 mean = centroid(pts);
    Mat3 cov = Mat3::Zero();
    for (const auto& p : pts) {
        const Vec3 d = p - mean;
        cov += d * d.transpose();
    }
    return cov / static_cast<double>(pts.size());
}

/// Sign fixed by the skew of the projections; symmetric clouds fall back to
/// making the largest-magnitude component positive.
inline Vec3 orient_by_skew(const Vec3& axis, const std::vector<Vec3>& pts) {
    double mean = 0;
    for (const auto& p : pts) mean += axis.dot(p);
    mean /= static_cast<double>(pts.size());
    double m2 = 0, m3 = 0;
    for (const auto& p : pts) {
        const double d = axis.dot(p) - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= static_cast<double>(pts.size());
    m3 /= static_cast<double>(pts.size());
    const double scale3 = std::pow(std::sqrt(std::max(m2, 0.0)), 3);
    if (scale3 > 0 && std::abs(m3) > 1e-12 * scale3) return m3 > 0 ? axis : Vec3(-axis);
    int imax = 0;
    axis.cwiseAbs().maxCoeff(&imax);
    return axis[imax] >= 0 ? axis : Vec3(-axis);
}

/// Box around `object` given a fixed up direction: forward is the dominant
/// PCA axis of the points projected into the plane orthogonal to up, and the
/// extents trim to the central 98% per axis (1st to 99th percentile).
inline OrientedBBox box_from_up(const std::vector<Vec3>& object, const Vec3& up) {
    std::vector<Vec3> flat;
    flat.reserve(object.size());
    for (const auto& p : object) flat.push_back(p - up.dot(p) * up);
    const Mat3 cov = covariance_of(flat);
    Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    if (es.info() != Eigen::Success) throw NumericError("eigendecomposition failed");
    // ascending eigenvalues; the in-plane spread must be non-degenerate
    const double total = covariance_of(object).trace();
    if (es.eigenvalues()(2) <= 1e-12 * std::max(1e-30, total))
        throw DegeneracyError("object cloud is degenerate (no in-plane extent)");
    Vec3 forward = es.eigenvectors().col(2);
    forward -= up.dot(forward) * up;
    if (forward.norm() <= 1e-9)
        throw DegeneracyError("object cloud is degenerate along the up axis");
    forward.normalize();
    forward = orient_by_skew(forward, object);
    const Vec3 right = forward.cross(up);

    OrientedBBox box;
    box.axes.col(0) = right;
    box.axes.col(1) = forward;
    box.axes.col(2) = up;

    Vec3 mid, half;
    for (int k = 0; k < 3; ++k) {
        std::vector<double> proj;
        proj.reserve(object.size());
        for (const auto& p : object) proj.push_back(box.axes.col(k).dot(p));
        const double lo = quantile(proj, 0.01);
        const double hi = quantile(proj, 0.99);
        mid[k] = 0.5 * (lo + hi);
        half[k] = 0.5 * (hi - lo);
    }
    if (!(half.minCoeff() > 0))
        throw DegeneracyError("object cloud is flat along a box axis");
    box.center = box.axes * mid;
    box.half_extents = half;
    box.validate();
    return box;
}

} // namespace detail

/// Box oriented by the object's own shape around a caller-supplied up
/// direction (for assets that come with no ground).
inline OrientedBBox pca_bbox_with_up(const std::vector<Vec3>& object, const Vec3& up_hint) {
    if (object.size() < 4) throw InputError("need at least 4 object points");
    if (up_hint.norm() <= 1e-9) throw InputError("up hint must be a nonzero vector");
    return detail::box_from_up(object, up_hint.normalized());
}

/// Box oriented by the scene: up is the normal of the ground cloud (smallest
/// PCA axis, pointing toward the object), forward the dominant in-plane axis
/// of the object cloud.
inline OrientedBBox pca_bbox(const std::vector<Vec3>& object,
                             const std::vector<Vec3>& ground) {
    if (object.size() < 4) throw InputError("need at least 4 object points");
    if (ground.size() < 3) throw InputError("need at least 3 ground points");

    const Mat3 gcov = detail::covariance_of(ground);
    Eigen::SelfAdjointEigenSolver<Mat3> es(gcov);
    if (es.info() != Eigen::Success) throw NumericError("eigendecomposition failed");
    // a plane needs two spread directions; collinear ground has no normal
    if (es.eigenvalues()(1) <= 1e-9 * std::max(1e-30, es.eigenvalues()(2)))
        throw DegeneracyError("ground points are collinear; plane normal undefined");
    Vec3 up = es.eigenvectors().col(0);

    const Vec3 toward_object = detail::centroid(object) - detail::centroid(ground);
    const double side = up.dot(toward_object);
    if (std::abs(side) > 1e-12) {
        if (side < 0) up = -up;
    } else {
        int imax = 0;
        up.cwiseAbs().maxCoeff(&imax);
        if (up[imax] < 0) up = -up;
    }
    return detail::box_from_up(object, up);
}

// bbox JSON: {center:[3], axes:[9 row-major], half_extents:[3]}

inline OrientedBBox load_bbox(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open bbox file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bbox file is not valid JSON: " + std::string(e.what()));
    }
    OrientedBBox box;
    try {
        const auto c = j.at("center");
        const auto a = j.at("axes");
        const auto h = j.at("half_extents");
        if (c.size() != 3 || a.size() != 9 || h.size() != 3)
            throw FormatError("bbox fields have wrong lengths");
        for (int i = 0; i < 3; ++i) box.center[i] = c.at(i).get<double>();
        for (int i = 0; i < 3; ++i)
            for (int k = 0; k < 3; ++k) box.axes(i, k) = a.at(i * 3 + k).get<double>();
        for (int i = 0; i < 3; ++i) box.half_extents[i] = h.at(i).get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bbox file missing field: " + std::string(e.what()));
    }
    box.validate();
    return box;
}

inline void save_bbox(const OrientedBBox& box, const std::string& path) {
    box.validate();
    nlohmann::json j;
    j["center"] = {box.center[0], box.center[1], box.center[2]};
    std::vector<double> a;
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k) a.push_back(box.axes(i, k));
    j["axes"] = a;
    j["half_extents"] = {box.half_extents[0], box.half_extents[1], box.half_extents[2]};
    std::ofstream out(path);
    if (!out) throw IoError("cannot open file for writing: " + path);
    out << j.dump(2) << "\n";
    if (!out) throw IoError("write failed: " + path);
}

} // namespace splatedit

#endif
