#ifndef SPLATEDIT_CAMERA_HPP
#define SPLATEDIT_CAMERA_HPP

#include <cmath>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "splatedit/common.hpp"

namespace splatedit {

/// Pinhole camera: world-to-camera pose (x_cam = R x_world + t) plus
/// intrinsics in pixels. Poses follow the COLMAP convention, so source
/// scenes' cameras load directly.
struct CameraView {
    std::string id;
    int width = 0;
    int height = 0;
    double fx = 0, fy = 0, cx = 0, cy = 0;
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    void validate() const {
        if (width < 1 || height < 1) throw InputError("camera " + id + ": bad image size");
        if (!(fx > 0) || !(fy > 0)) throw InputError("camera " + id + ": focal must be > 0");
        if ((rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9)
            throw InputError("camera " + id + ": rotation is not orthonormal");
    }

    /// Optical center in world coordinates, C = -R^T t.
    Vec3 center() const { return -rotation.transpose() * translation; }

    /// Unit viewing direction (camera +z axis) in world coordinates.
    Vec3 view_direction() const { return rotation.row(2).transpose(); }

    Mat3 intrinsic_matrix() const {
        Mat3 k;
        k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
        return k;
    }
};

using ViewSet = std::vector<CameraView>;

/// Image of a pixel ray in another view, a*u + b*v + c = 0 with a^2+b^2 = 1.
struct EpipolarLine {
    double a = 0, b = 0, c = 0;

    /// Signed pixel distance from (u, v) to the line.
    double distance(const Vec2& px) const { return a * px.x() + b * px.y() + c; }
};

/// Projects a world point; returns (pixel, camera-frame depth).
/// Throws DegeneracyError for points at or behind the camera plane.
inline std::pair<Vec2, double> project(const CameraView& cam, const Vec3& point) {
    const Vec3 pc = cam.rotation * point + cam.translation;
    if (pc.z() <= 1e-9)
        throw DegeneracyError("point is behind the camera (depth " + std::to_string(pc.z()) + ")");
    return {Vec2(cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy), pc.z()};
}

/// Inverse of project for a known depth.
inline Vec3 unproject(const CameraView& cam, const Vec2& pixel, double depth) {
    if (depth <= 0) throw InputError("unproject requires depth > 0");
    const Vec3 pc((pixel.x() - cam.cx) / cam.fx * depth, (pixel.y() - cam.cy) / cam.fy * depth,
                  depth);
    return cam.rotation.transpose() * (pc - cam.translation);
}

/// Euclidean distance between optical centers.
inline double camera_distance(const CameraView& a, const CameraView& b) {
    return (a.center() - b.center()).norm();
}

/// Fundamental matrix mapping pixels of `a` to epipolar lines in `b`:
/// x_b^T F x_a = 0. Normalized to unit Frobenius norm with a deterministic
/// sign (largest-magnitude entry positive).
inline Mat3 fundamental_matrix(const CameraView& a, const CameraView& b) {
    if ((a.center() - b.center()).norm() <= 1e-9)
        throw DegeneracyError("coincident camera centers: fundamental matrix undefined");
    const Mat3 r_ab = b.rotation * a.rotation.transpose();
    const Vec3 t_ab = b.translation - r_ab * a.translation;
    Mat3 tx;
    tx << 0, -t_ab.z(), t_ab.y(), t_ab.z(), 0, -t_ab.x(), -t_ab.y(), t_ab.x(), 0;
    const Mat3 essential = tx * r_ab;
    Mat3 f = b.intrinsic_matrix().inverse().transpose() * essential *
             a.intrinsic_matrix().inverse();
    f /= f.norm();
    int rmax = 0, cmax = 0;
    f.cwiseAbs().maxCoeff(&rmax, &cmax);
    if (f(rmax, cmax) < 0) f = -f;
    return f;
}

/// Epipolar line of `pixel` (in the F-source view) in the F-target view.
inline EpipolarLine epipolar_line(const Mat3& f, const Vec2& pixel) {
    const Vec3 l = f * Vec3(pixel.x(), pixel.y(), 1.0);
    const double n = std::hypot(l.x(), l.y());
    if (n <= 1e-15)
        throw DegeneracyError("degenerate epipolar line (pixel maps to the epipole)");
    return {l.x() / n, l.y() / n, l.z() / n};
}

// cameras.json: array of
//   {id, width, height, fx, fy, cx, cy, qw, qx, qy, qz, tx, ty, tz}
// with (qw..qz, tx..tz) the world-to-camera pose.

inline Mat3 quaternion_to_matrix(double w, double x, double y, double z) {
    const double n = std::sqrt(w * w + x * x + y * y + z * z);
    if (!(n > 0) || !std::isfinite(n)) throw InputError("camera quaternion has bad norm");
    w /= n; x /= n; y /= n; z /= n;
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

inline Eigen::Vector4d matrix_to_quaternion(const Mat3& r) {
    Eigen::Quaterniond q(r);
    q.normalize();
    if (q.w() < 0) q.coeffs() *= -1;
    return {q.w(), q.x(), q.y(), q.z()};
}

inline ViewSet load_cameras(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open cameras file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("cameras file is not valid JSON: " + std::string(e.what()));
    }
    if (!j.is_array()) throw FormatError("cameras file must hold a JSON array");
    ViewSet views;
    for (const auto& e : j) {
        CameraView c;
        try {
            c.id = e.at("id").is_string() ? e.at("id").get<std::string>()
                                          : std::to_string(e.at("id").get<long long>());
            c.width = e.at("width").get<int>();
            c.height = e.at("height").get<int>();
            c.fx = e.at("fx").get<double>();
            c.fy = e.at("fy").get<double>();
            c.cx = e.at("cx").get<double>();
            c.cy = e.at("cy").get<double>();
            c.rotation = quaternion_to_matrix(e.at("qw").get<double>(), e.at("qx").get<double>(),
                                              e.at("qy").get<double>(), e.at("qz").get<double>());
            c.translation = {e.at("tx").get<double>(), e.at("ty").get<double>(),
                             e.at("tz").get<double>()};
        } catch (const nlohmann::json::exception& e2) {
            throw FormatError("camera entry missing field: " + std::string(e2.what()));
        }
        c.validate();
        views.push_back(std::move(c));
    }
    return views;
}

inline void save_cameras(const ViewSet& views, const std::string& path) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& c : views) {
        const Eigen::Vector4d q = matrix_to_quaternion(c.rotation);
        j.push_back({{"id", c.id},
                     {"width", c.width},
                     {"height", c.height},
                     {"fx", c.fx},
                     {"fy", c.fy},
                     {"cx", c.cx},
                     {"cy", c.cy},
                     {"qw", q[0]},
                     {"qx", q[1]},
                     {"qy", q[2]},
                     {"qz", q[3]},
                     {"tx", c.translation.x()},
                     {"ty", c.translation.y()},
                     {"tz", c.translation.z()}});
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot open file for writing: " + path);
    out << j.dump(2) << "\n";
    if (!out) throw IoError("write failed: " + path);
}

/// Cameras on a horizontal orbit looking at `target`; used when no
/// cameras.json is supplied.
inline ViewSet make_orbit_views(int count, const Vec3& target, double radius, double height,
                                int image_size, double focal) {
    if (count < 1) throw InputError("orbit requires at least one view");
    ViewSet views;
    for (int i = 0; i < count; ++i) {
        const double ang = 2.0 * M_PI * i / count;
        const Vec3 center = target + Vec3(radius * std::cos(ang), height, radius * std::sin(ang));
        const Vec3 forward = (target - center).normalized();
        Vec3 world_up(0, 1, 0);
        if (forward.cross(world_up).norm() < 1e-9) world_up = Vec3(0, 0, 1);
        const Vec3 right = forward.cross(world_up).normalized();
        const Vec3 down = forward.cross(right);  // image y grows downward
        Mat3 r;
        r.row(0) = right.transpose();
        r.row(1) = down.transpose();
        r.row(2) = forward.transpose();
        CameraView c;
        c.id = "orbit_" + std::to_string(i);
        c.width = c.height = image_size;
        c.fx = c.fy = focal;
        c.cx = image_size / 2.0;
        c.cy = image_size / 2.0;
        c.rotation = r;
        c.translation = -r * center;
        c.validate();
        views.push_back(std::move(c));
    }
    return views;
}

} // namespace splatedit

#endif
