#ifndef SPLATEDIT_TESTS_SUPPORT_HPP
#define SPLATEDIT_TESTS_SUPPORT_HPP

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <unistd.h>

#include <Eigen/Geometry>

#include <nlohmann/json.hpp>

#include "splatedit/camera.hpp"
#include "splatedit/image.hpp"
#include "splatedit/splat.hpp"

namespace testsupport {

/// Unique scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        auto base = std::filesystem::temp_directory_path();
        for (int i = 0;; ++i) {
            path_ = base / (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(i));
            std::error_code ec;
            if (std::filesystem::create_directory(path_, ec)) break;
            if (i > 10000) throw std::runtime_error("cannot create temp dir");
        }
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Eigen::Vector4f random_unit_quaternion(std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    Eigen::Vector4d q(g(rng), g(rng), g(rng), g(rng));
    while (q.norm() < 1e-6) q = {g(rng), g(rng), g(rng), g(rng)};
    q.normalize();
    if (q[0] < 0) q = -q;
    return q.cast<float>();
}

inline splatedit::Mat3 random_rotation(std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    Eigen::Vector4d q(g(rng), g(rng), g(rng), g(rng));
    while (q.norm() < 1e-6) q = {g(rng), g(rng), g(rng), g(rng)};
    q.normalize();
    return Eigen::Quaterniond(q[0], q[1], q[2], q[3]).toRotationMatrix();
}

struct SceneParams {
    int count = 5;
    double logit_lo = -3.0;
    double logit_hi = -1.7;
    double pos_radius = 0.6;     // splat centers inside this ball around the look-at point
    double log_scale_lo = -2.5;
    double log_scale_hi = -0.7;
    double color_lo = 0.1;
    double color_hi = 0.9;
};

/// Random anisotropic splats clustered around the origin.
inline splatedit::SplatScene random_scene(std::mt19937_64& rng, const SceneParams& p) {
    splatedit::SplatScene scene;
    scene.background_color = {uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0),
                              uniform(rng, 0.0, 1.0)};
    for (int i = 0; i < p.count; ++i) {
        splatedit::GaussianSplat s;
        s.position = Eigen::Vector3f(uniform(rng, -p.pos_radius, p.pos_radius),
                                     uniform(rng, -p.pos_radius, p.pos_radius),
                                     uniform(rng, -p.pos_radius, p.pos_radius));
        s.log_scale = Eigen::Vector3f(uniform(rng, p.log_scale_lo, p.log_scale_hi),
                                      uniform(rng, p.log_scale_lo, p.log_scale_hi),
                                      uniform(rng, p.log_scale_lo, p.log_scale_hi));
        s.rotation = random_unit_quaternion(rng);
        s.opacity_logit = static_cast<float>(uniform(rng, p.logit_lo, p.logit_hi));
        s.set_color(Eigen::Vector3f(static_cast<float>(uniform(rng, p.color_lo, p.color_hi)),
                                    static_cast<float>(uniform(rng, p.color_lo, p.color_hi)),
                                    static_cast<float>(uniform(rng, p.color_lo, p.color_hi))));
        for (int k = 0; k < 3; ++k) s.sh_rest.push_back(static_cast<float>(uniform(rng, -1, 1)));
        scene.splats.push_back(s);
    }
    return scene;
}

/// Camera at `center` looking at `target`, +y world treated as up.
inline splatedit::CameraView look_at_camera(const std::string& id, const splatedit::Vec3& center,
                                            const splatedit::Vec3& target, int size,
                                            double focal) {
    splatedit::Vec3 forward = (target - center).normalized();
    splatedit::Vec3 up(0, 1, 0);
    if (forward.cross(up).norm() < 1e-6) up = splatedit::Vec3(1, 0, 0);
    const splatedit::Vec3 right = forward.cross(up).normalized();
    const splatedit::Vec3 down = forward.cross(right);
    splatedit::CameraView cam;
    cam.id = id;
    cam.width = cam.height = size;
    cam.fx = cam.fy = focal;
    cam.cx = cam.cy = size / 2.0;
    cam.rotation.row(0) = right.transpose();
    cam.rotation.row(1) = down.transpose();
    cam.rotation.row(2) = forward.transpose();
    cam.translation = -cam.rotation * center;
    return cam;
}

/// Fully random pose with positive focal lengths; centers kept distinct by
/// the caller's draw ranges.
inline splatedit::CameraView random_camera(std::mt19937_64& rng, const std::string& id) {
    splatedit::CameraView cam;
    cam.id = id;
    cam.width = 64 + static_cast<int>(uniform(rng, 0, 192));
    cam.height = 64 + static_cast<int>(uniform(rng, 0, 192));
    cam.fx = uniform(rng, 40, 300);
    cam.fy = uniform(rng, 40, 300);
    cam.cx = uniform(rng, 10, cam.width - 10);
    cam.cy = uniform(rng, 10, cam.height - 10);
    cam.rotation = random_rotation(rng);
    cam.translation = {uniform(rng, -3, 3), uniform(rng, -3, 3), uniform(rng, -3, 3)};
    return cam;
}

struct OracleRender {
    splatedit::Image rgb;
    splatedit::Image alpha;
    splatedit::Image depth;
};

/// Reference compositor: every splat is evaluated at every pixel with the
/// exact Gaussian (optionally with the renderer's 3-sigma cutoff), sorting is
/// an exhaustive stable sort by depth, and the whole projection chain is
/// rebuilt from 4x4 homogeneous matrices independent of the library path.
inline OracleRender oracle_render(const splatedit::SplatScene& scene,
                                  const splatedit::CameraView& cam, bool truncate) {
    struct Proj {
        double u, v, z;
        Eigen::Matrix2d cov2;
        Eigen::Vector3d color;
        double opacity;
    };
    Eigen::Matrix4d world_to_cam = Eigen::Matrix4d::Identity();
    world_to_cam.block<3, 3>(0, 0) = cam.rotation;
    world_to_cam.block<3, 1>(0, 3) = cam.translation;

    std::vector<Proj> projs;
    for (const auto& s : scene.splats) {
        Eigen::Vector4d ph(s.position.x(), s.position.y(), s.position.z(), 1.0);
        Eigen::Vector4d pc = world_to_cam * ph;
        if (pc.z() <= 1e-9) continue;
        Proj pr;
        pr.z = pc.z();
        pr.u = cam.fx * pc.x() / pc.z() + cam.cx;
        pr.v = cam.fy * pc.y() / pc.z() + cam.cy;
        const Eigen::Matrix3d rq =
            Eigen::Quaterniond(s.rotation[0], s.rotation[1], s.rotation[2], s.rotation[3])
                .toRotationMatrix();
        Eigen::Vector3d sc = s.log_scale.cast<double>().array().exp();
        Eigen::Matrix3d cov3 = rq * sc.asDiagonal() * sc.asDiagonal() * rq.transpose();
        Eigen::Matrix3d cov_cam = cam.rotation * cov3 * cam.rotation.transpose();
        Eigen::Matrix<double, 2, 3> jac;
        jac.setZero();
        jac(0, 0) = cam.fx / pc.z();
        jac(0, 2) = -cam.fx * pc.x() / (pc.z() * pc.z());
        jac(1, 1) = cam.fy / pc.z();
        jac(1, 2) = -cam.fy * pc.y() / (pc.z() * pc.z());
        pr.cov2 = jac * cov_cam * jac.transpose();
        pr.color = s.color().cast<double>();
        pr.opacity = 1.0 / (1.0 + std::exp(-static_cast<double>(s.opacity_logit)));
        projs.push_back(pr);
    }
    std::vector<std::size_t> order(projs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return projs[a].z < projs[b].z; });

    OracleRender out;
    out.rgb = splatedit::Image(cam.height, cam.width, 3);
    out.alpha = splatedit::Image(cam.height, cam.width, 1);
    out.depth = splatedit::Image(cam.height, cam.width, 1);
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            double transmit = 1.0, acc_a = 0.0, acc_d = 0.0;
            Eigen::Vector3d acc_c = Eigen::Vector3d::Zero();
            for (std::size_t idx : order) {
                const Proj& pr = projs[idx];
                Eigen::Vector2d d(x - pr.u, y - pr.v);
                const double m2 = d.dot(pr.cov2.inverse() * d);
                if (truncate && m2 > 9.0) continue;
                const double a = pr.opacity * std::exp(-0.5 * m2);
                acc_c += transmit * a * pr.color;
                acc_a += transmit * a;
                acc_d += transmit * a * pr.z;
                transmit *= 1.0 - a;
            }
            acc_c += transmit * scene.background_color;
            for (int c = 0; c < 3; ++c) out.rgb.at(y, x, c) = acc_c[c];
            out.alpha.at(y, x, 0) = acc_a;
            out.depth.at(y, x, 0) = acc_a > 0.0 ? acc_d / acc_a : 0.0;
        }
    }
    return out;
}

/// In-process stand-in for the external translator: waits for each round's
/// request, maps every render through `transform`, and raises the sentinel.
class ScriptedTranslator {
public:
    ScriptedTranslator(std::string root, int rounds,
                       std::function<void(splatedit::Image&, const std::string&)> transform = {})
        : root_(std::move(root)), rounds_(rounds), transform_(std::move(transform)) {
        worker_ = std::thread([this] { run(); });
    }

    ~ScriptedTranslator() {
        if (worker_.joinable()) worker_.join();
    }

private:
    void run() try {
        namespace fs = std::filesystem;
        for (int t = 1; t <= rounds_; ++t) {
            const fs::path dir = fs::path(root_) / ("iter_" + std::to_string(t));
            nlohmann::json request;
            for (int spins = 0; spins < 2000; ++spins) {
                if (fs::exists(dir / "request.json")) {
                    try {
                        std::ifstream in(dir / "request.json");
                        request = nlohmann::json::parse(in);
                        break;
                    } catch (const std::exception&) {
                    }
                }
                std::this_thread::sleep_for(std::chrono::milliseconds(5));
            }
            if (request.is_null()) return;

            fs::create_directories(dir / "translated");
            for (const auto& id_json : request["render_ids"]) {
                const std::string id = id_json.get<std::string>();
                splatedit::Image im;
                for (int attempt = 0;; ++attempt) {
                    try {
                        im = splatedit::read_png_rgb((dir / "renders" / (id + ".png")).string());
                        break;
                    } catch (const std::exception&) {
                        if (attempt >= 200) return;
                        std::this_thread::sleep_for(std::chrono::milliseconds(5));
                    }
                }
                if (transform_) transform_(im, id);
                splatedit::write_png_rgb(im, (dir / "translated" / (id + ".png")).string());
            }
            std::ofstream(dir / "done") << "ok\n";
        }
    } catch (...) {
    }

    std::string root_;
    int rounds_;
    std::function<void(splatedit::Image&, const std::string&)> transform_;
    std::thread worker_;
};

} // namespace testsupport

#endif
