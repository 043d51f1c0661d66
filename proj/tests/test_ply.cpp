#include <cstring>
#include <fstream>

#include <catch2/catch_amalgamated.hpp>

#include "splatedit/ply.hpp"
#include "support.hpp"

using namespace splatedit;

namespace {

std::vector<char> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::vector<char>(std::istreambuf_iterator<char>(in),
                             std::istreambuf_iterator<char>());
}

bool splats_bitwise_equal(const GaussianSplat& a, const GaussianSplat& b) {
    auto feq = [](float x, float y) { return std::memcmp(&x, &y, 4) == 0; };
    for (int i = 0; i < 3; ++i)
        if (!feq(a.position[i], b.position[i]) || !feq(a.log_scale[i], b.log_scale[i]) ||
            !feq(a.f_dc[i], b.f_dc[i]))
            return false;
    for (int i = 0; i < 4; ++i)
        if (!feq(a.rotation[i], b.rotation[i])) return false;
    if (!feq(a.opacity_logit, b.opacity_logit)) return false;
    if (a.sh_rest.size() != b.sh_rest.size()) return false;
    for (std::size_t i = 0; i < a.sh_rest.size(); ++i)
        if (!feq(a.sh_rest[i], b.sh_rest[i])) return false;
    return true;
}

/// Hand-built minimal PLY, independent of save_ply.
void write_manual_ply(const std::string& path, const std::vector<float>& one_vertex,
                      const std::vector<std::string>& fields,
                      const std::string& format = "binary_little_endian") {
    std::ofstream out(path, std::ios::binary);
    out << "ply\nformat " << format << " 1.0\nelement vertex 1\n";
    for (const auto& f : fields) out << "property float " << f << "\n";
    out << "end_header\n";
    out.write(reinterpret_cast<const char*>(one_vertex.data()),
              static_cast<std::streamsize>(one_vertex.size() * 4));
}

std::vector<std::string> standard_fields() {
    return {"x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
            "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"};
}

} // namespace

TEST_CASE("single-splat file decodes color and opacity", "[ply]") {
    testsupport::TempDir tmp("ply_single");
    // x y z, f_dc 0 0 0, opacity 0, scale, unit quaternion
    std::vector<float> v = {1.f, 2.f, 3.f, 0.f, 0.f, 0.f, 0.f, -1.f, -1.f, -1.f,
                            1.f, 0.f, 0.f, 0.f};
    write_manual_ply(tmp.file("one.ply"), v, standard_fields());

    const SplatScene s = load_ply(tmp.file("one.ply"));
    REQUIRE(s.size() == 1);
    CHECK(s.splats[0].position == Eigen::Vector3f(1.f, 2.f, 3.f));
    CHECK(s.splats[0].color().isApprox(Eigen::Vector3f(0.5f, 0.5f, 0.5f), 1e-7f));
    CHECK(s.splats[0].opacity() == Catch::Approx(0.5).epsilon(1e-7));
    CHECK(s.splats[0].sh_rest.empty());
}

TEST_CASE("byte-exact round trip through save and load", "[ply]") {
    std::mt19937_64 rng(21);
    testsupport::TempDir tmp("ply_rt");
    for (int trial = 0; trial < 20; ++trial) {
        testsupport::SceneParams p;
        p.count = 1 + static_cast<int>(testsupport::uniform(rng, 0, 100));
        SplatScene scene = testsupport::random_scene(rng, p);
        if (trial % 2 == 0)
            for (auto& s : scene.splats) s.sh_rest.clear();

        const std::string f1 = tmp.file("a" + std::to_string(trial) + ".ply");
        const std::string f2 = tmp.file("b" + std::to_string(trial) + ".ply");
        save_ply(scene, f1);
        const SplatScene loaded = load_ply(f1);
        REQUIRE(loaded.size() == scene.size());
        for (std::size_t i = 0; i < scene.size(); ++i)
            CHECK(splats_bitwise_equal(scene.splats[i], loaded.splats[i]));
        save_ply(loaded, f2);
        CHECK(slurp(f1) == slurp(f2));
    }
}

TEST_CASE("load normalizes denormalized quaternions once", "[ply]") {
    testsupport::TempDir tmp("ply_quat");
    std::vector<float> v = {0.f, 0.f, 0.f, 0.f, 0.f, 0.f, 0.f, -1.f, -1.f, -1.f,
                            2.f, 0.f, 0.f, 0.f};
    write_manual_ply(tmp.file("q.ply"), v, standard_fields());
    const SplatScene first = load_ply(tmp.file("q.ply"));
    CHECK(first.splats[0].rotation.isApprox(Eigen::Vector4f(1.f, 0.f, 0.f, 0.f), 1e-6f));

    save_ply(first, tmp.file("q2.ply"));
    const SplatScene second = load_ply(tmp.file("q2.ply"));
    CHECK(splats_bitwise_equal(first.splats[0], second.splats[0]));
}

TEST_CASE("sh_rest blocks are preserved opaquely", "[ply]") {
    testsupport::TempDir tmp("ply_rest");
    auto fields = standard_fields();
    fields.insert(fields.begin() + 6, {"f_rest_0", "f_rest_1"});
    std::vector<float> v = {0.f, 0.f, 0.f, 0.f, 0.f,  0.f,  0.25f, -0.75f,
                            0.f, -1.f, -1.f, -1.f, 1.f, 0.f, 0.f,  0.f};
    write_manual_ply(tmp.file("r.ply"), v, fields);
    const SplatScene s = load_ply(tmp.file("r.ply"));
    REQUIRE(s.splats[0].sh_rest.size() == 2);
    CHECK(s.splats[0].sh_rest[0] == 0.25f);
    CHECK(s.splats[0].sh_rest[1] == -0.75f);
}

TEST_CASE("unknown properties are skipped", "[ply]") {
    testsupport::TempDir tmp("ply_unknown");
    auto fields = standard_fields();
    fields.insert(fields.begin() + 3, {"nx", "ny", "nz"});
    std::vector<float> v = {4.f, 5.f, 6.f, 9.f, 9.f, 9.f, 0.f, 0.f, 0.f, 0.f,
                            -1.f, -1.f, -1.f, 1.f, 0.f, 0.f, 0.f};
    write_manual_ply(tmp.file("n.ply"), v, fields);
    const SplatScene s = load_ply(tmp.file("n.ply"));
    CHECK(s.splats[0].position == Eigen::Vector3f(4.f, 5.f, 6.f));
    CHECK(s.splats[0].f_dc == Eigen::Vector3f(0.f, 0.f, 0.f));
}

TEST_CASE("missing field is named in the error", "[ply]") {
    testsupport::TempDir tmp("ply_missing");
    auto fields = standard_fields();
    fields.erase(std::find(fields.begin(), fields.end(), "opacity"));
    std::vector<float> v(fields.size(), 0.f);
    v[9] = 1.f;  // rot_0 in the 13-field layout
    write_manual_ply(tmp.file("m.ply"), v, fields);
    try {
        load_ply(tmp.file("m.ply"));
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("opacity") != std::string::npos);
    }
}

TEST_CASE("non-binary and big-endian encodings are rejected", "[ply]") {
    testsupport::TempDir tmp("ply_enc");
    std::vector<float> v(14, 0.f);
    v[10] = 1.f;
    write_manual_ply(tmp.file("ascii.ply"), v, standard_fields(), "ascii");
    CHECK_THROWS_AS(load_ply(tmp.file("ascii.ply")), FormatError);
    write_manual_ply(tmp.file("be.ply"), v, standard_fields(), "binary_big_endian");
    CHECK_THROWS_AS(load_ply(tmp.file("be.ply")), FormatError);
}

TEST_CASE("truncated payloads and non-finite values are rejected", "[ply]") {
    testsupport::TempDir tmp("ply_bad");

    SplatScene scene;
    scene.splats.emplace_back();
    save_ply(scene, tmp.file("ok.ply"));
    auto bytes = slurp(tmp.file("ok.ply"));
    bytes.resize(bytes.size() - 4);
    std::ofstream(tmp.file("short.ply"), std::ios::binary)
        .write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_AS(load_ply(tmp.file("short.ply")), FormatError);

    std::vector<float> v(14, 0.f);
    v[0] = std::numeric_limits<float>::quiet_NaN();
    v[10] = 1.f;
    write_manual_ply(tmp.file("nan.ply"), v, standard_fields());
    CHECK_THROWS_AS(load_ply(tmp.file("nan.ply")), FormatError);

    CHECK_THROWS_AS(load_ply(tmp.file("does_not_exist.ply")), IoError);
}

TEST_CASE("empty scene writes a loadable zero-vertex file", "[ply]") {
    testsupport::TempDir tmp("ply_empty");
    SplatScene scene;
    save_ply(scene, tmp.file("empty.ply"));
    const SplatScene back = load_ply(tmp.file("empty.ply"));
    CHECK(back.empty());

    const auto bytes = slurp(tmp.file("empty.ply"));
    const std::string header(bytes.begin(), bytes.end());
    CHECK(header.find("element vertex 0") != std::string::npos);
    CHECK(header.find("f_rest_") == std::string::npos);
}
