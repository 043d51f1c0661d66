#ifndef SPLATEDIT_PLY_HPP
#define SPLATEDIT_PLY_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "splatedit/splat.hpp"

namespace splatedit {

// Binary little-endian PLY in the de-facto splat layout: one "vertex" element
// with float32 properties x,y,z, f_dc_0..2, [f_rest_*], opacity, scale_0..2,
// rot_0..3. f_rest_* bands are carried opaquely; unrelated properties (e.g.
// normals) are skipped on load and not written back.

namespace detail {

inline const std::vector<std::string>& required_ply_fields() {
    static const std::vector<std::string> f = {
        "x", "y", "z",
        "f_dc_0", "f_dc_1", "f_dc_2",
        "opacity",
        "scale_0", "scale_1", "scale_2",
        "rot_0", "rot_1", "rot_2", "rot_3"};
    return f;
}

inline bool is_float_type(const std::string& t) { return t == "float" || t == "float32"; }

} // namespace detail

inline SplatScene load_ply(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open PLY file: " + path);

    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty PLY file: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "ply") throw FormatError("not a PLY file (missing 'ply' magic): " + path);

    std::size_t vertex_count = 0;
    bool saw_format = false;
    bool in_vertex_element = false;
    std::vector<std::string> props;  // property names in file order
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "comment" || tok.empty()) continue;
        if (tok == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt != "binary_little_endian")
                throw FormatError("unsupported PLY encoding '" + fmt +
                                  "' (binary_little_endian required)");
            saw_format = true;
        } else if (tok == "element") {
            std::string name;
            std::size_t count = 0;
            ls >> name >> count;
            if (name != "vertex")
                throw FormatError("unsupported PLY element '" + name + "'");
            if (in_vertex_element)
                throw FormatError("duplicate vertex element in PLY header");
            in_vertex_element = true;
            vertex_count = count;
        } else if (tok == "property") {
            if (!in_vertex_element)
                throw FormatError("property outside vertex element in PLY header");
            std::string type, name;
            ls >> type >> name;
            if (type == "list") throw FormatError("list properties are not supported");
            if (!detail::is_float_type(type))
                throw FormatError("property '" + name + "' has unsupported type '" + type +
                                  "' (float32 required)");
            props.push_back(name);
        } else if (tok == "end_header") {
            break;
        } else {
            throw FormatError("unrecognized PLY header line: " + line);
        }
    }
    if (!saw_format) throw FormatError("PLY header missing format line");
    if (!in_vertex_element) throw FormatError("PLY header missing vertex element");

    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < props.size(); ++i) index.emplace(props[i], i);
    for (const auto& f : detail::required_ply_fields())
        if (!index.count(f))
            throw FormatError("PLY is missing required field '" + f + "'");

    // f_rest_* must form a dense 0..n-1 block to round-trip faithfully.
    std::vector<std::size_t> rest_cols;
    for (std::size_t k = 0;; ++k) {
        auto it = index.find("f_rest_" + std::to_string(k));
        if (it == index.end()) break;
        rest_cols.push_back(it->second);
    }

    const std::size_t stride = props.size();
    std::vector<float> row(stride);
    SplatScene scene;
    scene.splats.resize(vertex_count);
    for (std::size_t v = 0; v < vertex_count; ++v) {
        in.read(reinterpret_cast<char*>(row.data()),
                static_cast<std::streamsize>(stride * sizeof(float)));
        if (!in) throw FormatError("truncated PLY payload at vertex " + std::to_string(v));
        GaussianSplat& s = scene.splats[v];
        auto at = [&](const char* name) { return row[index.at(name)]; };
        s.position = {at("x"), at("y"), at("z")};
        s.f_dc = {at("f_dc_0"), at("f_dc_1"), at("f_dc_2")};
        s.opacity_logit = at("opacity");
        s.log_scale = {at("scale_0"), at("scale_1"), at("scale_2")};
        s.rotation = {at("rot_0"), at("rot_1"), at("rot_2"), at("rot_3")};
        s.sh_rest.resize(rest_cols.size());
        for (std::size_t k = 0; k < rest_cols.size(); ++k) s.sh_rest[k] = row[rest_cols[k]];
        if (!s.all_finite())
            throw FormatError("non-finite value in PLY vertex " + std::to_string(v));
        s.normalize_rotation();
        // exp(log_scale) must stay representable in float32
        for (int i = 0; i < 3; ++i)
            if (!std::isfinite(std::exp(s.log_scale[i])))
                throw FormatError("scale overflow in PLY vertex " + std::to_string(v));
    }
    return scene;
}

inline void save_ply(const SplatScene& scene, const std::string& path) {
    const std::size_t rest = scene.splats.empty() ? 0 : scene.splats.front().sh_rest.size();
    for (const auto& s : scene.splats) {
        if (s.sh_rest.size() != rest)
            throw InputError("inconsistent sh_rest sizes across splats");
        if (!s.all_finite()) throw InputError("non-finite splat field in scene");
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open file for writing: " + path);

    std::ostringstream header;
    header << "ply\nformat binary_little_endian 1.0\n"
           << "element vertex " << scene.splats.size() << "\n";
    const char* base[] = {"x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"};
    for (const char* n : base) header << "property float " << n << "\n";
    for (std::size_t k = 0; k < rest; ++k) header << "property float f_rest_" << k << "\n";
    const char* tail[] = {"opacity", "scale_0", "scale_1", "scale_2",
                          "rot_0",   "rot_1",   "rot_2",   "rot_3"};
    for (const char* n : tail) header << "property float " << n << "\n";
    header << "end_header\n";
    const std::string h = header.str();
    out.write(h.data(), static_cast<std::streamsize>(h.size()));

    std::vector<float> row(6 + rest + 8);
    for (const auto& s : scene.splats) {
        std::size_t i = 0;
        for (int k = 0; k < 3; ++k) row[i++] = s.position[k];
        for (int k = 0; k < 3; ++k) row[i++] = s.f_dc[k];
        for (std::size_t k = 0; k < rest; ++k) row[i++] = s.sh_rest[k];
        row[i++] = s.opacity_logit;
        for (int k = 0; k < 3; ++k) row[i++] = s.log_scale[k];
        for (int k = 0; k < 4; ++k) row[i++] = s.rotation[k];
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    if (!out) throw IoError("write failed: " + path);
}

} // namespace splatedit

#endif
