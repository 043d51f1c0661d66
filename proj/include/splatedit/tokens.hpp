#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "splatedit/common.hpp"
#include "splatedit/image.hpp"

namespace splatedit {

/// Patch-token view of an image: one L2-normalized pixel vector per patch,
/// plus a foreground flag per token. `norms` keeps the pre-normalization
/// patch magnitudes so pixels can be reconstructed after token edits.
struct TokenGrid {
    int height = 0;
    int width = 0;
    int dim = 0;
    int stride = 1;
    std::string view_id;
    std::vector<double> tokens;
    std::vector<std::uint8_t> fg_mask;
    std::vector<double> norms;

    std::size_t count() const { return static_cast<std::size_t>(height) * width; }

    const double* token(int y, int x) const {
        return tokens.data() + (static_cast<std::size_t>(y) * width + x) * dim;
    }
    double* token(int y, int x) {
        return tokens.data() + (static_cast<std::size_t>(y) * width + x) * dim;
    }
    bool foreground(int y, int x) const {
        return fg_mask[static_cast<std::size_t>(y) * width + x] != 0;
    }

    void validate() const {
        if (height <= 0 || width <= 0 || dim <= 0)
            throw InputError("token grid dimensions must be positive");
        if (stride < 1) throw InputError("token stride must be at least 1");
        if (tokens.size() != count() * static_cast<std::size_t>(dim))
            throw InputError("token buffer size does not match grid dimensions");
        if (fg_mask.size() != count())
            throw InputError("token mask size does not match grid dimensions");
        if (!norms.empty() && norms.size() != count())
            throw InputError("token norm buffer size does not match grid dimensions");
        for (double v : tokens)
            if (!std::isfinite(v)) throw InputError("token grid contains non-finite values");
    }
};

/// Cuts the image into patch x patch blocks and normalizes each flattened
/// block. A token is foreground when more than half of its pixels are
/// foreground in the mask; without a mask every token is foreground.
inline TokenGrid tokenize(const Image& image, int patch, const ImageMask* fg = nullptr) {
    if (patch < 1) throw InputError("patch size must be at least 1");
    if (image.height <= 0 || image.width <= 0 || image.channels <= 0)
        throw InputError("tokenize needs a non-empty image");
    if (image.height % patch != 0 || image.width % patch != 0)
        throw InputError("patch size must divide the image dimensions");
    if (fg && (fg->height != image.height || fg->width != image.width))
        throw InputError("foreground mask dimensions do not match the image");

    TokenGrid grid;
    grid.height = image.height / patch;
    grid.width = image.width / patch;
    grid.dim = patch * patch * image.channels;
    grid.stride = patch;
    grid.tokens.resize(grid.count() * grid.dim);
    grid.fg_mask.resize(grid.count());
    grid.norms.resize(grid.count());

    for (int ty = 0; ty < grid.height; ++ty) {
        for (int tx = 0; tx < grid.width; ++tx) {
            double* tok = grid.token(ty, tx);
            int d = 0;
            int fg_pixels = 0;
            for (int py = 0; py < patch; ++py) {
                for (int px = 0; px < patch; ++px) {
                    const int y = ty * patch + py, x = tx * patch + px;
                    for (int c = 0; c < image.channels; ++c) tok[d++] = image.at(y, x, c);
                    if (fg && fg->at(y, x)) ++fg_pixels;
                }
            }
            double sq = 0;
            for (int k = 0; k < grid.dim; ++k) sq += tok[k] * tok[k];
            const double norm = std::sqrt(sq);
            grid.norms[static_cast<std::size_t>(ty) * grid.width + tx] = norm;
            if (norm > 0)
                for (int k = 0; k < grid.dim; ++k) tok[k] /= norm;
            const bool is_fg = fg ? 2 * fg_pixels > patch * patch : true;
            grid.fg_mask[static_cast<std::size_t>(ty) * grid.width + tx] = is_fg ? 1 : 0;
        }
    }
    return grid;
}

/// Rebuilds pixels from tokens, scaling each patch by its stored norm
/// (or leaving the normalized values when no norms are present).
inline Image detokenize(const TokenGrid& grid, int channels = 3) {
    grid.validate();
    if (channels < 1 || grid.dim % (grid.stride * grid.stride * channels) != 0 ||
        grid.dim != grid.stride * grid.stride * channels)
        throw InputError("token dimension does not factor into stride x stride patches");

    Image out(grid.height * grid.stride, grid.width * grid.stride, channels);
    for (int ty = 0; ty < grid.height; ++ty) {
        for (int tx = 0; tx < grid.width; ++tx) {
            const double* tok = grid.token(ty, tx);
            const double norm =
                grid.norms.empty() ? 1.0
                                   : grid.norms[static_cast<std::size_t>(ty) * grid.width + tx];
            int d = 0;
            for (int py = 0; py < grid.stride; ++py)
                for (int px = 0; px < grid.stride; ++px)
                    for (int c = 0; c < channels; ++c)
                        out.at(ty * grid.stride + py, tx * grid.stride + px, c) =
                            tok[d++] * norm;
        }
    }
    return out;
}

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& in, const std::string& what) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw FormatError("token file truncated in " + what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
}

} // namespace detail

/// Binary token grid layout: "TOKG", version, H, W, D, stride as u32 LE,
/// H*W*D float32 LE tokens, H*W u8 foreground mask.
inline void save_tokens(const TokenGrid& grid, const std::string& path) {
    grid.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write("TOKG", 4);
    detail::write_u32(out, 1);
    detail::write_u32(out, static_cast<std::uint32_t>(grid.height));
    detail::write_u32(out, static_cast<std::uint32_t>(grid.width));
    detail::write_u32(out, static_cast<std::uint32_t>(grid.dim));
    detail::write_u32(out, static_cast<std::uint32_t>(grid.stride));
    for (double v : grid.tokens) {
        const auto f = static_cast<float>(v);
        static_assert(sizeof(f) == 4);
        out.write(reinterpret_cast<const char*>(&f), 4);
    }
    out.write(reinterpret_cast<const char*>(grid.fg_mask.data()),
              static_cast<std::streamsize>(grid.fg_mask.size()));
    if (!out) throw IoError("failed writing " + path);
}

inline TokenGrid load_tokens(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "TOKG", 4) != 0)
        throw FormatError(path + " is not a token grid file");
    const std::uint32_t version = detail::read_u32(in, "version");
    if (version != 1)
        throw FormatError("unsupported token file version " + std::to_string(version));
    TokenGrid grid;
    grid.height = static_cast<int>(detail::read_u32(in, "height"));
    grid.width = static_cast<int>(detail::read_u32(in, "width"));
    grid.dim = static_cast<int>(detail::read_u32(in, "dim"));
    grid.stride = static_cast<int>(detail::read_u32(in, "stride"));
    if (grid.height <= 0 || grid.width <= 0 || grid.dim <= 0 || grid.height > 100000 ||
        grid.width > 100000 || grid.dim > 1000000 || grid.stride < 1)
        throw FormatError(path + " has implausible token grid dimensions");

    grid.tokens.resize(grid.count() * static_cast<std::size_t>(grid.dim));
    for (double& v : grid.tokens) {
        float f;
        in.read(reinterpret_cast<char*>(&f), 4);
        if (!in) throw FormatError("token file truncated in token data");
        if (!std::isfinite(f)) throw FormatError(path + " contains non-finite tokens");
        v = f;
    }
    grid.fg_mask.resize(grid.count());
    in.read(reinterpret_cast<char*>(grid.fg_mask.data()),
            static_cast<std::streamsize>(grid.fg_mask.size()));
    if (!in) throw FormatError("token file truncated in mask data");
    for (auto& m : grid.fg_mask) m = m ? 1 : 0;
    return grid;
}

} // namespace splatedit
