#ifndef SPLATEDIT_IMAGE_HPP
#define SPLATEDIT_IMAGE_HPP

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <png.h>

#include "splatedit/common.hpp"

namespace splatedit {

/// Row-major interleaved float image, values nominally in [0,1].
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int h, int w, int c, double fill = 0.0)
        : height(h), width(w), channels(c),
          data(static_cast<std::size_t>(h) * w * c, fill) {}

    double& at(int y, int x, int c) {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    double at(int y, int x, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }

    bool same_shape(const Image& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }

    bool all_finite() const {
        return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
    }
};

/// Binary per-pixel mask.
struct ImageMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> data;

    ImageMask() = default;
    ImageMask(int h, int w, bool fill = false)
        : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill ? 1 : 0) {}

    bool at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x] != 0; }
    void set(int y, int x, bool v) { data[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }

    std::size_t count() const {
        std::size_t n = 0;
        for (auto v : data) n += (v != 0);
        return n;
    }
    bool any() const { return count() > 0; }
};

namespace detail {

struct PngCloser {
    std::FILE* fp = nullptr;
    ~PngCloser() {
        if (fp) std::fclose(fp);
    }
};

} // namespace detail

/// Writes an 8-bit RGB PNG; values are clamped to [0,1] and rounded.
inline void write_png_rgb(const Image& img, const std::string& path) {
    if (img.channels != 3) throw InputError("write_png_rgb expects a 3-channel image");
    if (!img.all_finite()) throw InputError("write_png_rgb: image has non-finite samples");
    detail::PngCloser f;
    f.fp = std::fopen(path.c_str(), "wb");
    if (!f.fp) throw IoError("cannot open file for writing: " + path);

    std::vector<unsigned char> bytes(static_cast<std::size_t>(img.height) * img.width * 3);
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        const double v = std::clamp(img.data[i], 0.0, 1.0);
        bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("PNG write failed: " + path);
    }
    png_init_io(png, f.fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < img.height; ++y)
        png_write_row(png, bytes.data() + static_cast<std::size_t>(y) * img.width * 3);
    png_write_end(png, info);
    png_destroy_write_struct(&png, &info);
}

/// Writes a 1-bit grayscale PNG.
inline void write_png_mask(const ImageMask& mask, const std::string& path) {
    detail::PngCloser f;
    f.fp = std::fopen(path.c_str(), "wb");
    if (!f.fp) throw IoError("cannot open file for writing: " + path);

    std::vector<unsigned char> bytes(static_cast<std::size_t>(mask.height) * mask.width);
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = mask.data[i] ? 1 : 0;

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("PNG write failed: " + path);
    }
    png_init_io(png, f.fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(mask.width),
                 static_cast<png_uint_32>(mask.height), 1, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_set_packing(png);  // we hand over one byte per pixel
    for (int y = 0; y < mask.height; ++y)
        png_write_row(png, bytes.data() + static_cast<std::size_t>(y) * mask.width);
    png_write_end(png, info);
    png_destroy_write_struct(&png, &info);
}

/// Reads any PNG as RGB (palette/gray expanded, 16-bit narrowed, alpha dropped).
inline Image read_png_rgb(const std::string& path) {
    detail::PngCloser f;
    f.fp = std::fopen(path.c_str(), "rb");
    if (!f.fp) throw IoError("cannot open PNG file: " + path);

    unsigned char sig[8];
    if (std::fread(sig, 1, 8, f.fp) != 8 || png_sig_cmp(sig, 0, 8))
        throw FormatError("not a PNG file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng initialization failed");
    }

    std::vector<unsigned char> bytes;
    Image img;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("PNG decode failed: " + path);
    }
    png_init_io(png, f.fp);
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    png_set_expand(png);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    const int color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    if (png_get_rowbytes(png, info) != static_cast<std::size_t>(w) * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("unexpected PNG row layout: " + path);
    }
    bytes.resize(static_cast<std::size_t>(h) * w * 3);
    for (int y = 0; y < h; ++y)
        png_read_row(png, bytes.data() + static_cast<std::size_t>(y) * w * 3, nullptr);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    img = Image(h, w, 3);
    for (std::size_t i = 0; i < bytes.size(); ++i) img.data[i] = bytes[i] / 255.0;
    return img;
}

/// Reads a PNG as a binary mask: a pixel is set when its decoded luminance
/// is at least half intensity.
inline ImageMask read_png_mask(const std::string& path) {
    const Image img = read_png_rgb(path);
    ImageMask m(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const double lum = (img.at(y, x, 0) + img.at(y, x, 1) + img.at(y, x, 2)) / 3.0;
            m.set(y, x, lum >= 0.5);
        }
    return m;
}

namespace detail {

inline void write_u32_le(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32_le(std::ifstream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

} // namespace detail

/// Depth map format: magic "DPTH", u32 height, u32 width, then H*W float32
/// little-endian row-major.
inline void write_depth(const Image& depth, const std::string& path) {
    if (depth.channels != 1) throw InputError("write_depth expects a 1-channel image");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open file for writing: " + path);
    out.write("DPTH", 4);
    detail::write_u32_le(out, static_cast<std::uint32_t>(depth.height));
    detail::write_u32_le(out, static_cast<std::uint32_t>(depth.width));
    std::vector<float> row(depth.data.size());
    for (std::size_t i = 0; i < row.size(); ++i) row[i] = static_cast<float>(depth.data[i]);
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(float)));
    if (!out) throw IoError("write failed: " + path);
}

inline Image read_depth(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open depth file: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "DPTH", 4) != 0)
        throw FormatError("bad depth file magic: " + path);
    const std::uint32_t h = detail::read_u32_le(in);
    const std::uint32_t w = detail::read_u32_le(in);
    if (h > 100000 || w > 100000)
        throw FormatError("implausible depth file dimensions: " + path);
    Image img(static_cast<int>(h), static_cast<int>(w), 1);
    std::vector<float> row(img.data.size());
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(float)));
    if (!in) throw FormatError("truncated depth file: " + path);
    for (std::size_t i = 0; i < row.size(); ++i) img.data[i] = row[i];
    return img;
}

/// Lossless-at-float32 image format used for intermediate pipeline artifacts:
/// magic "FRGB", u32 height, u32 width, u32 channels, then H*W*C float32
/// little-endian row-major interleaved.
inline void write_frgb(const Image& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open file for writing: " + path);
    out.write("FRGB", 4);
    detail::write_u32_le(out, static_cast<std::uint32_t>(img.height));
    detail::write_u32_le(out, static_cast<std::uint32_t>(img.width));
    detail::write_u32_le(out, static_cast<std::uint32_t>(img.channels));
    std::vector<float> row(img.data.size());
    for (std::size_t i = 0; i < row.size(); ++i) row[i] = static_cast<float>(img.data[i]);
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(float)));
    if (!out) throw IoError("write failed: " + path);
}

inline Image read_frgb(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image file: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "FRGB", 4) != 0)
        throw FormatError("bad image file magic: " + path);
    const std::uint32_t h = detail::read_u32_le(in);
    const std::uint32_t w = detail::read_u32_le(in);
    const std::uint32_t c = detail::read_u32_le(in);
    if (h > 100000 || w > 100000 || c > 1024)
        throw FormatError("implausible image file dimensions: " + path);
    Image img(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
    std::vector<float> row(img.data.size());
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(float)));
    if (!in) throw FormatError("truncated image file: " + path);
    for (std::size_t i = 0; i < row.size(); ++i) img.data[i] = row[i];
    return img;
}

/// Rounds every sample through float32. Pipeline stages exchange images as
/// float32 files; applying the same rounding to freshly computed images keeps
/// in-memory and on-disk values bit-identical.
inline Image round_to_float32(const Image& img) {
    Image out = img;
    for (auto& v : out.data) v = static_cast<double>(static_cast<float>(v));
    return out;
}

} // namespace splatedit

#endif
