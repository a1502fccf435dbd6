#pragma once

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "blurslam/errors.hpp"
#include "blurslam/image.hpp"

namespace blurslam {

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f != nullptr) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// libpng reports errors by longjmp-ing back to the caller's setjmp point;
// exceptions must not unwind through its C frames. The handlers below keep
// it silent; each wrapper throws after control returns to its own frame.
[[noreturn]] inline void png_error_jump(png_structp png, png_const_charp) {
    longjmp(png_jmpbuf(png), 1);
}

inline void png_warning_sink(png_structp, png_const_charp) {}

struct PngWriter {
    png_structp png = nullptr;
    png_infop info = nullptr;
    PngWriter() {
        png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_jump,
                                      png_warning_sink);
        if (png != nullptr) info = png_create_info_struct(png);
    }
    ~PngWriter() {
        if (png != nullptr) png_destroy_write_struct(&png, info != nullptr ? &info : nullptr);
    }
    bool ok() const { return png != nullptr && info != nullptr; }
};

struct PngReader {
    png_structp png = nullptr;
    png_infop info = nullptr;
    PngReader() {
        png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_jump,
                                     png_warning_sink);
        if (png != nullptr) info = png_create_info_struct(png);
    }
    ~PngReader() {
        if (png != nullptr) png_destroy_read_struct(&png, info != nullptr ? &info : nullptr, nullptr);
    }
    bool ok() const { return png != nullptr && info != nullptr; }
};

inline std::uint8_t quantize8(double v) {
    const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

}  // namespace detail

/// Write a 3-channel image with values in [0, 1] as an 8-bit RGB PNG.
inline void write_png_rgb8(const std::string& path, const ImageBuffer& image) {
    if (image.channels() != 3) throw ShapeMismatch("write_png_rgb8 expects 3 channels");
    detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw MissingFile(path);

    detail::PngWriter w;
    if (!w.ok()) throw Error("png: writer allocation failed");
    std::vector<std::uint8_t> row(static_cast<size_t>(image.width()) * 3);
    if (setjmp(png_jmpbuf(w.png))) throw Error("png: failed to write " + path);

    png_init_io(w.png, fp.get());
    png_set_IHDR(w.png, w.info, image.width(), image.height(), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(w.png, w.info);
    for (int y = 0; y < image.height(); ++y) {
        for (int x = 0; x < image.width(); ++x)
            for (int c = 0; c < 3; ++c)
                row[3 * static_cast<size_t>(x) + c] = detail::quantize8(image.at(x, y, c));
        png_write_row(w.png, row.data());
    }
    png_write_end(w.png, nullptr);
}

/// Write a 1-channel depth image in meters as a 16-bit grayscale PNG storing
/// round(depth / depth_scale); zero stays zero, the invalid marker.
inline void write_png_gray16(const std::string& path, const ImageBuffer& image,
                             double depth_scale) {
    if (image.channels() != 1) throw ShapeMismatch("write_png_gray16 expects 1 channel");
    if (!(depth_scale > 0.0)) throw DomainError("depth_scale must be positive");
    detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw MissingFile(path);

    detail::PngWriter w;
    if (!w.ok()) throw Error("png: writer allocation failed");
    std::vector<std::uint8_t> row(static_cast<size_t>(image.width()) * 2);
    if (setjmp(png_jmpbuf(w.png))) throw Error("png: failed to write " + path);

    png_init_io(w.png, fp.get());
    png_set_IHDR(w.png, w.info, image.width(), image.height(), 16, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(w.png, w.info);
    for (int y = 0; y < image.height(); ++y) {
        for (int x = 0; x < image.width(); ++x) {
            const long units = std::lround(image.at(x, y) / depth_scale);
            const std::uint16_t v =
                units <= 0 ? 0 : (units >= 65535 ? 65535 : static_cast<std::uint16_t>(units));
            row[2 * static_cast<size_t>(x)] = static_cast<std::uint8_t>(v >> 8);
            row[2 * static_cast<size_t>(x) + 1] = static_cast<std::uint8_t>(v & 0xff);
        }
        png_write_row(w.png, row.data());
    }
    png_write_end(w.png, nullptr);
}

/// Read an 8-bit color PNG into a 3-channel image with values in [0, 1].
/// Palette/gray/alpha inputs are expanded to plain RGB.
inline ImageBuffer read_png_rgb8(const std::string& path) {
    detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw MissingFile(path);

    detail::PngReader r;
    if (!r.ok()) throw Error("png: reader allocation failed");
    ImageBuffer out;
    std::vector<std::uint8_t> row;
    if (setjmp(png_jmpbuf(r.png))) throw Error("png: failed to read " + path);

    png_init_io(r.png, fp.get());
    png_read_info(r.png, r.info);
    png_set_palette_to_rgb(r.png);
    png_set_expand_gray_1_2_4_to_8(r.png);
    png_set_strip_16(r.png);
    png_set_strip_alpha(r.png);
    png_set_gray_to_rgb(r.png);
    png_read_update_info(r.png, r.info);

    const int w = static_cast<int>(png_get_image_width(r.png, r.info));
    const int h = static_cast<int>(png_get_image_height(r.png, r.info));
    if (png_get_channels(r.png, r.info) != 3)
        throw Error("png: " + path + ": not decodable to RGB");

    out = ImageBuffer(w, h, 3);
    row.resize(static_cast<size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        png_read_row(r.png, row.data(), nullptr);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) out.at(x, y, c) = row[3 * static_cast<size_t>(x) + c] / 255.0;
    }
    png_read_end(r.png, nullptr);
    return out;
}

/// Read a 16-bit grayscale PNG into a 1-channel image in meters
/// (stored_value * depth_scale; zero stays zero = invalid).
inline ImageBuffer read_png_gray16(const std::string& path, double depth_scale) {
    if (!(depth_scale > 0.0)) throw DomainError("depth_scale must be positive");
    detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw MissingFile(path);

    detail::PngReader r;
    if (!r.ok()) throw Error("png: reader allocation failed");
    ImageBuffer out;
    std::vector<std::uint8_t> row;
    if (setjmp(png_jmpbuf(r.png))) throw Error("png: failed to read " + path);

    png_init_io(r.png, fp.get());
    png_read_info(r.png, r.info);
    if (png_get_color_type(r.png, r.info) != PNG_COLOR_TYPE_GRAY ||
        png_get_bit_depth(r.png, r.info) != 16)
        throw Error("png: " + path + ": expected 16-bit grayscale");
    png_read_update_info(r.png, r.info);

    const int w = static_cast<int>(png_get_image_width(r.png, r.info));
    const int h = static_cast<int>(png_get_image_height(r.png, r.info));
    out = ImageBuffer(w, h, 1);
    row.resize(static_cast<size_t>(w) * 2);
    for (int y = 0; y < h; ++y) {
        png_read_row(r.png, row.data(), nullptr);
        for (int x = 0; x < w; ++x) {
            const std::uint16_t v = static_cast<std::uint16_t>(
                (row[2 * static_cast<size_t>(x)] << 8) | row[2 * static_cast<size_t>(x) + 1]);
            out.at(x, y) = v * depth_scale;
        }
    }
    png_read_end(r.png, nullptr);
    return out;
}

}  // namespace blurslam
