#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "blurslam/errors.hpp"

namespace blurslam {

/// Dense row-major, channel-interleaved image of doubles in [0, 1] for color
/// (meters for depth). Pixel (0, 0) is the center of the top-left pixel.
class ImageBuffer {
public:
    ImageBuffer() = default;
    ImageBuffer(int width, int height, int channels, double fill = 0.0)
        : w_(width), h_(height), c_(channels),
          data_(static_cast<size_t>(width) * height * channels, fill) {
        if (width <= 0 || height <= 0 || channels <= 0)
            throw DomainError("image dimensions must be positive");
    }

    int width() const { return w_; }
    int height() const { return h_; }
    int channels() const { return c_; }
    bool empty() const { return data_.empty(); }
    size_t size() const { return data_.size(); }

    double& at(int x, int y, int ch = 0) { return data_[index(x, y, ch)]; }
    double at(int x, int y, int ch = 0) const { return data_[index(x, y, ch)]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& raw() { return data_; }
    const std::vector<double>& raw() const { return data_; }

    bool in_bounds(int x, int y) const { return x >= 0 && x < w_ && y >= 0 && y < h_; }

    /// True when (u, v) has a full 2x2 bilinear support inside the image.
    bool bilinear_valid(double u, double v) const {
        return u >= 0.0 && v >= 0.0 && u <= w_ - 1.000001 && v <= h_ - 1.000001;
    }

    double sample_bilinear(double u, double v, int ch = 0) const {
        const int x0 = static_cast<int>(u);
        const int y0 = static_cast<int>(v);
        const double fx = u - x0, fy = v - y0;
        const double v00 = at(x0, y0, ch), v10 = at(x0 + 1, y0, ch);
        const double v01 = at(x0, y0 + 1, ch), v11 = at(x0 + 1, y0 + 1, ch);
        return (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11);
    }

    /// Bilinear value and its gradient (d/du, d/dv) at (u, v).
    void sample_bilinear_grad(double u, double v, int ch, double& value, double& gu,
                              double& gv) const {
        const int x0 = static_cast<int>(u);
        const int y0 = static_cast<int>(v);
        const double fx = u - x0, fy = v - y0;
        const double v00 = at(x0, y0, ch), v10 = at(x0 + 1, y0, ch);
        const double v01 = at(x0, y0 + 1, ch), v11 = at(x0 + 1, y0 + 1, ch);
        value = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11);
        gu = (1.0 - fy) * (v10 - v00) + fy * (v11 - v01);
        gv = (1.0 - fx) * (v01 - v00) + fx * (v11 - v10);
    }

    ImageBuffer& operator+=(const ImageBuffer& other) {
        if (other.w_ != w_ || other.h_ != h_ || other.c_ != c_)
            throw ShapeMismatch("image accumulation shape mismatch");
        for (size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
        return *this;
    }

    ImageBuffer& operator*=(double s) {
        for (double& v : data_) v *= s;
        return *this;
    }

private:
    size_t index(int x, int y, int ch) const {
        return (static_cast<size_t>(y) * w_ + x) * c_ + ch;
    }

    int w_ = 0, h_ = 0, c_ = 0;
    std::vector<double> data_;
};

/// BT.601 luminance of an RGB image (single channel passes through).
inline ImageBuffer to_gray(const ImageBuffer& img) {
    if (img.channels() == 1) return img;
    if (img.channels() != 3) throw ShapeMismatch("to_gray expects 1 or 3 channels");
    ImageBuffer out(img.width(), img.height(), 1);
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            out.at(x, y) = 0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) +
                           0.114 * img.at(x, y, 2);
    return out;
}

/// 5-tap binomial ([1 4 6 4 1]/16, clamped borders) smoothing followed by
/// factor-2 decimation at even coordinates, so level-l pixel centers sit at
/// full-resolution coordinate 2^l * x.
inline ImageBuffer downsample_half(const ImageBuffer& img) {
    static const double k[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
    const int w = img.width(), h = img.height(), c = img.channels();
    ImageBuffer tmp(w, h, c);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (int i = -2; i <= 2; ++i)
                    acc += k[i + 2] * img.at(std::clamp(x + i, 0, w - 1), y, ch);
                tmp.at(x, y, ch) = acc;
            }
    const int ow = (w + 1) / 2, oh = (h + 1) / 2;
    ImageBuffer out(ow, oh, c);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x)
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (int i = -2; i <= 2; ++i)
                    acc += k[i + 2] * tmp.at(x * 2, std::clamp(y * 2 + i, 0, h - 1), ch);
                out.at(x, y, ch) = acc;
            }
    return out;
}

/// Decimate a depth map by taking every other sample (no smoothing: averaging
/// across depth discontinuities would invent geometry).
inline ImageBuffer decimate_half(const ImageBuffer& img) {
    const int ow = (img.width() + 1) / 2, oh = (img.height() + 1) / 2;
    ImageBuffer out(ow, oh, img.channels());
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x)
            for (int ch = 0; ch < img.channels(); ++ch)
                out.at(x, y, ch) = img.at(x * 2, y * 2, ch);
    return out;
}

/// levels images, [0] full resolution.
inline std::vector<ImageBuffer> build_pyramid(const ImageBuffer& img, int levels,
                                              bool smooth = true) {
    if (levels < 1) throw DomainError("pyramid needs at least one level");
    std::vector<ImageBuffer> pyr;
    pyr.reserve(levels);
    pyr.push_back(img);
    for (int l = 1; l < levels; ++l)
        pyr.push_back(smooth ? downsample_half(pyr.back()) : decimate_half(pyr.back()));
    return pyr;
}

/// Central-difference gradient magnitude; border pixels get zero.
inline ImageBuffer gradient_magnitude(const ImageBuffer& gray) {
    if (gray.channels() != 1) throw ShapeMismatch("gradient_magnitude expects 1 channel");
    ImageBuffer out(gray.width(), gray.height(), 1);
    for (int y = 1; y + 1 < gray.height(); ++y)
        for (int x = 1; x + 1 < gray.width(); ++x) {
            const double gx = 0.5 * (gray.at(x + 1, y) - gray.at(x - 1, y));
            const double gy = 0.5 * (gray.at(x, y + 1) - gray.at(x, y - 1));
            out.at(x, y) = std::hypot(gx, gy);
        }
    return out;
}

inline double mean_abs_diff(const ImageBuffer& a, const ImageBuffer& b) {
    if (a.size() != b.size()) throw ShapeMismatch("mean_abs_diff shape mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += std::abs(a.raw()[i] - b.raw()[i]);
    return acc / static_cast<double>(a.size());
}

}  // namespace blurslam
