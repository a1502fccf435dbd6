#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include "blurslam/errors.hpp"
#include "blurslam/image.hpp"
#include "blurslam/lie.hpp"

namespace blurslam {

struct TimedPose {
    double timestamp = 0.0;
    PoseSE3 pose;
};

/// Absolute trajectory error after closed-form rigid (optionally similarity)
/// alignment of the estimated translations onto ground truth.
struct AteReport {
    double rmse = 0.0;    // meters
    double mean = 0.0;    // mean residual norm
    double median = 0.0;
    double max = 0.0;
    PoseSE3 alignment;    // maps estimated points into the ground-truth frame
    double scale = 1.0;   // 1 unless with_scale
    int pairs = 0;
};

namespace detail {

/// Nearest-timestamp association between two sorted-by-copy timestamp lists.
inline std::vector<std::pair<size_t, size_t>> associate_nearest(
    const std::vector<TimedPose>& est, const std::vector<TimedPose>& gt,
    double tolerance) {
    std::vector<size_t> est_idx(est.size()), gt_idx(gt.size());
    for (size_t i = 0; i < est.size(); ++i) est_idx[i] = i;
    for (size_t i = 0; i < gt.size(); ++i) gt_idx[i] = i;
    std::sort(est_idx.begin(), est_idx.end(),
              [&](size_t a, size_t b) { return est[a].timestamp < est[b].timestamp; });
    std::sort(gt_idx.begin(), gt_idx.end(),
              [&](size_t a, size_t b) { return gt[a].timestamp < gt[b].timestamp; });

    std::vector<std::pair<size_t, size_t>> pairs;
    size_t j = 0;
    for (size_t ii = 0; ii < est_idx.size(); ++ii) {
        const double t = est[est_idx[ii]].timestamp;
        while (j + 1 < gt_idx.size() &&
               std::abs(gt[gt_idx[j + 1]].timestamp - t) <=
                   std::abs(gt[gt_idx[j]].timestamp - t))
            ++j;
        if (!gt_idx.empty() && std::abs(gt[gt_idx[j]].timestamp - t) <= tolerance)
            pairs.emplace_back(est_idx[ii], gt_idx[j]);
    }
    return pairs;
}

}  // namespace detail

inline AteReport ate_rmse(const std::vector<TimedPose>& estimated,
                          const std::vector<TimedPose>& groundtruth,
                          double tolerance = 0.02, bool with_scale = false) {
    const auto pairs = detail::associate_nearest(estimated, groundtruth, tolerance);
    if (pairs.size() < 2)
        throw InsufficientPairs("ate_rmse: " + std::to_string(pairs.size()) +
                                " associated pose pairs (need at least 2)");

    Eigen::Matrix3Xd src(3, pairs.size()), dst(3, pairs.size());
    for (size_t k = 0; k < pairs.size(); ++k) {
        src.col(k) = estimated[pairs[k].first].pose.t;
        dst.col(k) = groundtruth[pairs[k].second].pose.t;
    }
    const Eigen::Matrix4d sim = Eigen::umeyama(src, dst, with_scale);
    const Eigen::Matrix3d linear = sim.topLeftCorner<3, 3>();
    const double scale = with_scale ? std::cbrt(linear.determinant()) : 1.0;
    const Eigen::Matrix3d rot = linear / scale;

    AteReport rep;
    rep.scale = scale;
    rep.pairs = static_cast<int>(pairs.size());
    const Eigen::Quaterniond q(rot);
    rep.alignment = PoseSE3{UnitQuaternion(q.x(), q.y(), q.z(), q.w()),
                            sim.topRightCorner<3, 1>()};

    std::vector<double> residuals(pairs.size());
    double sq_sum = 0.0, sum = 0.0;
    for (size_t k = 0; k < pairs.size(); ++k) {
        const double r = (dst.col(k) - (linear * src.col(k) + sim.topRightCorner<3, 1>())).norm();
        residuals[k] = r;
        sq_sum += r * r;
        sum += r;
    }
    rep.rmse = std::sqrt(sq_sum / pairs.size());
    rep.mean = sum / pairs.size();
    rep.max = *std::max_element(residuals.begin(), residuals.end());
    std::sort(residuals.begin(), residuals.end());
    const size_t n = residuals.size();
    rep.median = (n % 2 == 1) ? residuals[n / 2]
                              : 0.5 * (residuals[n / 2 - 1] + residuals[n / 2]);
    return rep;
}

/// Peak signal-to-noise ratio for range-[0,1] images; +infinity for identical
/// inputs (the distinguished sentinel).
inline double psnr(const ImageBuffer& a, const ImageBuffer& b) {
    if (a.width() != b.width() || a.height() != b.height() ||
        a.channels() != b.channels())
        throw ShapeMismatch("psnr image shapes differ");
    double mse = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a.raw()[i] - b.raw()[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return -10.0 * std::log10(mse);
}

namespace detail {

inline const std::vector<double>& ssim_window() {
    static const std::vector<double> w = [] {
        std::vector<double> k(11);
        double sum = 0.0;
        for (int i = 0; i < 11; ++i) {
            const double d = i - 5.0;
            k[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
            sum += k[i];
        }
        for (double& v : k) v /= sum;
        std::vector<double> w2(121);
        for (int y = 0; y < 11; ++y)
            for (int x = 0; x < 11; ++x) w2[y * 11 + x] = k[y] * k[x];
        return w2;
    }();
    return w;
}

}  // namespace detail

struct SsimResult {
    double mean = 0.0;
    ImageBuffer gradient;  // d(mean SSIM)/d(first image), same shape as inputs
};

/// Mean local SSIM over valid (fully interior) 11x11 windows, Gaussian
/// weighting sigma=1.5, k1=0.01, k2=0.03, dynamic range 1, channels averaged.
/// When with_gradient is set, also returns the derivative of the mean SSIM
/// with respect to image `a`.
inline SsimResult ssim_detailed(const ImageBuffer& a, const ImageBuffer& b,
                                bool with_gradient) {
    if (a.width() != b.width() || a.height() != b.height() ||
        a.channels() != b.channels())
        throw ShapeMismatch("ssim image shapes differ");
    const int w = a.width(), h = a.height(), ch = a.channels();
    if (w < 11 || h < 11) throw ShapeMismatch("ssim needs at least 11x11 images");
    constexpr double kC1 = 0.01 * 0.01;
    constexpr double kC2 = 0.03 * 0.03;
    const std::vector<double>& win = detail::ssim_window();

    SsimResult out;
    if (with_gradient) out.gradient = ImageBuffer(w, h, ch);
    double total = 0.0;
    long count = 0;
    for (int c = 0; c < ch; ++c) {
        for (int wy = 0; wy + 11 <= h; ++wy) {
            for (int wx = 0; wx + 11 <= w; ++wx) {
                double mu_a = 0.0, mu_b = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
                for (int ky = 0; ky < 11; ++ky)
                    for (int kx = 0; kx < 11; ++kx) {
                        const double weight = win[ky * 11 + kx];
                        const double va = a.at(wx + kx, wy + ky, c);
                        const double vb = b.at(wx + kx, wy + ky, c);
                        mu_a += weight * va;
                        mu_b += weight * vb;
                        saa += weight * va * va;
                        sbb += weight * vb * vb;
                        sab += weight * va * vb;
                    }
                const double var_a = saa - mu_a * mu_a;
                const double var_b = sbb - mu_b * mu_b;
                const double cov = sab - mu_a * mu_b;
                const double a1 = 2.0 * mu_a * mu_b + kC1;
                const double a2 = 2.0 * cov + kC2;
                const double b1 = mu_a * mu_a + mu_b * mu_b + kC1;
                const double b2 = var_a + var_b + kC2;
                const double denom = b1 * b2;
                total += (a1 * a2) / denom;
                ++count;
                if (with_gradient) {
                    const double inv_d2 = 1.0 / (denom * denom);
                    for (int ky = 0; ky < 11; ++ky)
                        for (int kx = 0; kx < 11; ++kx) {
                            const double weight = win[ky * 11 + kx];
                            const double va = a.at(wx + kx, wy + ky, c);
                            const double vb = b.at(wx + kx, wy + ky, c);
                            const double d_a1 = 2.0 * mu_b * weight;
                            const double d_a2 = 2.0 * weight * (vb - mu_b);
                            const double d_b1 = 2.0 * mu_a * weight;
                            const double d_b2 = 2.0 * weight * (va - mu_a);
                            out.gradient.at(wx + kx, wy + ky, c) +=
                                ((d_a1 * a2 + a1 * d_a2) * denom -
                                 a1 * a2 * (d_b1 * b2 + b1 * d_b2)) *
                                inv_d2;
                        }
                }
            }
        }
    }
    out.mean = total / static_cast<double>(count);
    if (with_gradient) out.gradient *= 1.0 / static_cast<double>(count);
    return out;
}

inline double ssim(const ImageBuffer& a, const ImageBuffer& b) {
    return ssim_detailed(a, b, false).mean;
}

}  // namespace blurslam
