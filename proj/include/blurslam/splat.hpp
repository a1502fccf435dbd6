#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "blurslam/camera.hpp"
#include "blurslam/errors.hpp"
#include "blurslam/image.hpp"
#include "blurslam/lie.hpp"
#include "blurslam/parallel.hpp"

namespace blurslam {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) {
    if (!(p > 0.0 && p < 1.0)) throw DomainError("logit argument must lie in (0,1)");
    return std::log(p / (1.0 - p));
}

/// Anisotropic 3D Gaussian scene primitive. Scale is stored as log-scale and
/// opacity as a pre-sigmoid logit so that unconstrained gradient steps keep
/// the primitive valid (scale > 0, opacity in (0,1)) by construction.
struct Gaussian3D {
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();        // world, meters
    Eigen::Vector3d log_scale = Eigen::Vector3d::Zero();   // exp() = std dev, meters
    UnitQuaternion rotation;                                // principal-axis frame
    double opacity_logit = 0.0;                             // sigmoid() = opacity
    Eigen::Vector3d color = Eigen::Vector3d::Zero();        // RGB in [0,1]

    // Componentwise libm calls: Eigen's packet exp/log rounds SIMD lanes
    // differently from the scalar tail, which would give a Constant() scale
    // a spurious sub-ulp anisotropy.
    Eigen::Vector3d scale() const {
        return {std::exp(log_scale.x()), std::exp(log_scale.y()), std::exp(log_scale.z())};
    }
    double opacity() const { return sigmoid(opacity_logit); }
    void set_scale(const Eigen::Vector3d& s) {
        log_scale = Eigen::Vector3d(std::log(s.x()), std::log(s.y()), std::log(s.z()));
    }
    void set_opacity(double o) { opacity_logit = logit(o); }

    /// World-space covariance R * S * S^T * R^T.
    Eigen::Matrix3d covariance() const {
        const Eigen::Matrix3d r = rotation.matrix();
        const Eigen::Vector3d s2 = scale().cwiseAbs2();
        return r * s2.asDiagonal() * r.transpose();
    }
};

/// Growable Gaussian collection with stable identifiers (survive
/// densify/prune reorderings) and accumulated positional-gradient statistics
/// used by the densification policy.
struct GaussianMap {
    std::vector<Gaussian3D> gaussians;
    std::vector<std::uint64_t> ids;
    std::vector<double> grad2d_accum;   // sum of ||dL/dmean2d|| over renders
    std::vector<int> grad2d_count;      // number of renders the Gaussian touched
    std::uint64_t next_id = 0;

    size_t size() const { return gaussians.size(); }
    bool empty() const { return gaussians.empty(); }

    std::uint64_t add(const Gaussian3D& g) {
        gaussians.push_back(g);
        ids.push_back(next_id);
        grad2d_accum.push_back(0.0);
        grad2d_count.push_back(0);
        return next_id++;
    }

    void reset_grad_stats() {
        std::fill(grad2d_accum.begin(), grad2d_accum.end(), 0.0);
        std::fill(grad2d_count.begin(), grad2d_count.end(), 0);
    }

    /// Keep only Gaussians where keep[i] is true; ids travel with them.
    void filter(const std::vector<char>& keep) {
        if (keep.size() != gaussians.size()) throw ShapeMismatch("filter mask size");
        size_t out = 0;
        for (size_t i = 0; i < gaussians.size(); ++i) {
            if (!keep[i]) continue;
            gaussians[out] = gaussians[i];
            ids[out] = ids[i];
            grad2d_accum[out] = grad2d_accum[i];
            grad2d_count[out] = grad2d_count[i];
            ++out;
        }
        gaussians.resize(out);
        ids.resize(out);
        grad2d_accum.resize(out);
        grad2d_count.resize(out);
    }
};

/// Screen-space footprint of a projected Gaussian.
struct Gaussian2D {
    Eigen::Vector2d mean2d = Eigen::Vector2d::Zero();  // pixels
    Eigen::Matrix2d cov2d = Eigen::Matrix2d::Zero();   // pixels^2, SPD
    double depth = 0.0;                                // camera-frame z, meters
    double opacity = 0.0;
    Eigen::Vector3d color = Eigen::Vector3d::Zero();
};

namespace splat_constants {
constexpr double kNearPlane = 0.05;       // meters; cull closer Gaussians
constexpr double kCovReg = 0.3;           // px^2 added to cov2d diagonal
constexpr double kAlphaClamp = 0.999;     // per-sample opacity ceiling
constexpr double kTransmittanceStop = 1e-4;
constexpr double kBboxSigmas = 4.0;       // footprint radius in screen sigmas
// The Gaussian falloff is windowed: alpha = o * max(0, G - kEdgeCut) with
// G = exp(-m/2). The subtracted tail makes the contribution reach exactly
// zero at the kBboxSigmas footprint boundary, so the discrete pixel-set cut
// introduces no value discontinuity as parameters move (the render stays a
// continuous function of all inputs, which finite-difference checks rely on).
inline const double kEdgeCut = std::exp(-0.5 * kBboxSigmas * kBboxSigmas);
constexpr int kRowBands = 16;             // fixed parallel work decomposition
}  // namespace splat_constants

/// Camera pose convention: scene poses (keyframe trajectories) are
/// camera-to-world; the rasterizer consumes the inverse. This helper is the
/// single conversion authority.
inline PoseSE3 world_to_camera(const PoseSE3& pose_wc) { return pose_wc.inverse(); }

/// Project one Gaussian into the image plane of a camera at pose_wc
/// (camera-to-world). Returns nullopt when culled (behind the near plane or
/// footprint entirely off-screen).
inline std::optional<Gaussian2D> project_gaussian(const Gaussian3D& g,
                                                  const PoseSE3& pose_wc,
                                                  const Intrinsics& cam) {
    using namespace splat_constants;
    const PoseSE3 pose_cw = world_to_camera(pose_wc);
    const Eigen::Vector3d p_cam = pose_cw.act(g.mean);
    if (p_cam.z() <= kNearPlane) return std::nullopt;

    const Eigen::Matrix<double, 2, 3> J = cam.project_jacobian(p_cam);
    const Eigen::Matrix3d w_rot = pose_cw.q.matrix();
    const Eigen::Matrix3d cov_cam = w_rot * g.covariance() * w_rot.transpose();
    Eigen::Matrix2d cov2d = J * cov_cam * J.transpose();
    cov2d(0, 0) += kCovReg;
    cov2d(1, 1) += kCovReg;

    Gaussian2D out;
    out.mean2d = cam.project(p_cam);
    out.cov2d = cov2d;
    out.depth = p_cam.z();
    out.opacity = g.opacity();
    out.color = g.color;

    // Footprint: kBboxSigmas times the dominant screen-space std deviation.
    const double mid = 0.5 * (cov2d(0, 0) + cov2d(1, 1));
    const double half = 0.5 * (cov2d(0, 0) - cov2d(1, 1));
    const double lam_max = mid + std::sqrt(half * half + cov2d(0, 1) * cov2d(0, 1));
    const double radius = kBboxSigmas * std::sqrt(lam_max);
    if (out.mean2d.x() + radius < 0.0 || out.mean2d.x() - radius > cam.width - 1 ||
        out.mean2d.y() + radius < 0.0 || out.mean2d.y() - radius > cam.height - 1)
        return std::nullopt;
    return out;
}

namespace detail {

/// Flattened, depth-sorted projected Gaussian used by the compositing loops.
struct Splat {
    double mx, my;          // mean2d
    double ca, cb, cc;      // conic = inverse cov2d (a b; b c)
    double opacity;
    double r, g, b;
    double depth;
    int x0, x1, y0, y1;     // inclusive pixel bounds, clamped to the image
    std::uint32_t gauss_idx;
};

inline std::vector<Splat> prepare_splats(const GaussianMap& map, const PoseSE3& pose_wc,
                                         const Intrinsics& cam) {
    using namespace splat_constants;
    std::vector<Splat> splats;
    splats.reserve(map.size());
    for (std::uint32_t i = 0; i < map.size(); ++i) {
        const std::optional<Gaussian2D> proj = project_gaussian(map.gaussians[i], pose_wc, cam);
        if (!proj) continue;
        const Eigen::Matrix2d& cov = proj->cov2d;
        const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(0, 1);
        if (det <= 0.0) continue;  // cannot happen after +kCovReg, defensive only
        const double inv_det = 1.0 / det;

        const double mid = 0.5 * (cov(0, 0) + cov(1, 1));
        const double half = 0.5 * (cov(0, 0) - cov(1, 1));
        const double lam_max = mid + std::sqrt(half * half + cov(0, 1) * cov(0, 1));
        const double radius = kBboxSigmas * std::sqrt(lam_max);

        Splat s;
        s.mx = proj->mean2d.x();
        s.my = proj->mean2d.y();
        s.ca = cov(1, 1) * inv_det;
        s.cb = -cov(0, 1) * inv_det;
        s.cc = cov(0, 0) * inv_det;
        s.opacity = proj->opacity;
        s.r = proj->color.x();
        s.g = proj->color.y();
        s.b = proj->color.z();
        s.depth = proj->depth;
        s.x0 = std::max(0, static_cast<int>(std::ceil(s.mx - radius)));
        s.x1 = std::min(cam.width - 1, static_cast<int>(std::floor(s.mx + radius)));
        s.y0 = std::max(0, static_cast<int>(std::ceil(s.my - radius)));
        s.y1 = std::min(cam.height - 1, static_cast<int>(std::floor(s.my + radius)));
        if (s.x0 > s.x1 || s.y0 > s.y1) continue;
        s.gauss_idx = i;
        splats.push_back(s);
    }
    // Canonical order: nearest first; ties broken by the stable identifier so
    // the composite is invariant to submission order.
    std::sort(splats.begin(), splats.end(), [&](const Splat& a, const Splat& b) {
        if (a.depth != b.depth) return a.depth < b.depth;
        return map.ids[a.gauss_idx] < map.ids[b.gauss_idx];
    });
    return splats;
}

/// Row range [begin, end) of one of the fixed parallel bands.
inline std::pair<int, int> band_rows(int band, int height) {
    const int n = splat_constants::kRowBands;
    const int y0 = static_cast<int>(static_cast<std::int64_t>(height) * band / n);
    const int y1 = static_cast<int>(static_cast<std::int64_t>(height) * (band + 1) / n);
    return {y0, y1};
}

/// Scanline sweep: walks a row left to right maintaining the set of splats
/// whose bounding box covers the current pixel, kept in canonical depth order
/// (splat indices are already globally depth-sorted, so ordering by index is
/// ordering by depth). Both rasterization passes drive the identical sweep,
/// which makes per-pixel "position in the active list" a stable handle for
/// replaying the forward compositing decisions in the backward pass.
struct RowSweep {
    const std::vector<Splat>& splats;
    std::vector<std::uint32_t> row;     // splats covering this row, by x0
    std::vector<std::uint32_t> active;  // covering current pixel, depth order
    size_t next = 0;

    explicit RowSweep(const std::vector<Splat>& all) : splats(all) {}

    void start_row(const std::vector<std::uint32_t>& band_list, int y) {
        row.clear();
        for (std::uint32_t si : band_list)
            if (y >= splats[si].y0 && y <= splats[si].y1) row.push_back(si);
        std::sort(row.begin(), row.end(), [&](std::uint32_t a, std::uint32_t b) {
            if (splats[a].x0 != splats[b].x0) return splats[a].x0 < splats[b].x0;
            return a < b;
        });
        active.clear();
        next = 0;
    }

    const std::vector<std::uint32_t>& advance(int x) {
        while (next < row.size() && splats[row[next]].x0 <= x) {
            const std::uint32_t si = row[next++];
            active.insert(std::lower_bound(active.begin(), active.end(), si), si);
        }
        size_t out = 0;
        for (size_t i = 0; i < active.size(); ++i)
            if (splats[active[i]].x1 >= x) active[out++] = active[i];
        active.resize(out);
        return active;
    }
};

}  // namespace detail

/// Forward render outputs. `alpha` is 1 - T_final; `weight_sum` is the
/// independently accumulated sum of per-sample compositing weights
/// alpha_i * T_i, kept separate so conservation (weight_sum + T_final == 1)
/// is a checkable property rather than an identity of the implementation.
struct RenderResult {
    ImageBuffer color;       // 3 channels
    ImageBuffer depth;       // 1 channel, alpha-weighted expected depth
    ImageBuffer alpha;       // 1 channel, 1 - transmittance
    ImageBuffer weight_sum;  // 1 channel, sum of alpha_i * T_i
};

/// Cached forward state consumed by the reverse pass.
struct RenderAux {
    std::vector<detail::Splat> splats;
    std::vector<std::vector<std::uint32_t>> band_lists;  // per band, depth order
    std::vector<std::int32_t> last_contrib;              // per pixel, index into band list
    std::vector<double> t_final;                         // per pixel
};

inline RenderResult rasterize(const GaussianMap& map, const PoseSE3& pose_wc,
                              const Intrinsics& cam, RenderAux* aux = nullptr) {
    using namespace splat_constants;
    const int w = cam.width, h = cam.height;
    RenderResult out{ImageBuffer(w, h, 3), ImageBuffer(w, h, 1), ImageBuffer(w, h, 1),
                     ImageBuffer(w, h, 1)};

    std::vector<detail::Splat> splats = detail::prepare_splats(map, pose_wc, cam);
    std::vector<std::vector<std::uint32_t>> band_lists(kRowBands);
    for (int band = 0; band < kRowBands; ++band) {
        const auto [y0, y1] = detail::band_rows(band, h);
        for (std::uint32_t si = 0; si < splats.size(); ++si)
            if (splats[si].y1 >= y0 && splats[si].y0 < y1) band_lists[band].push_back(si);
    }

    std::vector<std::int32_t> last_contrib(static_cast<size_t>(w) * h, -1);
    std::vector<double> t_final(static_cast<size_t>(w) * h, 1.0);

    parallel_chunks(kRowBands, [&](int band) {
        const auto [y0, y1] = detail::band_rows(band, h);
        detail::RowSweep sweep(splats);
        for (int y = y0; y < y1; ++y) {
            sweep.start_row(band_lists[band], y);
            for (int x = 0; x < w; ++x) {
                const std::vector<std::uint32_t>& active = sweep.advance(x);
                double t = 1.0;
                double cr = 0.0, cg = 0.0, cb = 0.0, cd = 0.0, cw = 0.0;
                std::int32_t last = -1;
                for (std::uint32_t li = 0; li < active.size(); ++li) {
                    const detail::Splat& s = splats[active[li]];
                    const double dx = x - s.mx, dy = y - s.my;
                    const double m = s.ca * dx * dx + 2.0 * s.cb * dx * dy + s.cc * dy * dy;
                    if (m >= kBboxSigmas * kBboxSigmas) continue;  // outside support
                    const double geff = std::exp(-0.5 * m) - kEdgeCut;
                    if (geff <= 0.0) continue;
                    const double alpha = std::min(kAlphaClamp, s.opacity * geff);
                    const double wgt = alpha * t;
                    cr += wgt * s.r;
                    cg += wgt * s.g;
                    cb += wgt * s.b;
                    cd += wgt * s.depth;
                    cw += wgt;
                    t *= (1.0 - alpha);
                    last = static_cast<std::int32_t>(li);
                    if (t < kTransmittanceStop) break;
                }
                out.color.at(x, y, 0) = cr;
                out.color.at(x, y, 1) = cg;
                out.color.at(x, y, 2) = cb;
                out.depth.at(x, y) = cd;
                out.alpha.at(x, y) = 1.0 - t;
                out.weight_sum.at(x, y) = cw;
                last_contrib[static_cast<size_t>(y) * w + x] = last;
                t_final[static_cast<size_t>(y) * w + x] = t;
            }
        }
    });

    if (aux) {
        aux->splats = std::move(splats);
        aux->band_lists = std::move(band_lists);
        aux->last_contrib = std::move(last_contrib);
        aux->t_final = std::move(t_final);
    }
    return out;
}

/// Upstream loss derivatives; null members mean "zero everywhere".
struct LossGradientImages {
    const ImageBuffer* d_color = nullptr;  // 3 channels
    const ImageBuffer* d_depth = nullptr;  // 1 channel
    const ImageBuffer* d_alpha = nullptr;  // 1 channel (w.r.t. 1 - T_final)
};

/// Reverse-mode accumulation results, aligned with the map's Gaussian order.
/// d_rot and d_pose live in right-multiplicative local tangents: a rotation
/// row holds dL/d(delta) for q -> q * exp(delta); d_pose stacks [rot; trans]
/// of the camera-to-world pose parameter.
struct MapGradients {
    Eigen::Matrix<double, Eigen::Dynamic, 3> d_mean;
    Eigen::Matrix<double, Eigen::Dynamic, 3> d_log_scale;
    Eigen::Matrix<double, Eigen::Dynamic, 3> d_rot;
    Eigen::VectorXd d_opacity_logit;
    Eigen::Matrix<double, Eigen::Dynamic, 3> d_color;
    Eigen::Matrix<double, Eigen::Dynamic, 2> d_mean2d;  // densification statistic
    Eigen::Matrix<double, 6, 1> d_pose = Eigen::Matrix<double, 6, 1>::Zero();

    explicit MapGradients(size_t n = 0)
        : d_mean(Eigen::Matrix<double, Eigen::Dynamic, 3>::Zero(n, 3)),
          d_log_scale(Eigen::Matrix<double, Eigen::Dynamic, 3>::Zero(n, 3)),
          d_rot(Eigen::Matrix<double, Eigen::Dynamic, 3>::Zero(n, 3)),
          d_opacity_logit(Eigen::VectorXd::Zero(n)),
          d_color(Eigen::Matrix<double, Eigen::Dynamic, 3>::Zero(n, 3)),
          d_mean2d(Eigen::Matrix<double, Eigen::Dynamic, 2>::Zero(n, 2)) {}

    void add_scaled(const MapGradients& other, double scale) {
        d_mean += scale * other.d_mean;
        d_log_scale += scale * other.d_log_scale;
        d_rot += scale * other.d_rot;
        d_opacity_logit += scale * other.d_opacity_logit;
        d_color += scale * other.d_color;
        d_mean2d += scale * other.d_mean2d;
        d_pose += scale * other.d_pose;
    }
};

namespace detail {

/// Per-splat screen-space accumulators produced by the compositing backward
/// sweep; the geometric chain to world parameters runs once per splat after.
struct SplatAccum {
    double d_mx = 0.0, d_my = 0.0;          // dL/dmean2d
    double d_s00 = 0.0, d_s01 = 0.0, d_s11 = 0.0;  // dL/dcov2d (symmetric)
    double d_opacity = 0.0;                  // dL/do (post-sigmoid)
    double d_r = 0.0, d_g = 0.0, d_b = 0.0;  // dL/dcolor
    double d_depth = 0.0;                    // dL/d(depth output channel)
};

inline double frob_skew_x(const Eigen::Matrix3d& m) { return m(2, 1) - m(1, 2); }
inline double frob_skew_y(const Eigen::Matrix3d& m) { return m(0, 2) - m(2, 0); }
inline double frob_skew_z(const Eigen::Matrix3d& m) { return m(1, 0) - m(0, 1); }

}  // namespace detail

/// Reverse pass matching a previous rasterize() call (same map/pose/cam) whose
/// state was captured in aux. All compositing decisions (bounding boxes,
/// opacity clamp, early termination point) replay identically.
inline MapGradients rasterize_backward(const GaussianMap& map, const PoseSE3& pose_wc,
                                       const Intrinsics& cam, const RenderAux& aux,
                                       const LossGradientImages& up) {
    using namespace splat_constants;
    const int w = cam.width, h = cam.height;
    const std::vector<detail::Splat>& splats = aux.splats;

    // Band-parallel compositing backward with per-band accumulators, reduced
    // in fixed band order so results are independent of the thread count.
    std::vector<std::vector<detail::SplatAccum>> band_acc(
        kRowBands, std::vector<detail::SplatAccum>(splats.size()));

    parallel_chunks(kRowBands, [&](int band) {
        const auto [y0, y1] = detail::band_rows(band, h);
        std::vector<detail::SplatAccum>& acc = band_acc[band];
        detail::RowSweep sweep(splats);
        for (int y = y0; y < y1; ++y) {
            sweep.start_row(aux.band_lists[band], y);
            for (int x = 0; x < w; ++x) {
                const std::vector<std::uint32_t>& active = sweep.advance(x);
                const size_t px = static_cast<size_t>(y) * w + x;
                const std::int32_t last = aux.last_contrib[px];
                if (last < 0) continue;
                double dc0 = 0.0, dc1 = 0.0, dc2 = 0.0, dd = 0.0, da = 0.0;
                if (up.d_color) {
                    dc0 = up.d_color->at(x, y, 0);
                    dc1 = up.d_color->at(x, y, 1);
                    dc2 = up.d_color->at(x, y, 2);
                }
                if (up.d_depth) dd = up.d_depth->at(x, y);
                if (up.d_alpha) da = up.d_alpha->at(x, y);
                if (dc0 == 0.0 && dc1 == 0.0 && dc2 == 0.0 && dd == 0.0 && da == 0.0)
                    continue;

                // Suffix sums over later contributors j > i of w_j * {c, d, 1}.
                double sc0 = 0.0, sc1 = 0.0, sc2 = 0.0, sd = 0.0, sa = 0.0;
                double t_run = aux.t_final[px];
                for (std::int32_t li = last; li >= 0; --li) {
                    const detail::Splat& s = splats[active[li]];
                    const double dx = x - s.mx, dy = y - s.my;
                    const double u0 = s.ca * dx + s.cb * dy;
                    const double u1 = s.cb * dx + s.cc * dy;
                    const double m = u0 * dx + u1 * dy;
                    if (m >= kBboxSigmas * kBboxSigmas) continue;  // outside support
                    const double gval = std::exp(-0.5 * m);
                    const double geff = gval - kEdgeCut;
                    if (geff <= 0.0) continue;
                    const double alpha_raw = s.opacity * geff;
                    const double alpha = std::min(kAlphaClamp, alpha_raw);
                    const double t_before = t_run / (1.0 - alpha);
                    const double wgt = alpha * t_before;

                    detail::SplatAccum& a = acc[active[li]];
                    a.d_r += wgt * dc0;
                    a.d_g += wgt * dc1;
                    a.d_b += wgt * dc2;
                    a.d_depth += wgt * dd;

                    const double d_w = dc0 * s.r + dc1 * s.g + dc2 * s.b + dd * s.depth + da;
                    const double suffix = dc0 * sc0 + dc1 * sc1 + dc2 * sc2 + dd * sd + da * sa;
                    const double d_alpha = t_before * d_w - suffix / (1.0 - alpha);

                    if (alpha_raw < kAlphaClamp) {
                        a.d_opacity += geff * d_alpha;
                        const double d_m = -0.5 * s.opacity * gval * d_alpha;
                        // m = Delta^T Y Delta, Delta = pixel - mean2d.
                        a.d_mx += -2.0 * d_m * u0;
                        a.d_my += -2.0 * d_m * u1;
                        // dL/dcov2d = -d_m * u u^T (u = Y Delta).
                        a.d_s00 += -d_m * u0 * u0;
                        a.d_s01 += -d_m * u0 * u1;
                        a.d_s11 += -d_m * u1 * u1;
                    }

                    sc0 += wgt * s.r;
                    sc1 += wgt * s.g;
                    sc2 += wgt * s.b;
                    sd += wgt * s.depth;
                    sa += wgt;
                    t_run = t_before;
                }
            }
        }
    });

    std::vector<detail::SplatAccum> acc(splats.size());
    for (int band = 0; band < kRowBands; ++band) {
        for (size_t si = 0; si < splats.size(); ++si) {
            const detail::SplatAccum& a = band_acc[band][si];
            detail::SplatAccum& o = acc[si];
            o.d_mx += a.d_mx;
            o.d_my += a.d_my;
            o.d_s00 += a.d_s00;
            o.d_s01 += a.d_s01;
            o.d_s11 += a.d_s11;
            o.d_opacity += a.d_opacity;
            o.d_r += a.d_r;
            o.d_g += a.d_g;
            o.d_b += a.d_b;
            o.d_depth += a.d_depth;
        }
    }

    // Geometric chain, once per surviving splat, in canonical splat order.
    MapGradients grads(map.size());
    const PoseSE3 pose_cw = world_to_camera(pose_wc);
    const Eigen::Matrix3d w_rot = pose_cw.q.matrix();
    for (size_t si = 0; si < splats.size(); ++si) {
        const detail::SplatAccum& a = acc[si];
        const std::uint32_t gi = splats[si].gauss_idx;
        const Gaussian3D& g = map.gaussians[gi];

        grads.d_color.row(gi) += Eigen::RowVector3d(a.d_r, a.d_g, a.d_b);
        const double o = g.opacity();
        grads.d_opacity_logit(gi) += o * (1.0 - o) * a.d_opacity;
        grads.d_mean2d.row(gi) += Eigen::RowVector2d(a.d_mx, a.d_my);

        const Eigen::Vector3d p_cam = pose_cw.act(g.mean);
        const double z = p_cam.z();
        const Eigen::Matrix<double, 2, 3> J = cam.project_jacobian(p_cam);

        const Eigen::Matrix3d rot_g = g.rotation.matrix();
        const Eigen::Vector3d s = g.scale();
        const Eigen::Matrix3d m_rs = rot_g * s.asDiagonal();
        const Eigen::Matrix3d cov_w = m_rs * m_rs.transpose();
        const Eigen::Matrix3d cov_cam = w_rot * cov_w * w_rot.transpose();

        Eigen::Matrix2d d_cov2d;
        d_cov2d << a.d_s00, a.d_s01, a.d_s01, a.d_s11;

        const Eigen::Matrix3d d_cov_cam = J.transpose() * d_cov2d * J;
        const Eigen::Matrix<double, 2, 3> d_j = 2.0 * d_cov2d * J * cov_cam;

        // dL/dp_cam: projection of the mean, depth channel, and the
        // second-order dependence of J on the camera-frame mean.
        Eigen::Vector3d d_p_cam =
            J.transpose() * Eigen::Vector2d(a.d_mx, a.d_my) +
            Eigen::Vector3d(0.0, 0.0, a.d_depth);
        const double inv_z2 = 1.0 / (z * z);
        d_p_cam.x() += d_j(0, 2) * (-cam.fx * inv_z2);
        d_p_cam.y() += d_j(1, 2) * (-cam.fy * inv_z2);
        d_p_cam.z() += d_j(0, 0) * (-cam.fx * inv_z2) +
                       d_j(0, 2) * (2.0 * cam.fx * p_cam.x() * inv_z2 / z) +
                       d_j(1, 1) * (-cam.fy * inv_z2) +
                       d_j(1, 2) * (2.0 * cam.fy * p_cam.y() * inv_z2 / z);

        grads.d_mean.row(gi) += (w_rot.transpose() * d_p_cam).transpose();

        // Camera pose tangent (camera-to-world, right-multiplicative).
        grads.d_pose.head<3>() += d_p_cam.cross(p_cam);
        grads.d_pose.tail<3>() += -w_rot.transpose() * d_p_cam;
        const Eigen::Matrix3d d_rot_cam = cov_cam * d_cov_cam - d_cov_cam * cov_cam;
        grads.d_pose.x() += detail::frob_skew_x(d_rot_cam);
        grads.d_pose.y() += detail::frob_skew_y(d_rot_cam);
        grads.d_pose.z() += detail::frob_skew_z(d_rot_cam);

        // World covariance chain: cov_w = M M^T with M = R * diag(s).
        const Eigen::Matrix3d d_cov_w = w_rot.transpose() * d_cov_cam * w_rot;
        const Eigen::Matrix3d d_m = 2.0 * d_cov_w * m_rs;
        const Eigen::Vector3d d_s = (rot_g.transpose() * d_m).diagonal();
        grads.d_log_scale.row(gi) += (s.array() * d_s.array()).matrix().transpose();

        const Eigen::Matrix3d d_rot_mat = d_m * s.asDiagonal();
        const Eigen::Matrix3d a_rot = rot_g.transpose() * d_rot_mat;
        grads.d_rot.row(gi) += Eigen::RowVector3d(
            detail::frob_skew_x(a_rot), detail::frob_skew_y(a_rot),
            detail::frob_skew_z(a_rot));
    }
    return grads;
}

}  // namespace blurslam
