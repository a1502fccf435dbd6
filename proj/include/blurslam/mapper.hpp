#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "blurslam/blur.hpp"
#include "blurslam/camera.hpp"
#include "blurslam/errors.hpp"
#include "blurslam/image.hpp"
#include "blurslam/lie.hpp"
#include "blurslam/metrics.hpp"
#include "blurslam/splat.hpp"

namespace blurslam {

/// One mapped frame: the captured blurry observation plus the current
/// estimate of the camera trajectory over its exposure window.
struct Keyframe {
    RgbdFrame frame;
    ExposureTrajectory trajectory;  // camera-to-world
};

struct MapperConfig {
    int n_virtual = 13;           // sharp renders averaged into one blurry render

    double lambda_color = 0.8;    // L1 photometric weight
    double lambda_ssim = 0.2;     // (1 - SSIM) weight
    double lambda_depth = 1.0;    // masked L1 on alpha-normalized depth
    double lambda_reg = 10.0;     // anisotropy penalty weight
    double reg_ratio = 1.0;       // axis ratios below this are free

    int iterations = 160;         // per optimize_map call

    // Seeding: one candidate every seed_stride pixels, accepted where the
    // current render is transparent and the captured depth is usable.
    int seed_stride = 4;
    double seed_alpha_threshold = 0.5;
    double seed_scale_factor = 0.5;  // scale = factor * stride * depth / fx
    double seed_opacity = 0.5;
    double min_depth = 0.05;
    double max_depth = 50.0;

    // Depth supervision uses pixels where the captured depth is valid and
    // the rendered alpha exceeds this threshold.
    double depth_alpha_threshold = 0.5;

    // Densify / prune thresholds.
    double densify_grad_threshold = 2e-3;   // mean ||dL/dmean2d||, half-image units
    double densify_size_fraction = 0.01;    // clone below, split above
    double split_shrink = 1.6;              // child scale divisor
    double prune_opacity = 0.005;
    double prune_size_fraction = 0.1;       // drop Gaussians larger than this

    // Adam learning rates (means and translations scale with scene_extent).
    double lr_mean = 1.6e-4;
    double lr_scale = 5e-3;
    double lr_rot = 1e-3;
    double lr_opacity = 5e-2;
    double lr_color = 2.5e-3;
    double lr_traj_rot = 1e-4;
    double lr_traj_trans = 1e-4;
    double scene_extent = 2.0;  // meters; characteristic scene radius

    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
};

/// Loss terms before weighting; total is the weighted sum that is optimized.
struct LossBreakdown {
    double total = 0.0;
    double color = 0.0;  // mean |render - captured|
    double ssim = 0.0;   // 1 - mean SSIM
    double depth = 0.0;  // masked mean |depth/alpha - captured|
    double reg = 0.0;    // mean excess axis ratio
};

struct DensifyStats {
    size_t cloned = 0;
    size_t split = 0;
    size_t pruned = 0;
};

/// Adam moments for every optimized parameter, kept row-aligned with the
/// Gaussian map across densify/prune, plus one 12-dim block per keyframe
/// trajectory (start rot/trans, end rot/trans).
struct MapperState {
    Eigen::MatrixXd m_mean, v_mean;            // N x 3
    Eigen::MatrixXd m_log_scale, v_log_scale;  // N x 3
    Eigen::MatrixXd m_rot, v_rot;              // N x 3
    Eigen::VectorXd m_opacity, v_opacity;      // N
    Eigen::MatrixXd m_color, v_color;          // N x 3
    std::vector<Eigen::Matrix<double, 12, 1>> m_traj, v_traj;
    std::vector<long> traj_steps;
    long step = 0;
    std::mt19937_64 rng{0x5eedULL};

    void init(size_t n_gaussians, size_t n_keyframes) {
        const auto n = static_cast<Eigen::Index>(n_gaussians);
        m_mean = v_mean = Eigen::MatrixXd::Zero(n, 3);
        m_log_scale = v_log_scale = Eigen::MatrixXd::Zero(n, 3);
        m_rot = v_rot = Eigen::MatrixXd::Zero(n, 3);
        m_opacity = v_opacity = Eigen::VectorXd::Zero(n);
        m_color = v_color = Eigen::MatrixXd::Zero(n, 3);
        m_traj.assign(n_keyframes, Eigen::Matrix<double, 12, 1>::Zero());
        v_traj.assign(n_keyframes, Eigen::Matrix<double, 12, 1>::Zero());
        traj_steps.assign(n_keyframes, 0);
        step = 0;
    }

    size_t rows() const { return static_cast<size_t>(m_mean.rows()); }

    /// Keep moment rows where keep[i] is true (same order as GaussianMap::filter).
    void filter(const std::vector<char>& keep) {
        if (keep.size() != rows()) throw ShapeMismatch("mapper state filter mask size");
        Eigen::Index out = 0;
        for (size_t i = 0; i < keep.size(); ++i) {
            if (!keep[i]) continue;
            const auto src = static_cast<Eigen::Index>(i);
            m_mean.row(out) = m_mean.row(src);
            v_mean.row(out) = v_mean.row(src);
            m_log_scale.row(out) = m_log_scale.row(src);
            v_log_scale.row(out) = v_log_scale.row(src);
            m_rot.row(out) = m_rot.row(src);
            v_rot.row(out) = v_rot.row(src);
            m_opacity(out) = m_opacity(src);
            v_opacity(out) = v_opacity(src);
            m_color.row(out) = m_color.row(src);
            v_color.row(out) = v_color.row(src);
            ++out;
        }
        m_mean.conservativeResize(out, 3);
        v_mean.conservativeResize(out, 3);
        m_log_scale.conservativeResize(out, 3);
        v_log_scale.conservativeResize(out, 3);
        m_rot.conservativeResize(out, 3);
        v_rot.conservativeResize(out, 3);
        m_opacity.conservativeResize(out);
        v_opacity.conservativeResize(out);
        m_color.conservativeResize(out, 3);
        v_color.conservativeResize(out, 3);
    }

    /// Zero-initialized moment rows for n newly added Gaussians.
    void append(size_t n) {
        const auto old = static_cast<Eigen::Index>(rows());
        const auto grown = old + static_cast<Eigen::Index>(n);
        m_mean.conservativeResize(grown, 3);
        v_mean.conservativeResize(grown, 3);
        m_log_scale.conservativeResize(grown, 3);
        v_log_scale.conservativeResize(grown, 3);
        m_rot.conservativeResize(grown, 3);
        v_rot.conservativeResize(grown, 3);
        m_opacity.conservativeResize(grown);
        v_opacity.conservativeResize(grown);
        m_color.conservativeResize(grown, 3);
        v_color.conservativeResize(grown, 3);
        m_mean.bottomRows(grown - old).setZero();
        v_mean.bottomRows(grown - old).setZero();
        m_log_scale.bottomRows(grown - old).setZero();
        v_log_scale.bottomRows(grown - old).setZero();
        m_rot.bottomRows(grown - old).setZero();
        v_rot.bottomRows(grown - old).setZero();
        m_opacity.tail(grown - old).setZero();
        v_opacity.tail(grown - old).setZero();
        m_color.bottomRows(grown - old).setZero();
        v_color.bottomRows(grown - old).setZero();
    }
};

namespace detail {

/// All virtual renders for one keyframe plus their interpolation Jacobians.
struct BlurryRender {
    std::vector<InterpJacobians> jacs;
    std::vector<RenderResult> renders;
    std::vector<RenderAux> aux;
    ImageBuffer blurry;  // 3 channels, mean of the virtual colors
    int mid = 0;         // virtual index nearest the exposure midpoint
};

inline BlurryRender render_blurry_full(const GaussianMap& map, const Keyframe& kf,
                                       int n_virtual, bool with_aux) {
    if (n_virtual < 1) throw DomainError("n_virtual must be >= 1");
    const Intrinsics& cam = kf.frame.intrinsics;
    const std::vector<double> times = virtual_timestamps(n_virtual, kf.trajectory.exposure);
    const int n = static_cast<int>(times.size());

    BlurryRender out;
    out.jacs.reserve(n);
    out.renders.reserve(n);
    if (with_aux) out.aux.resize(n);
    out.mid = (n - 1) / 2;
    out.blurry = ImageBuffer(cam.width, cam.height, 3);

    for (int i = 0; i < n; ++i) {
        out.jacs.push_back(interp_jacobians(kf.trajectory, times[i]));
        out.renders.push_back(
            rasterize(map, out.jacs.back().pose, cam, with_aux ? &out.aux[i] : nullptr));
    }
    const double inv_n = 1.0 / n;
    for (size_t k = 0; k < out.blurry.size(); ++k) {
        double acc = 0.0;
        for (int i = 0; i < n; ++i) acc += out.renders[i].color.raw()[k];
        out.blurry.raw()[k] = acc * inv_n;
    }
    return out;
}

/// Anisotropy penalty: mean over Gaussians of max(ratio, r) - r where ratio
/// is the largest-to-smallest axis scale ratio. Gradient (weighted by
/// lambda_reg) is accumulated into d_log_scale when it is non-null.
inline double scale_regularizer(const GaussianMap& map, const MapperConfig& cfg,
                                Eigen::Matrix<double, Eigen::Dynamic, 3>* d_log_scale) {
    if (map.empty()) return 0.0;
    const double inv_n = 1.0 / static_cast<double>(map.size());
    double excess = 0.0;
    for (size_t i = 0; i < map.size(); ++i) {
        const Eigen::Vector3d& ls = map.gaussians[i].log_scale;
        int imax = 0, imin = 0;
        for (int k = 1; k < 3; ++k) {
            if (ls(k) > ls(imax)) imax = k;
            if (ls(k) < ls(imin)) imin = k;
        }
        const double ratio = std::exp(ls(imax) - ls(imin));
        if (ratio <= cfg.reg_ratio) continue;
        excess += (ratio - cfg.reg_ratio) * inv_n;
        if (d_log_scale != nullptr) {
            const double g = cfg.lambda_reg * ratio * inv_n;
            (*d_log_scale)(static_cast<Eigen::Index>(i), imax) += g;
            (*d_log_scale)(static_cast<Eigen::Index>(i), imin) -= g;
        }
    }
    return excess;
}

/// Full forward+backward evaluation of one keyframe. Map-parameter gradients
/// (including the regularizer) land in map_grads; the trajectory gradient for
/// this keyframe lands in traj_grad as [r_start; t_start; r_end; t_end].
inline LossBreakdown evaluate(const GaussianMap& map, const Keyframe& kf,
                              const MapperConfig& cfg, MapGradients& map_grads,
                              Eigen::Matrix<double, 12, 1>& traj_grad) {
    const Intrinsics& cam = kf.frame.intrinsics;
    const ImageBuffer& captured = kf.frame.rgb;
    if (captured.width() != cam.width || captured.height() != cam.height ||
        captured.channels() != 3)
        throw ShapeMismatch("keyframe color image does not match its intrinsics");

    BlurryRender br = render_blurry_full(map, kf, cfg.n_virtual, true);
    const int n = static_cast<int>(br.renders.size());
    const int w = cam.width, h = cam.height;

    LossBreakdown loss;

    // Photometric L1 + SSIM on the blurry render. Both gradients combine into
    // one upstream color image shared (scaled by 1/n) by every virtual render.
    ImageBuffer d_blurry(w, h, 3);
    const double inv_px = 1.0 / static_cast<double>(w * h * 3);
    double l1 = 0.0;
    for (size_t k = 0; k < d_blurry.size(); ++k) {
        const double r = br.blurry.raw()[k] - captured.raw()[k];
        l1 += std::abs(r);
        const double sgn = (r > 0.0) ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
        d_blurry.raw()[k] = cfg.lambda_color * sgn * inv_px;
    }
    loss.color = l1 * inv_px;

    if (cfg.lambda_ssim != 0.0) {
        const SsimResult s = ssim_detailed(br.blurry, captured, true);
        loss.ssim = 1.0 - s.mean;
        for (size_t k = 0; k < d_blurry.size(); ++k)
            d_blurry.raw()[k] -= cfg.lambda_ssim * s.gradient.raw()[k];
    }

    // Depth: masked L1 on alpha-normalized depth at the virtual sample
    // nearest the exposure midpoint.
    ImageBuffer d_depth(w, h, 1), d_alpha(w, h, 1);
    bool have_depth = false;
    if (cfg.lambda_depth != 0.0 && !kf.frame.depth.empty()) {
        const RenderResult& mid = br.renders[br.mid];
        int count = 0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double gt = kf.frame.depth.at(x, y);
                if (gt < cfg.min_depth || gt > cfg.max_depth) continue;
                if (mid.alpha.at(x, y) <= cfg.depth_alpha_threshold) continue;
                ++count;
            }
        if (count > 0) {
            have_depth = true;
            const double inv_cnt = 1.0 / count;
            double ld = 0.0;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const double gt = kf.frame.depth.at(x, y);
                    if (gt < cfg.min_depth || gt > cfg.max_depth) continue;
                    const double a = mid.alpha.at(x, y);
                    if (a <= cfg.depth_alpha_threshold) continue;
                    const double d = mid.depth.at(x, y) / a;
                    const double r = d - gt;
                    ld += std::abs(r) * inv_cnt;
                    const double sgn = (r > 0.0) ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
                    d_depth.at(x, y) = cfg.lambda_depth * sgn * inv_cnt / a;
                    d_alpha.at(x, y) = -cfg.lambda_depth * sgn * inv_cnt * d / a;
                }
            loss.depth = ld;
        }
    }

    // Backward through every virtual render; chain camera-pose gradients
    // through the trajectory interpolation.
    ImageBuffer up_color = d_blurry;
    const double inv_n = 1.0 / n;
    for (size_t k = 0; k < up_color.size(); ++k) up_color.raw()[k] *= inv_n;

    map_grads = MapGradients(map.size());
    traj_grad.setZero();
    for (int i = 0; i < n; ++i) {
        LossGradientImages up;
        up.d_color = &up_color;
        if (have_depth && i == br.mid) {
            up.d_depth = &d_depth;
            up.d_alpha = &d_alpha;
        }
        const MapGradients g = rasterize_backward(map, br.jacs[i].pose, cam, br.aux[i], up);
        map_grads.add_scaled(g, 1.0);

        // d_pose lives in the right tangent of the interpolated pose; pull it
        // back onto the endpoint tangents. For the quaternion block, the
        // cotangent lift of a right-tangent gradient is 4 * B(q) * d_rot.
        const Eigen::Matrix<double, 4, 3> B = detail::boxplus_jacobian(br.jacs[i].pose.q);
        const Eigen::Vector4d lam = 4.0 * (B * g.d_pose.head<3>());
        traj_grad.segment<3>(0) += br.jacs[i].dq_dr_start.transpose() * lam;
        traj_grad.segment<3>(3) += br.jacs[i].dt_dtstart.transpose() * g.d_pose.tail<3>();
        traj_grad.segment<3>(6) += br.jacs[i].dq_dr_end.transpose() * lam;
        traj_grad.segment<3>(9) += br.jacs[i].dt_dtend.transpose() * g.d_pose.tail<3>();
    }

    loss.reg = scale_regularizer(map, cfg, &map_grads.d_log_scale);
    loss.total = cfg.lambda_color * loss.color + cfg.lambda_ssim * loss.ssim +
                 cfg.lambda_depth * loss.depth + cfg.lambda_reg * loss.reg;
    return loss;
}

}  // namespace detail

/// Motion-blurred render of the map over a keyframe's exposure: the mean of
/// n_virtual sharp renders at interpolated poses.
inline ImageBuffer render_blurry(const GaussianMap& map, const Keyframe& kf, int n_virtual) {
    return detail::render_blurry_full(map, kf, n_virtual, false).blurry;
}

/// Loss terms of one keyframe under the current map (no gradients).
inline LossBreakdown compute_losses(const GaussianMap& map, const Keyframe& kf,
                                    const MapperConfig& cfg) {
    const Intrinsics& cam = kf.frame.intrinsics;
    const ImageBuffer& captured = kf.frame.rgb;
    if (captured.width() != cam.width || captured.height() != cam.height ||
        captured.channels() != 3)
        throw ShapeMismatch("keyframe color image does not match its intrinsics");

    detail::BlurryRender br = detail::render_blurry_full(map, kf, cfg.n_virtual, false);
    LossBreakdown loss;

    double l1 = 0.0;
    for (size_t k = 0; k < br.blurry.size(); ++k)
        l1 += std::abs(br.blurry.raw()[k] - captured.raw()[k]);
    loss.color = l1 / static_cast<double>(br.blurry.size());
    if (cfg.lambda_ssim != 0.0) loss.ssim = 1.0 - ssim(br.blurry, captured);

    if (cfg.lambda_depth != 0.0 && !kf.frame.depth.empty()) {
        const RenderResult& mid = br.renders[br.mid];
        int count = 0;
        double ld = 0.0;
        for (int y = 0; y < captured.height(); ++y)
            for (int x = 0; x < captured.width(); ++x) {
                const double gt = kf.frame.depth.at(x, y);
                if (gt < cfg.min_depth || gt > cfg.max_depth) continue;
                const double a = mid.alpha.at(x, y);
                if (a <= cfg.depth_alpha_threshold) continue;
                ld += std::abs(mid.depth.at(x, y) / a - gt);
                ++count;
            }
        if (count > 0) loss.depth = ld / count;
    }

    loss.reg = detail::scale_regularizer(map, cfg, nullptr);
    loss.total = cfg.lambda_color * loss.color + cfg.lambda_ssim * loss.ssim +
                 cfg.lambda_depth * loss.depth + cfg.lambda_reg * loss.reg;
    return loss;
}

/// Add Gaussians where the mid-exposure render is still transparent but the
/// captured depth is usable: one isotropic Gaussian per seed_stride pixels,
/// back-projected through the mid pose, colored from the captured image.
/// Returns the number of Gaussians added.
inline size_t seed_gaussians(GaussianMap& map, const Keyframe& kf, const MapperConfig& cfg,
                             MapperState* state = nullptr) {
    if (cfg.seed_stride < 1) throw DomainError("seed_stride must be >= 1");
    const Intrinsics& cam = kf.frame.intrinsics;
    if (kf.frame.depth.width() != cam.width || kf.frame.depth.height() != cam.height)
        throw ShapeMismatch("keyframe depth image does not match its intrinsics");

    const PoseSE3 mid_pose = interpolate_pose(kf.trajectory, 0.5 * kf.trajectory.exposure);
    const RenderResult current = rasterize(map, mid_pose, cam);

    size_t added = 0;
    const int half = cfg.seed_stride / 2;
    for (int y = half; y < cam.height; y += cfg.seed_stride)
        for (int x = half; x < cam.width; x += cfg.seed_stride) {
            const double depth = kf.frame.depth.at(x, y);
            if (depth < cfg.min_depth || depth > cfg.max_depth) continue;
            if (current.alpha.at(x, y) >= cfg.seed_alpha_threshold) continue;

            const Eigen::Vector3d p_cam = cam.backproject({double(x), double(y)}, depth);
            Gaussian3D g;
            g.mean = mid_pose.q.rotate(p_cam) + mid_pose.t;
            const double s = cfg.seed_scale_factor * cfg.seed_stride * depth / cam.fx;
            g.set_scale(Eigen::Vector3d::Constant(s));
            g.rotation = UnitQuaternion();
            g.set_opacity(cfg.seed_opacity);
            g.color = Eigen::Vector3d(kf.frame.rgb.at(x, y, 0), kf.frame.rgb.at(x, y, 1),
                                      kf.frame.rgb.at(x, y, 2));
            map.add(g);
            ++added;
        }
    if (state != nullptr && state->rows() + added == map.size()) state->append(added);
    return added;
}

/// Clone small high-gradient Gaussians, split large ones into two shrunken
/// children sampled inside the parent, and prune transparent or oversized
/// ones. Clears the accumulated densification statistics afterwards.
inline DensifyStats densify_and_prune(GaussianMap& map, const MapperConfig& cfg,
                                      MapperState* state = nullptr) {
    DensifyStats stats;
    const size_t n = map.size();
    std::vector<char> keep(n, 1);
    std::vector<Gaussian3D> additions;
    std::mt19937_64 fallback_rng(0x5eedULL);
    std::mt19937_64& rng = (state != nullptr) ? state->rng : fallback_rng;
    std::normal_distribution<double> normal(0.0, 1.0);

    for (size_t i = 0; i < n; ++i) {
        Gaussian3D& g = map.gaussians[i];
        const Eigen::Vector3d scale = g.scale();
        const double max_scale = scale.maxCoeff();

        if (g.opacity() < cfg.prune_opacity ||
            max_scale > cfg.prune_size_fraction * cfg.scene_extent) {
            keep[i] = 0;
            ++stats.pruned;
            continue;
        }
        if (map.grad2d_count[i] == 0) continue;
        const double avg_grad = map.grad2d_accum[i] / map.grad2d_count[i];
        if (avg_grad <= cfg.densify_grad_threshold) continue;

        if (max_scale <= cfg.densify_size_fraction * cfg.scene_extent) {
            additions.push_back(g);  // clone in place; optimization separates them
            ++stats.cloned;
        } else {
            const Eigen::Matrix3d R = g.rotation.matrix();
            for (int c = 0; c < 2; ++c) {
                Gaussian3D child = g;
                const Eigen::Vector3d sample(normal(rng), normal(rng), normal(rng));
                child.mean = g.mean + R * (scale.cwiseProduct(sample));
                child.log_scale = g.log_scale.array() - std::log(cfg.split_shrink);
                additions.push_back(child);
            }
            keep[i] = 0;
            ++stats.split;
        }
    }

    map.filter(keep);
    if (state != nullptr && state->rows() == n) state->filter(keep);
    for (const Gaussian3D& g : additions) map.add(g);
    if (state != nullptr && state->rows() + additions.size() == map.size())
        state->append(additions.size());
    map.reset_grad_stats();
    return stats;
}

/// Jointly refine the map and the keyframe exposure trajectories with Adam,
/// visiting keyframes round-robin (one backward pass per iteration). The
/// first keyframe's trajectory is held fixed as the gauge anchor. Returns
/// the total loss of the visited keyframe at each iteration.
inline std::vector<double> optimize_map(GaussianMap& map, std::vector<Keyframe>& keyframes,
                                        const MapperConfig& cfg, MapperState& state) {
    if (keyframes.empty()) throw NoKeyframes("optimize_map: no keyframes");
    if (state.rows() != map.size() || state.m_traj.size() != keyframes.size())
        state.init(map.size(), keyframes.size());

    const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    // Bias-corrected Adam step for one scalar; updates the moments in place.
    const auto adam = [&](double& m, double& v, double g, long t) {
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        const double mh = m / (1.0 - std::pow(b1, static_cast<double>(t)));
        const double vh = v / (1.0 - std::pow(b2, static_cast<double>(t)));
        return mh / (std::sqrt(vh) + cfg.adam_eps);
    };

    std::vector<double> trace;
    trace.reserve(cfg.iterations);
    MapGradients grads;
    Eigen::Matrix<double, 12, 1> traj_grad;

    for (int it = 0; it < cfg.iterations; ++it) {
        const size_t kf_idx = static_cast<size_t>(it) % keyframes.size();
        Keyframe& kf = keyframes[kf_idx];

        const LossBreakdown loss = detail::evaluate(map, kf, cfg, grads, traj_grad);
        trace.push_back(loss.total);

        // Densification statistics in half-image units: pixel-space
        // gradients scale as 1/(W*H) through the per-pixel loss
        // normalization, so the conversion keeps the clone/split threshold
        // meaningful across render resolutions.
        const double px_to_halfimage =
            0.5 * std::max(kf.frame.intrinsics.width, kf.frame.intrinsics.height);
        for (size_t i = 0; i < map.size(); ++i) {
            const double gnorm = grads.d_mean2d.row(static_cast<Eigen::Index>(i)).norm();
            if (gnorm > 0.0) {
                map.grad2d_accum[i] += gnorm * px_to_halfimage;
                map.grad2d_count[i] += 1;
            }
        }

        ++state.step;
        const long t = state.step;
        for (size_t i = 0; i < map.size(); ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            Gaussian3D& g = map.gaussians[i];
            Eigen::Vector3d rot_step;
            for (int k = 0; k < 3; ++k) {
                g.mean(k) -= cfg.lr_mean * cfg.scene_extent *
                             adam(state.m_mean(r, k), state.v_mean(r, k), grads.d_mean(r, k), t);
                g.log_scale(k) -=
                    cfg.lr_scale * adam(state.m_log_scale(r, k), state.v_log_scale(r, k),
                                        grads.d_log_scale(r, k), t);
                rot_step(k) =
                    cfg.lr_rot * adam(state.m_rot(r, k), state.v_rot(r, k), grads.d_rot(r, k), t);
                g.color(k) -= cfg.lr_color *
                              adam(state.m_color(r, k), state.v_color(r, k), grads.d_color(r, k), t);
                g.color(k) = std::clamp(g.color(k), 0.0, 1.0);
            }
            // Skip the boxplus when the step is exactly zero so parameters
            // with no gradient signal stay bitwise stable.
            if (!rot_step.isZero(0.0)) g.rotation = quat_boxplus(g.rotation, -rot_step);
            g.opacity_logit -= cfg.lr_opacity * adam(state.m_opacity(r), state.v_opacity(r),
                                                     grads.d_opacity_logit(r), t);
        }

        if (kf_idx != 0) {
            const long tt = ++state.traj_steps[kf_idx];
            Eigen::Matrix<double, 12, 1> step;
            for (int k = 0; k < 12; ++k)
                step(k) = adam(state.m_traj[kf_idx](k), state.v_traj[kf_idx](k), traj_grad(k), tt);
            const Eigen::Vector3d dr_s = cfg.lr_traj_rot * step.segment<3>(0);
            const Eigen::Vector3d dr_e = cfg.lr_traj_rot * step.segment<3>(6);
            if (!dr_s.isZero(0.0))
                kf.trajectory.start.q = quat_boxplus(kf.trajectory.start.q, -dr_s);
            if (!dr_e.isZero(0.0))
                kf.trajectory.end.q = quat_boxplus(kf.trajectory.end.q, -dr_e);
            kf.trajectory.start.t -= cfg.lr_traj_trans * cfg.scene_extent * step.segment<3>(3);
            kf.trajectory.end.t -= cfg.lr_traj_trans * cfg.scene_extent * step.segment<3>(9);
        }
    }
    return trace;
}

}  // namespace blurslam
