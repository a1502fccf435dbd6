#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <cmath>
#include <optional>
#include <vector>

#include "blurslam/blur.hpp"
#include "blurslam/camera.hpp"
#include "blurslam/errors.hpp"
#include "blurslam/image.hpp"
#include "blurslam/lie.hpp"
#include "blurslam/parallel.hpp"
#include "blurslam/transfer.hpp"

namespace blurslam {

// Direct motion-blur-aware tracker. The state is the exposure trajectory of
// the current frame relative to a sharp reference view: 12 parameters ordered
// (rot_start, trans_start, rot_end, trans_end), rotations updated
// right-multiplicatively. Residuals compare the captured blurry intensity at
// integer pixels of the current frame with a re-blurred prediction: the mean
// of the sharp reference sampled at that pixel's plane transfer under each
// virtual in-exposure pose.

struct TrackerConfig {
    int n_virtual = 13;
    int pyramid_levels = 3;
    double huber_delta = 0.1;
    int max_iterations = 50;        // per pyramid level
    double lm_lambda_init = 1e-3;
    double convergence_tol = 1e-6;  // step norm
    int max_keypoints = 512;        // at full resolution; /4 per coarser level
    double gradient_threshold = 0.05;
    int patch_size = 9;
    int min_keypoints = 20;  // required at full resolution
    double min_depth = 0.05;
    double max_depth = 50.0;
};

struct Keypoint {
    int x = 0, y = 0;
    double depth = 0.0;  // plane depth from the current frame's depth map
};

struct TrackResult {
    ExposureTrajectory trajectory;  // current -> reference
    double final_cost = 0.0;        // mean Huber cost per residual, finest level
    int iterations = 0;             // accepted LM steps over all levels
    bool converged = false;         // step-norm tolerance reached at finest level
    double inlier_fraction = 0.0;   // |residual| <= huber_delta at the solution
    int keypoints_used = 0;         // finest level
};

/// Greedy grid selection: one anchor per cell (side ~ sqrt(W*H/max_count)),
/// the highest-gradient pixel with valid depth and full patch support.
inline std::vector<Keypoint> select_keypoints(const ImageBuffer& gray, const ImageBuffer& depth,
                                              const TrackerConfig& cfg, int max_count) {
    if (gray.width() != depth.width() || gray.height() != depth.height())
        throw ShapeMismatch("keypoint selection: gray/depth size mismatch");
    const int w = gray.width(), h = gray.height();
    const int cell = std::max(1, static_cast<int>(std::sqrt(double(w) * h / std::max(1, max_count))));
    const int margin = cfg.patch_size / 2 + 1;
    const ImageBuffer grad = gradient_magnitude(gray);

    std::vector<Keypoint> out;
    for (int cy = 0; cy < h; cy += cell) {
        for (int cx = 0; cx < w; cx += cell) {
            double best = cfg.gradient_threshold;
            Keypoint kp;
            bool found = false;
            for (int y = cy; y < std::min(cy + cell, h); ++y) {
                for (int x = cx; x < std::min(cx + cell, w); ++x) {
                    if (x < margin || y < margin || x >= w - margin || y >= h - margin) continue;
                    const double d = depth.at(x, y);
                    if (d < cfg.min_depth || d > cfg.max_depth) continue;
                    if (grad.at(x, y) >= best) {
                        best = grad.at(x, y);
                        kp = {x, y, d};
                        found = true;
                    }
                }
            }
            if (found) out.push_back(kp);
            if (static_cast<int>(out.size()) >= max_count) return out;
        }
    }
    return out;
}

/// Re-blurred prediction for one current-frame pixel: the mean of the sharp
/// reference image sampled at the pixel's plane transfer under each virtual
/// pose. Returns nothing if any sample leaves the reference image.
inline std::optional<double> reblur_pixel(const Eigen::Vector2d& x, double plane_depth,
                                          const ExposureTrajectory& traj_cur_to_ref,
                                          int n_virtual, const ImageBuffer& ref_gray,
                                          const Intrinsics& cam) {
    const std::vector<double> times = virtual_timestamps(n_virtual, traj_cur_to_ref.exposure);
    double acc = 0.0;
    for (const double t : times) {
        const PoseSE3 pose = interpolate_pose(traj_cur_to_ref, t);
        const TransferResult tr = transfer_point(x, plane_depth, pose, cam);
        if (tr.status != TransferStatus::Ok) return std::nullopt;
        if (!ref_gray.bilinear_valid(tr.pixel.x(), tr.pixel.y())) return std::nullopt;
        acc += ref_gray.sample_bilinear(tr.pixel.x(), tr.pixel.y());
    }
    return acc / n_virtual;
}

namespace detail {

using Mat12 = Eigen::Matrix<double, 12, 12>;
using Vec12 = Eigen::Matrix<double, 12, 1>;

struct VirtualPoseData {
    Eigen::Vector4d q;
    Eigen::Matrix3d R;
    Eigen::Vector3d p;
    Eigen::Matrix<double, 4, 3> dq_dr_start, dq_dr_end;
    double ws = 0.0, we = 0.0;
};

struct EvalAccum {
    Mat12 H = Mat12::Zero();
    Vec12 g = Vec12::Zero();
    double cost = 0.0;
    long n_valid = 0;
    long n_inlier = 0;

    void merge(const EvalAccum& o) {
        H += o.H;
        g += o.g;
        cost += o.cost;
        n_valid += o.n_valid;
        n_inlier += o.n_inlier;
    }
    double mean_cost() const { return n_valid > 0 ? cost / double(n_valid) : 1e30; }
};

/// Per-level residual problem with precomputed anchors, patch intensities,
/// and unit rays.
class LevelProblem {
public:
    LevelProblem(const ImageBuffer& cur_gray, const ImageBuffer& ref_gray, const Intrinsics& cam,
                 std::vector<Keypoint> kps, const TrackerConfig& cfg)
        : cur_(cur_gray), ref_(ref_gray), cam_(cam), kps_(std::move(kps)), cfg_(cfg) {
        const int half = cfg.patch_size / 2;
        for (int dy = -half; dy <= half; ++dy)
            for (int dx = -half; dx <= half; ++dx) offsets_.emplace_back(dx, dy);
        rays_.resize(static_cast<size_t>(cam.width) * cam.height);
        for (int y = 0; y < cam.height; ++y)
            for (int x = 0; x < cam.width; ++x)
                rays_[size_t(y) * cam.width + x] = cam.ray({double(x), double(y)}).normalized();
    }

    size_t n_keypoints() const { return kps_.size(); }
    long n_residuals() const { return long(kps_.size()) * long(offsets_.size()); }

    std::vector<VirtualPoseData> virtual_poses(const ExposureTrajectory& traj,
                                               bool with_jacobians) const {
        const std::vector<double> times = virtual_timestamps(cfg_.n_virtual, traj.exposure);
        std::vector<VirtualPoseData> out(times.size());
        for (size_t i = 0; i < times.size(); ++i) {
            VirtualPoseData& v = out[i];
            if (with_jacobians) {
                const InterpJacobians ij = interp_jacobians(traj, times[i]);
                v.q = ij.pose.q.coeffs();
                v.p = ij.pose.t;
                v.dq_dr_start = ij.dq_dr_start;
                v.dq_dr_end = ij.dq_dr_end;
                v.ws = ij.dt_dtstart(0, 0);
                v.we = ij.dt_dtend(0, 0);
            } else {
                const PoseSE3 pose = interpolate_pose(traj, times[i]);
                v.q = pose.q.coeffs();
                v.p = pose.t;
            }
            v.R = blurslam::detail::quad_form_rotation(v.q);
        }
        return out;
    }

    EvalAccum evaluate(const ExposureTrajectory& traj, bool with_jacobian) const {
        const auto poses = virtual_poses(traj, with_jacobian);
        const double inv_n = 1.0 / double(poses.size());
        const size_t chunk_size = 32;
        const int n_chunks = int((kps_.size() + chunk_size - 1) / chunk_size);
        std::vector<EvalAccum> partial(std::max(1, n_chunks));
        parallel_chunks(n_chunks, [&](int c) {
            EvalAccum acc;
            const size_t lo = size_t(c) * chunk_size;
            const size_t hi = std::min(kps_.size(), lo + chunk_size);
            for (size_t k = lo; k < hi; ++k) accumulate_keypoint(kps_[k], poses, inv_n, with_jacobian, acc);
            partial[c] = acc;
        });
        EvalAccum total;
        for (const EvalAccum& p : partial) total.merge(p);
        return total;
    }

private:
    void accumulate_keypoint(const Keypoint& kp, const std::vector<VirtualPoseData>& poses,
                             double inv_n, bool with_jacobian, EvalAccum& acc) const {
        Vec12 J;
        for (const auto& off : offsets_) {
            const int px = kp.x + off.first, py = kp.y + off.second;
            const Eigen::Vector3d& v = rays_[size_t(py) * cam_.width + px];
            double pred = 0.0;
            bool valid = true;
            J.setZero();
            for (const VirtualPoseData& vp : poses) {
                if (with_jacobian) {
                    const TransferJacobian tj =
                        transfer_ray_jacobian(v, kp.depth, vp.q, vp.R, vp.p, cam_);
                    if (tj.result.status != TransferStatus::Ok ||
                        !ref_.bilinear_valid(tj.result.pixel.x(), tj.result.pixel.y())) {
                        valid = false;
                        break;
                    }
                    double val, gu, gv;
                    ref_.sample_bilinear_grad(tj.result.pixel.x(), tj.result.pixel.y(), 0, val,
                                              gu, gv);
                    pred += val;
                    // Chain: image gradient -> pixel -> raw pose -> endpoint tangents.
                    const Eigen::Matrix<double, 1, 7> A =
                        gu * tj.J.row(0) + gv * tj.J.row(1);
                    const Eigen::Matrix<double, 1, 4> Aq = A.head<4>();
                    J.segment<3>(0) += (Aq * vp.dq_dr_start).transpose();
                    J.segment<3>(3) += vp.ws * A.tail<3>().transpose();
                    J.segment<3>(6) += (Aq * vp.dq_dr_end).transpose();
                    J.segment<3>(9) += vp.we * A.tail<3>().transpose();
                } else {
                    const TransferResult tr = transfer_ray(v, kp.depth, vp.R, vp.p, cam_);
                    if (tr.status != TransferStatus::Ok ||
                        !ref_.bilinear_valid(tr.pixel.x(), tr.pixel.y())) {
                        valid = false;
                        break;
                    }
                    pred += ref_.sample_bilinear(tr.pixel.x(), tr.pixel.y());
                }
            }
            if (!valid) continue;
            const double r = cur_.at(px, py) - pred * inv_n;
            const double ar = std::abs(r);
            const double delta = cfg_.huber_delta;
            const double weight = ar <= delta ? 1.0 : delta / ar;
            acc.cost += ar <= delta ? 0.5 * r * r : delta * (ar - 0.5 * delta);
            ++acc.n_valid;
            if (ar <= delta) ++acc.n_inlier;
            if (with_jacobian) {
                J *= -inv_n;  // residual = measured - prediction
                acc.H.selfadjointView<Eigen::Lower>().rankUpdate(J, weight);
                acc.g += (weight * r) * J;
            }
        }
    }

    const ImageBuffer& cur_;
    const ImageBuffer& ref_;
    Intrinsics cam_;
    std::vector<Keypoint> kps_;
    TrackerConfig cfg_;
    std::vector<std::pair<int, int>> offsets_;
    std::vector<Eigen::Vector3d> rays_;
};

inline ExposureTrajectory apply_step(const ExposureTrajectory& traj, const Vec12& d) {
    ExposureTrajectory out = traj;
    out.start.q = quat_boxplus(traj.start.q, d.segment<3>(0));
    out.start.t = traj.start.t + d.segment<3>(3);
    out.end.q = quat_boxplus(traj.end.q, d.segment<3>(6));
    out.end.t = traj.end.t + d.segment<3>(9);
    return out;
}

inline ExposureTrajectory time_reversed(const ExposureTrajectory& traj) {
    ExposureTrajectory out = traj;
    std::swap(out.start, out.end);
    return out;
}

inline double trajectory_gap(const ExposureTrajectory& a, const ExposureTrajectory& b) {
    return quat_angular_distance(a.start.q, b.start.q) +
           quat_angular_distance(a.end.q, b.end.q) + (a.start.t - b.start.t).norm() +
           (a.end.t - b.end.t).norm();
}

}  // namespace detail

/// Estimates the current frame's exposure trajectory relative to a sharp
/// reference image (same camera) by coarse-to-fine re-blurring
/// Levenberg-Marquardt. `init` seeds the state (e.g. constant velocity).
/// Throws InsufficientKeypoints or TrackingDiverged.
inline TrackResult track_frame(const ImageBuffer& ref_image, const RgbdFrame& cur,
                               const ExposureTrajectory& init, const TrackerConfig& cfg) {
    if (cur.rgb.empty() || cur.depth.empty()) throw ShapeMismatch("track_frame: empty frame");
    if (cfg.n_virtual < 1) throw DomainError("n_virtual must be >= 1");
    constexpr double kLambdaMax = 1e8;

    const int levels = std::max(1, cfg.pyramid_levels);
    const auto cur_pyr = build_pyramid(to_gray(cur.rgb), levels);
    const auto ref_pyr = build_pyramid(to_gray(ref_image), levels);
    const auto depth_pyr = build_pyramid(cur.depth, levels, /*smooth=*/false);

    ExposureTrajectory traj = init;
    if (!(traj.exposure > 0.0)) traj.exposure = cur.intrinsics.exposure;

    TrackResult result;
    result.converged = false;
    int total_iters = 0;

    for (int l = levels - 1; l >= 0; --l) {
        const Intrinsics cam_l = cur.intrinsics.level(l);
        const int max_kp = std::max(1, cfg.max_keypoints >> (2 * l));
        auto kps = select_keypoints(cur_pyr[l], depth_pyr[l], cfg, max_kp);
        if (l == 0 && static_cast<int>(kps.size()) < cfg.min_keypoints)
            throw InsufficientKeypoints("tracker found " + std::to_string(kps.size()) +
                                        " keypoints (need " + std::to_string(cfg.min_keypoints) +
                                        ")");
        if (static_cast<int>(kps.size()) < 6) continue;  // skip an untextured coarse level

        const detail::LevelProblem prob(cur_pyr[l], ref_pyr[l], cam_l, std::move(kps), cfg);
        double lambda = cfg.lm_lambda_init;
        int fails_at_max = 0;
        bool level_converged = false;

        detail::EvalAccum e = prob.evaluate(traj, true);
        for (int iter = 0; iter < cfg.max_iterations; ++iter) {
            if (!e.g.allFinite() || !(e.n_valid > 0))
                throw TrackingDiverged("non-finite normal equations");
            bool accepted = false;
            detail::Vec12 step = detail::Vec12::Zero();
            for (int attempt = 0; attempt < 24 && !accepted; ++attempt) {
                detail::Mat12 H = e.H.selfadjointView<Eigen::Lower>();
                detail::Vec12 diag = H.diagonal().cwiseMax(1e-10);
                H.diagonal() += lambda * diag;
                const detail::Vec12 d = H.ldlt().solve(-e.g);
                if (!d.allFinite()) {
                    lambda = std::min(lambda * 10.0, kLambdaMax);
                    continue;
                }
                const ExposureTrajectory trial = detail::apply_step(traj, d);
                const detail::EvalAccum te = prob.evaluate(trial, false);
                const bool enough = te.n_valid >= (e.n_valid * 7) / 10;
                if (enough && te.mean_cost() < e.mean_cost()) {
                    traj = trial;
                    step = d;
                    accepted = true;
                    lambda = std::max(lambda / 3.0, 1e-10);
                    fails_at_max = 0;
                } else {
                    if (lambda >= kLambdaMax) {
                        if (++fails_at_max >= 5)
                            throw TrackingDiverged("no cost reduction at maximum damping");
                        break;
                    }
                    lambda = std::min(lambda * 10.0, kLambdaMax);
                }
            }
            if (!accepted) break;
            ++total_iters;
            if (step.norm() < cfg.convergence_tol) {
                level_converged = true;
                break;
            }
            e = prob.evaluate(traj, true);
        }

        // The re-blurring data term is invariant under time reversal of the
        // exposure trajectory (the virtual samples are symmetric about the
        // midpoint), so every optimum has a mirrored twin with identical
        // cost. Keep the twin consistent with the initialization, which
        // carries the temporal ordering; this never changes the fit.
        const ExposureTrajectory rev = detail::time_reversed(traj);
        if (detail::trajectory_gap(rev, init) < detail::trajectory_gap(traj, init)) traj = rev;

        if (l == 0) {
            const detail::EvalAccum final_e = prob.evaluate(traj, false);
            result.final_cost = final_e.mean_cost();
            result.inlier_fraction =
                final_e.n_valid > 0 ? double(final_e.n_inlier) / double(final_e.n_valid) : 0.0;
            result.keypoints_used = static_cast<int>(prob.n_keypoints());
            result.converged = level_converged;
        }
    }

    result.trajectory = traj;
    result.iterations = total_iters;
    return result;
}

}  // namespace blurslam
