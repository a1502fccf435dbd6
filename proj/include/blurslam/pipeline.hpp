#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "blurslam/config.hpp"
#include "blurslam/dataset.hpp"
#include "blurslam/errors.hpp"
#include "blurslam/lie.hpp"
#include "blurslam/mapper.hpp"
#include "blurslam/metrics.hpp"
#include "blurslam/splat.hpp"
#include "blurslam/tracker.hpp"

namespace blurslam {

// Sequence orchestration: frame 0 seeds and bootstraps the map; every later
// frame is tracked against a sharp render of the map at the last keyframe's
// mid-exposure pose, composed into the world frame (frame 0 mid pose is the
// origin), and promoted to a keyframe when it has moved far enough — which
// triggers a windowed map-and-trajectory optimization.

/// Sequential frame provider; abstracts on-disk datasets from in-memory
/// sequences so tests and the synthetic oracle drive the identical pipeline.
class FrameSource {
public:
    virtual ~FrameSource() = default;
    virtual size_t size() const = 0;
    virtual RgbdFrame frame(size_t index) const = 0;
};

class MemoryFrameSource final : public FrameSource {
public:
    explicit MemoryFrameSource(std::vector<RgbdFrame> frames) : frames_(std::move(frames)) {}
    size_t size() const override { return frames_.size(); }
    RgbdFrame frame(size_t index) const override { return frames_.at(index); }

private:
    std::vector<RgbdFrame> frames_;
};

/// Decodes frames lazily from a loaded dataset index.
class DatasetFrameSource final : public FrameSource {
public:
    explicit DatasetFrameSource(const Dataset& dataset) : dataset_(&dataset) {}
    size_t size() const override { return dataset_->frames.size(); }
    RgbdFrame frame(size_t index) const override { return load_frame(*dataset_, index); }

private:
    const Dataset* dataset_;
};

struct PipelineConfig {
    TrackerConfig tracker;
    MapperConfig mapper;

    // Keyframe promotion: mid-pose motion relative to the last keyframe.
    double keyframe_translation_fraction = 0.05;  // of mapper.scene_extent, meters
    double keyframe_rotation_deg = 10.0;
    int keyframe_max_gap = 20;  // promote after this many frames regardless

    // Mapping window: the new keyframe plus (window_size - 1) uniformly
    // random prior keyframes; the oldest selected keyframe is held fixed as
    // the gauge anchor for that call.
    int window_size = 8;

    int init_iterations = 250;  // map bootstrap on frame 0
    std::uint64_t seed = 0;     // window sampling / split sampling
};

inline void validate(const PipelineConfig& cfg) {
    if (!(cfg.keyframe_translation_fraction > 0.0) || !(cfg.keyframe_rotation_deg > 0.0))
        throw DomainError("pipeline: keyframe thresholds must be positive");
    if (cfg.keyframe_max_gap < 1) throw DomainError("pipeline: keyframe_max_gap must be >= 1");
    if (cfg.window_size < 1) throw DomainError("pipeline: window_size must be >= 1");
    if (cfg.init_iterations < 0) throw DomainError("pipeline: init_iterations must be >= 0");
}

struct TrackDiagnostics {
    double timestamp = 0.0;
    int reference_keyframe = 0;    // index into SequenceResult::keyframes
    bool is_keyframe = false;
    int keyframe_index = -1;       // own index into keyframes when promoted
    bool tracking_failed = false;  // diverged; pose is the constant-velocity prediction
    double final_cost = 0.0;
    int iterations = 0;
    bool converged = false;
    double inlier_fraction = 0.0;
    int keypoints_used = 0;
};

struct SequenceResult {
    // One entry per input frame. `world` composes the reference keyframe's
    // refined mid pose with `relative` (the tracked frame-to-keyframe
    // trajectory), so mapper refinements propagate to every frame.
    std::vector<ExposureTrajectory> world;
    std::vector<ExposureTrajectory> relative;
    std::vector<TrackDiagnostics> diagnostics;

    std::vector<size_t> keyframe_indices;  // frame index per keyframe, increasing
    std::vector<Keyframe> keyframes;       // refined trajectories + captured frames
    std::vector<double> mapping_loss;      // final optimize_map loss per keyframe
    GaussianMap map;
};

inline PoseSE3 mid_pose(const ExposureTrajectory& traj) {
    return interpolate_pose(traj, 0.5 * traj.exposure);
}

/// Pointwise endpoint composition; exact for the decomposed interpolation
/// model (left composition commutes with the rotation geodesic, and the
/// translation weights sum to 1 exactly).
inline ExposureTrajectory compose_trajectory(const PoseSE3& base, const ExposureTrajectory& rel) {
    return {base.compose(rel.start), base.compose(rel.end), rel.exposure};
}

enum class TrajectorySample { Start, Mid, End };

inline double sample_offset(TrajectorySample which, double exposure) {
    switch (which) {
        case TrajectorySample::Start: return 0.0;
        case TrajectorySample::Mid: return 0.5 * exposure;
        case TrajectorySample::End: return exposure;
    }
    return 0.5 * exposure;
}

/// Per-frame world poses at the chosen in-exposure sample; the timestamp
/// carries the same offset so start/end exports differ by the exposure.
inline std::vector<TimedPose> sample_trajectory(const SequenceResult& result,
                                                TrajectorySample which) {
    if (result.world.empty()) throw DomainError("sample_trajectory: empty result");
    std::vector<TimedPose> poses;
    poses.reserve(result.world.size());
    for (size_t k = 0; k < result.world.size(); ++k) {
        const ExposureTrajectory& traj = result.world[k];
        const double offset = sample_offset(which, traj.exposure);
        poses.push_back({result.diagnostics[k].timestamp + offset,
                         interpolate_pose(traj, offset)});
    }
    std::stable_sort(poses.begin(), poses.end(),
                     [](const TimedPose& a, const TimedPose& b) {
                         return a.timestamp < b.timestamp;
                     });
    return poses;
}

/// Text export, one line per frame: "timestamp tx ty tz qx qy qz qw",
/// sorted by timestamp; parses back with load_trajectory_file to 1e-9.
inline std::string export_trajectory(const SequenceResult& result,
                                     TrajectorySample which = TrajectorySample::Mid) {
    return trajectory_to_text(sample_trajectory(result, which));
}

namespace detail {

/// The newest keyframe plus up to (window_size - 1) uniformly random prior
/// keyframes, ascending. Explicit modulo draws keep the selection pinned to
/// the seed across standard-library implementations.
inline std::vector<size_t> pick_window(size_t n_keyframes, int window_size,
                                       std::mt19937_64& rng) {
    const size_t current = n_keyframes - 1;
    const size_t want_prior = static_cast<size_t>(window_size - 1);
    std::vector<size_t> window(current);
    std::iota(window.begin(), window.end(), size_t{0});
    if (window.size() > want_prior) {
        for (size_t i = 0; i < want_prior; ++i) {
            const size_t j = i + static_cast<size_t>(rng() % (window.size() - i));
            std::swap(window[i], window[j]);
        }
        window.resize(want_prior);
    }
    window.push_back(current);
    std::sort(window.begin(), window.end());
    return window;
}

/// Constant-velocity prediction under the decomposed motion model: the
/// mid-to-mid step of the previous frame pair, rescaled to the current frame
/// interval, extrapolated and spread across the exposure.
inline ExposureTrajectory predict_trajectory(const PoseSE3& prev2_mid, const PoseSE3& prev_mid,
                                             double dt_prev, double dt_cur, double exposure) {
    const PoseSE3 vel = prev2_mid.inverse().compose(prev_mid);
    const PoseSE3 step = pose_power(vel, dt_prev > 0.0 ? dt_cur / dt_prev : 1.0);
    const PoseSE3 mid = prev_mid.compose(step);
    const double s = dt_cur > 0.0 ? exposure / dt_cur : 1.0;
    return {mid.compose(pose_power(step, -0.5 * s)), mid.compose(pose_power(step, 0.5 * s)),
            exposure};
}

}  // namespace detail

inline SequenceResult run_slam(const FrameSource& source, const PipelineConfig& cfg) {
    validate(cfg);
    const size_t n_frames = source.size();
    if (n_frames < 2) throw DomainError("run_slam: need at least 2 frames");

    SequenceResult res;
    res.world.reserve(n_frames);
    res.relative.reserve(n_frames);
    res.diagnostics.reserve(n_frames);

    std::mt19937_64 window_rng(cfg.seed);
    std::uint64_t mapper_salt = cfg.seed;

    // One optimize_map call on the given window; copies the refined
    // trajectories back onto the stored keyframes (window[0] is the frozen
    // gauge anchor and comes back unchanged). Densification runs first,
    // consuming the previous call's positional-gradient statistics, so
    // every call hands a fully refined map back to the tracker.
    const auto optimize_window = [&](const std::vector<size_t>& indices,
                                     const MapperConfig& mcfg) {
        std::vector<Keyframe> window;
        window.reserve(indices.size());
        for (const size_t idx : indices) window.push_back(res.keyframes[idx]);
        MapperState state;
        state.init(res.map.size(), window.size());
        state.rng.seed(mapper_salt += 0x9E3779B97F4A7C15ULL);
        densify_and_prune(res.map, mcfg, &state);
        const std::vector<double> trace = optimize_map(res.map, window, mcfg, state);
        for (size_t j = 0; j < indices.size(); ++j)
            res.keyframes[indices[j]].trajectory = window[j].trajectory;
        return trace.empty() ? 0.0 : trace.back();
    };

    // Frame 0: the world origin at its mid-exposure pose. Its in-exposure
    // motion is unobservable (nothing to track against), so the trajectory
    // starts static and the bootstrap treats the capture as sharp; the
    // mapper refines the map but keyframe 0 stays the gauge anchor.
    const RgbdFrame frame0 = source.frame(0);
    if (!(frame0.intrinsics.exposure > 0.0))
        throw DomainError("run_slam: frame exposure must be positive");
    {
        const ExposureTrajectory origin =
            ExposureTrajectory::static_at(PoseSE3::identity(), frame0.intrinsics.exposure);
        res.keyframes.push_back({frame0, origin});
        res.keyframe_indices.push_back(0);
        seed_gaussians(res.map, res.keyframes[0], cfg.mapper);
        MapperConfig boot = cfg.mapper;
        // Frame 0's trajectory is static by construction, so the blurry
        // render equals the single mid-pose render exactly; n_virtual = 1
        // makes the bootstrap that much cheaper at identical math. Two
        // rounds let the first round's densification get refined before
        // frame 1 tracks against the map.
        boot.n_virtual = 1;
        boot.iterations = (cfg.init_iterations + 1) / 2;
        optimize_window({0}, boot);
        boot.iterations = cfg.init_iterations / 2;
        res.mapping_loss.push_back(optimize_window({0}, boot));

        res.world.push_back(origin);
        res.relative.push_back(origin);
        TrackDiagnostics d;
        d.timestamp = frame0.timestamp;
        d.reference_keyframe = 0;
        d.is_keyframe = true;
        d.keyframe_index = 0;
        res.diagnostics.push_back(d);
    }

    const double trans_threshold = cfg.keyframe_translation_fraction * cfg.mapper.scene_extent;
    for (size_t k = 1; k < n_frames; ++k) {
        const RgbdFrame cur = source.frame(k);
        if (cur.rgb.width() != frame0.rgb.width() || cur.rgb.height() != frame0.rgb.height())
            throw ShapeMismatch("run_slam: frame size changed mid-sequence");
        const double exposure =
            cur.intrinsics.exposure > 0.0 ? cur.intrinsics.exposure : frame0.intrinsics.exposure;

        // Constant-velocity prediction in the world frame.
        ExposureTrajectory predicted;
        if (k >= 2) {
            predicted = detail::predict_trajectory(
                mid_pose(res.world[k - 2]), mid_pose(res.world[k - 1]),
                res.diagnostics[k - 1].timestamp - res.diagnostics[k - 2].timestamp,
                cur.timestamp - res.diagnostics[k - 1].timestamp, exposure);
        } else {
            predicted = ExposureTrajectory::static_at(mid_pose(res.world[0]), exposure);
        }

        const int ref_idx = static_cast<int>(res.keyframes.size()) - 1;
        const Keyframe& ref_kf = res.keyframes[static_cast<size_t>(ref_idx)];
        const PoseSE3 ref_mid = mid_pose(ref_kf.trajectory);
        const PoseSE3 ref_mid_inv = ref_mid.inverse();

        ExposureTrajectory init = compose_trajectory(ref_mid_inv, predicted);
        init.exposure = exposure;

        // Sharp reference from the map; the raw (blurry) capture is the
        // fallback while the map is still empty.
        ImageBuffer reference;
        if (res.map.empty()) {
            reference = ref_kf.frame.rgb;
        } else {
            reference = rasterize(res.map, ref_mid, ref_kf.frame.intrinsics).color;
        }

        TrackDiagnostics d;
        d.timestamp = cur.timestamp;
        d.reference_keyframe = ref_idx;
        ExposureTrajectory rel = init;
        try {
            const TrackResult tracked = track_frame(reference, cur, init, cfg.tracker);
            rel = tracked.trajectory;
            d.final_cost = tracked.final_cost;
            d.iterations = tracked.iterations;
            d.converged = tracked.converged;
            d.inlier_fraction = tracked.inlier_fraction;
            d.keypoints_used = tracked.keypoints_used;
        } catch (const TrackingDiverged&) {
            d.tracking_failed = true;
        } catch (const InsufficientKeypoints&) {
            d.tracking_failed = true;
        }

        const ExposureTrajectory world = compose_trajectory(ref_mid, rel);
        res.relative.push_back(rel);
        res.world.push_back(world);

        // Keyframe promotion on mid-pose motion or frame gap; failed frames
        // carry extrapolated poses and never become keyframes.
        const PoseSE3 cur_mid = mid_pose(world);
        const double moved = (cur_mid.t - ref_mid.t).norm();
        const double turned =
            quat_angular_distance(cur_mid.q, ref_mid.q) * 180.0 / M_PI;
        const size_t gap = k - res.keyframe_indices.back();
        const bool promote =
            !d.tracking_failed &&
            (moved >= trans_threshold || turned >= cfg.keyframe_rotation_deg ||
             gap >= static_cast<size_t>(cfg.keyframe_max_gap));
        if (promote) {
            d.is_keyframe = true;
            d.keyframe_index = static_cast<int>(res.keyframes.size());
            d.reference_keyframe = d.keyframe_index;
            res.keyframes.push_back({cur, world});
            res.keyframe_indices.push_back(k);
            seed_gaussians(res.map, res.keyframes.back(), cfg.mapper);
            res.mapping_loss.push_back(optimize_window(
                detail::pick_window(res.keyframes.size(), cfg.window_size, window_rng),
                cfg.mapper));
        }
        res.diagnostics.push_back(d);
    }

    // Final composition against the refined keyframe trajectories, so every
    // frame reflects the last mapping refinement. Keyframes export their own
    // refined trajectory; their `relative` becomes the in-exposure motion
    // about their mid pose, keeping one composition rule for all frames.
    for (size_t k = 0; k < n_frames; ++k) {
        TrackDiagnostics& d = res.diagnostics[k];
        if (d.is_keyframe) {
            const ExposureTrajectory& traj =
                res.keyframes[static_cast<size_t>(d.keyframe_index)].trajectory;
            res.relative[k] = compose_trajectory(mid_pose(traj).inverse(), traj);
            res.world[k] = traj;
        } else {
            res.world[k] = compose_trajectory(
                mid_pose(res.keyframes[static_cast<size_t>(d.reference_keyframe)].trajectory),
                res.relative[k]);
        }
    }
    return res;
}

inline SequenceResult run_slam(const Dataset& dataset, const PipelineConfig& cfg) {
    return run_slam(DatasetFrameSource(dataset), cfg);
}

/// Assemble a PipelineConfig from flat dotted keys; absent keys keep the
/// built-in defaults, so layering Config objects (file then flags) yields
/// the default < file < flag precedence.
inline PipelineConfig make_pipeline_config(const Config& c) {
    PipelineConfig p;

    TrackerConfig& t = p.tracker;
    t.n_virtual = c.get_int("tracker.n_virtual", t.n_virtual);
    t.pyramid_levels = c.get_int("tracker.pyramid_levels", t.pyramid_levels);
    t.huber_delta = c.get_double("tracker.huber_delta", t.huber_delta);
    t.max_iterations = c.get_int("tracker.max_iterations", t.max_iterations);
    t.lm_lambda_init = c.get_double("tracker.lm_lambda_init", t.lm_lambda_init);
    t.convergence_tol = c.get_double("tracker.convergence_tol", t.convergence_tol);
    t.max_keypoints = c.get_int("tracker.max_keypoints", t.max_keypoints);
    t.gradient_threshold = c.get_double("tracker.gradient_threshold", t.gradient_threshold);
    t.patch_size = c.get_int("tracker.patch_size", t.patch_size);
    t.min_keypoints = c.get_int("tracker.min_keypoints", t.min_keypoints);
    t.min_depth = c.get_double("tracker.min_depth", t.min_depth);
    t.max_depth = c.get_double("tracker.max_depth", t.max_depth);

    MapperConfig& m = p.mapper;
    m.n_virtual = c.get_int("mapper.n_virtual", m.n_virtual);
    m.lambda_color = c.get_double("mapper.lambda_color", m.lambda_color);
    m.lambda_ssim = c.get_double("mapper.lambda_ssim", m.lambda_ssim);
    m.lambda_depth = c.get_double("mapper.lambda_depth", m.lambda_depth);
    m.lambda_reg = c.get_double("mapper.lambda_reg", m.lambda_reg);
    m.reg_ratio = c.get_double("mapper.reg_ratio", m.reg_ratio);
    m.iterations = c.get_int("mapper.iterations", m.iterations);
    m.seed_stride = c.get_int("mapper.seed_stride", m.seed_stride);
    m.seed_alpha_threshold = c.get_double("mapper.seed_alpha_threshold", m.seed_alpha_threshold);
    m.seed_scale_factor = c.get_double("mapper.seed_scale_factor", m.seed_scale_factor);
    m.seed_opacity = c.get_double("mapper.seed_opacity", m.seed_opacity);
    m.min_depth = c.get_double("mapper.min_depth", m.min_depth);
    m.max_depth = c.get_double("mapper.max_depth", m.max_depth);
    m.depth_alpha_threshold =
        c.get_double("mapper.depth_alpha_threshold", m.depth_alpha_threshold);
    m.densify_grad_threshold =
        c.get_double("mapper.densify_grad_threshold", m.densify_grad_threshold);
    m.densify_size_fraction =
        c.get_double("mapper.densify_size_fraction", m.densify_size_fraction);
    m.split_shrink = c.get_double("mapper.split_shrink", m.split_shrink);
    m.prune_opacity = c.get_double("mapper.prune_opacity", m.prune_opacity);
    m.prune_size_fraction = c.get_double("mapper.prune_size_fraction", m.prune_size_fraction);
    m.lr_mean = c.get_double("mapper.lr_mean", m.lr_mean);
    m.lr_scale = c.get_double("mapper.lr_scale", m.lr_scale);
    m.lr_rot = c.get_double("mapper.lr_rot", m.lr_rot);
    m.lr_opacity = c.get_double("mapper.lr_opacity", m.lr_opacity);
    m.lr_color = c.get_double("mapper.lr_color", m.lr_color);
    m.lr_traj_rot = c.get_double("mapper.lr_traj_rot", m.lr_traj_rot);
    m.lr_traj_trans = c.get_double("mapper.lr_traj_trans", m.lr_traj_trans);
    m.scene_extent = c.get_double("mapper.scene_extent", m.scene_extent);
    m.adam_beta1 = c.get_double("mapper.adam_beta1", m.adam_beta1);
    m.adam_beta2 = c.get_double("mapper.adam_beta2", m.adam_beta2);
    m.adam_eps = c.get_double("mapper.adam_eps", m.adam_eps);

    p.keyframe_translation_fraction =
        c.get_double("pipeline.keyframe_translation_fraction", p.keyframe_translation_fraction);
    p.keyframe_rotation_deg =
        c.get_double("pipeline.keyframe_rotation_deg", p.keyframe_rotation_deg);
    p.keyframe_max_gap = c.get_int("pipeline.keyframe_max_gap", p.keyframe_max_gap);
    p.window_size = c.get_int("pipeline.window_size", p.window_size);
    p.init_iterations = c.get_int("pipeline.init_iterations", p.init_iterations);
    p.seed = static_cast<std::uint64_t>(
        c.get_int("pipeline.seed", static_cast<int>(p.seed)));
    return p;
}

/// The effective configuration as the same flat dotted keys
/// make_pipeline_config reads. Doubles use %.17g, so feeding the entries
/// back through make_pipeline_config reproduces the struct exactly.
inline std::map<std::string, std::string> pipeline_config_entries(const PipelineConfig& p) {
    std::map<std::string, std::string> out;
    const auto put_d = [&out](const char* key, double v) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        out[key] = buf;
    };
    const auto put_i = [&out](const char* key, long long v) { out[key] = std::to_string(v); };

    const TrackerConfig& t = p.tracker;
    put_i("tracker.n_virtual", t.n_virtual);
    put_i("tracker.pyramid_levels", t.pyramid_levels);
    put_d("tracker.huber_delta", t.huber_delta);
    put_i("tracker.max_iterations", t.max_iterations);
    put_d("tracker.lm_lambda_init", t.lm_lambda_init);
    put_d("tracker.convergence_tol", t.convergence_tol);
    put_i("tracker.max_keypoints", t.max_keypoints);
    put_d("tracker.gradient_threshold", t.gradient_threshold);
    put_i("tracker.patch_size", t.patch_size);
    put_i("tracker.min_keypoints", t.min_keypoints);
    put_d("tracker.min_depth", t.min_depth);
    put_d("tracker.max_depth", t.max_depth);

    const MapperConfig& m = p.mapper;
    put_i("mapper.n_virtual", m.n_virtual);
    put_d("mapper.lambda_color", m.lambda_color);
    put_d("mapper.lambda_ssim", m.lambda_ssim);
    put_d("mapper.lambda_depth", m.lambda_depth);
    put_d("mapper.lambda_reg", m.lambda_reg);
    put_d("mapper.reg_ratio", m.reg_ratio);
    put_i("mapper.iterations", m.iterations);
    put_i("mapper.seed_stride", m.seed_stride);
    put_d("mapper.seed_alpha_threshold", m.seed_alpha_threshold);
    put_d("mapper.seed_scale_factor", m.seed_scale_factor);
    put_d("mapper.seed_opacity", m.seed_opacity);
    put_d("mapper.min_depth", m.min_depth);
    put_d("mapper.max_depth", m.max_depth);
    put_d("mapper.depth_alpha_threshold", m.depth_alpha_threshold);
    put_d("mapper.densify_grad_threshold", m.densify_grad_threshold);
    put_d("mapper.densify_size_fraction", m.densify_size_fraction);
    put_d("mapper.split_shrink", m.split_shrink);
    put_d("mapper.prune_opacity", m.prune_opacity);
    put_d("mapper.prune_size_fraction", m.prune_size_fraction);
    put_d("mapper.lr_mean", m.lr_mean);
    put_d("mapper.lr_scale", m.lr_scale);
    put_d("mapper.lr_rot", m.lr_rot);
    put_d("mapper.lr_opacity", m.lr_opacity);
    put_d("mapper.lr_color", m.lr_color);
    put_d("mapper.lr_traj_rot", m.lr_traj_rot);
    put_d("mapper.lr_traj_trans", m.lr_traj_trans);
    put_d("mapper.scene_extent", m.scene_extent);
    put_d("mapper.adam_beta1", m.adam_beta1);
    put_d("mapper.adam_beta2", m.adam_beta2);
    put_d("mapper.adam_eps", m.adam_eps);

    put_d("pipeline.keyframe_translation_fraction", p.keyframe_translation_fraction);
    put_d("pipeline.keyframe_rotation_deg", p.keyframe_rotation_deg);
    put_i("pipeline.keyframe_max_gap", p.keyframe_max_gap);
    put_i("pipeline.window_size", p.window_size);
    put_i("pipeline.init_iterations", p.init_iterations);
    put_i("pipeline.seed", static_cast<long long>(p.seed));
    return out;
}

}  // namespace blurslam
