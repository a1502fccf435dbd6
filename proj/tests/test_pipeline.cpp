#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "blurslam/metrics.hpp"
#include "blurslam/pipeline.hpp"
#include "blurslam/synthetic.hpp"

using namespace blurslam;
namespace fs = std::filesystem;

namespace {

Intrinsics small_camera(double exposure) {
    Intrinsics cam;
    cam.fx = 60.0;
    cam.fy = 60.0;
    cam.cx = 31.5;
    cam.cy = 31.5;
    cam.width = 64;
    cam.height = 64;
    cam.exposure = exposure;
    return cam;
}

std::vector<RgbdFrame> to_frames(const GtSequence& seq) {
    std::vector<RgbdFrame> frames;
    frames.reserve(seq.frames.size());
    for (const GtFrame& f : seq.frames) frames.push_back(f.as_rgbd(seq.cam));
    return frames;
}

/// Fast configuration for 64x64 unit-test sequences.
PipelineConfig test_config() {
    PipelineConfig cfg;
    cfg.tracker.n_virtual = 7;
    cfg.tracker.max_keypoints = 256;
    cfg.mapper.n_virtual = 5;
    cfg.mapper.iterations = 80;
    cfg.mapper.seed_stride = 2;  // 64x64 frames want a denser map
    cfg.init_iterations = 400;
    cfg.window_size = 4;
    return cfg;
}

double max_traj_gap(const ExposureTrajectory& a, const ExposureTrajectory& b) {
    return std::max((a.start.t - b.start.t).norm(), (a.end.t - b.end.t).norm());
}

double max_traj_rot_gap(const ExposureTrajectory& a, const ExposureTrajectory& b) {
    return std::max(quat_angular_distance(a.start.q, b.start.q),
                    quat_angular_distance(a.end.q, b.end.q));
}

}  // namespace

TEST_CASE("pipeline: static sharp sequence keeps one keyframe near identity", "[pipeline]") {
    const Intrinsics cam = small_camera(0.06);
    const SyntheticScene scene = SyntheticScene::standard_room(77);
    const GtSequence seq = generate_sequence(scene, PathSpec{}, cam, 5, 0.1, 2);

    const SequenceResult res = run_slam(MemoryFrameSource(to_frames(seq)), test_config());

    REQUIRE(res.world.size() == 5);
    REQUIRE(res.keyframes.size() == 1);
    REQUIRE(res.keyframe_indices == std::vector<size_t>{0});
    REQUIRE(res.mapping_loss.size() == 1);
    CHECK_FALSE(res.map.empty());

    const ExposureTrajectory origin = ExposureTrajectory::static_at(PoseSE3::identity(), 0.06);
    for (size_t k = 0; k < res.world.size(); ++k) {
        INFO("frame " << k << " trans gap " << max_traj_gap(res.world[k], origin) << " rot gap "
                      << max_traj_rot_gap(res.world[k], origin));
        CHECK_FALSE(res.diagnostics[k].tracking_failed);
        CHECK(max_traj_gap(res.world[k], origin) < 6e-3);
        CHECK(max_traj_rot_gap(res.world[k], origin) < 0.2 * M_PI / 180.0);
    }
}

TEST_CASE("pipeline: moving sequence promotes keyframes and stays consistent", "[pipeline]") {
    const Intrinsics cam = small_camera(0.06);
    const SyntheticScene scene = SyntheticScene::standard_room(31);
    const GtSequence seq =
        generate_sequence(scene, PathSpec::standard_sweep(), cam, 8, 0.1, 8);

    const PipelineConfig cfg = test_config();
    const SequenceResult res = run_slam(MemoryFrameSource(to_frames(seq)), cfg);

    REQUIRE(res.world.size() == 8);
    REQUIRE(res.relative.size() == 8);
    REQUIRE(res.diagnostics.size() == 8);
    REQUIRE(res.keyframes.size() == res.keyframe_indices.size());
    REQUIRE(res.mapping_loss.size() == res.keyframes.size());
    CHECK(res.keyframes.size() >= 2);
    CHECK(res.keyframes.size() <= 6);

    // Keyframe indices strictly increase and start at frame 0.
    REQUIRE(res.keyframe_indices.front() == 0);
    for (size_t j = 1; j < res.keyframe_indices.size(); ++j)
        CHECK(res.keyframe_indices[j] > res.keyframe_indices[j - 1]);

    // World-frame consistency: every frame is the composition of its
    // reference keyframe's refined mid pose with the stored relative
    // trajectory.
    for (size_t k = 0; k < res.world.size(); ++k) {
        const TrackDiagnostics& d = res.diagnostics[k];
        REQUIRE(d.reference_keyframe >= 0);
        REQUIRE(static_cast<size_t>(d.reference_keyframe) < res.keyframes.size());
        const ExposureTrajectory recomposed = compose_trajectory(
            mid_pose(res.keyframes[size_t(d.reference_keyframe)].trajectory), res.relative[k]);
        CHECK(max_traj_gap(res.world[k], recomposed) < 1e-9);
        CHECK(max_traj_rot_gap(res.world[k], recomposed) < 1e-9);
        if (d.is_keyframe) {
            REQUIRE(d.keyframe_index >= 0);
            CHECK(res.keyframe_indices[size_t(d.keyframe_index)] == k);
        }
    }

    // Accuracy: mid-pose ATE against the synthetic ground truth after rigid
    // alignment (the estimate's origin is frame 0's mid pose).
    std::vector<TimedPose> gt;
    for (const GtFrame& f : seq.frames)
        gt.push_back({f.timestamp + 0.03, interpolate_pose(f.traj_w, 0.03)});
    const AteReport ate = ate_rmse(sample_trajectory(res, TrajectorySample::Mid), gt);
    INFO("ATE rmse " << ate.rmse << " max " << ate.max);
    CHECK(ate.rmse < 0.025);

    // Determinism: an identical run exports byte-identical trajectories.
    const SequenceResult res2 = run_slam(MemoryFrameSource(to_frames(seq)), cfg);
    CHECK(export_trajectory(res, TrajectorySample::Mid) ==
          export_trajectory(res2, TrajectorySample::Mid));
    CHECK(export_trajectory(res, TrajectorySample::Start) ==
          export_trajectory(res2, TrajectorySample::Start));
    CHECK(res.map.size() == res2.map.size());
}

TEST_CASE("pipeline: max frame gap forces promotion on a static sequence", "[pipeline]") {
    const Intrinsics cam = small_camera(0.06);
    const SyntheticScene scene = SyntheticScene::standard_room(77);
    const GtSequence seq = generate_sequence(scene, PathSpec{}, cam, 8, 0.1, 2);

    PipelineConfig cfg = test_config();
    cfg.keyframe_max_gap = 3;
    cfg.mapper.iterations = 40;
    cfg.init_iterations = 100;

    const SequenceResult res = run_slam(MemoryFrameSource(to_frames(seq)), cfg);
    REQUIRE(res.keyframe_indices == std::vector<size_t>{0, 3, 6});

    // Policy soundness: promoted static frames satisfy exactly the gap rule.
    for (size_t j = 1; j < res.keyframe_indices.size(); ++j)
        CHECK(res.keyframe_indices[j] - res.keyframe_indices[j - 1] ==
              static_cast<size_t>(cfg.keyframe_max_gap));
}

TEST_CASE("pipeline: tracking failure is flagged and bridged", "[pipeline]") {
    const Intrinsics cam = small_camera(0.06);
    const SyntheticScene scene = SyntheticScene::standard_room(31);
    const GtSequence seq =
        generate_sequence(scene, PathSpec::standard_sweep(), cam, 5, 0.1, 8);

    std::vector<RgbdFrame> frames = to_frames(seq);
    frames[3].rgb = ImageBuffer(cam.width, cam.height, 3);  // featureless frame

    const SequenceResult res = run_slam(MemoryFrameSource(std::move(frames)), test_config());

    REQUIRE(res.world.size() == 5);
    CHECK(res.diagnostics[3].tracking_failed);
    CHECK_FALSE(res.diagnostics[3].is_keyframe);
    CHECK_FALSE(res.diagnostics[1].tracking_failed);
    CHECK_FALSE(res.diagnostics[2].tracking_failed);
    // The frame after the dropout tracks again off the extrapolated pose.
    CHECK_FALSE(res.diagnostics[4].tracking_failed);
    for (const ExposureTrajectory& w : res.world) {
        CHECK(w.start.t.allFinite());
        CHECK(w.end.t.allFinite());
    }
}

TEST_CASE("pipeline: export format, ordering, and round trip", "[pipeline]") {
    SequenceResult res;
    // Two frames supplied in reverse timestamp order; export must sort.
    ExposureTrajectory moving;
    moving.start = {UnitQuaternion(quat_exp(Eigen::Vector3d(0.10, -0.04, 0.02)).coeffs()),
                    Eigen::Vector3d(1.0, 2.0, 3.0)};
    moving.end = {UnitQuaternion(quat_exp(Eigen::Vector3d(0.12, -0.02, 0.05)).coeffs()),
                  Eigen::Vector3d(1.1, 2.05, 2.9)};
    moving.exposure = 0.1;
    res.world.push_back(moving);
    res.world.push_back(ExposureTrajectory::static_at(PoseSE3::identity(), 0.1));
    TrackDiagnostics d1;
    d1.timestamp = 0.25;
    res.diagnostics.push_back(d1);
    TrackDiagnostics d0;
    d0.timestamp = 0.0;
    res.diagnostics.push_back(d0);

    const std::string start_text = export_trajectory(res, TrajectorySample::Start);
    REQUIRE(start_text.substr(0, start_text.find('\n')) == "0.000000000 0 0 0 0 0 0 1");

    // Start and end exports differ in timestamp by exactly the exposure and
    // carry the exact endpoint poses.
    const auto start_poses = sample_trajectory(res, TrajectorySample::Start);
    const auto end_poses = sample_trajectory(res, TrajectorySample::End);
    REQUIRE(start_poses.size() == 2);
    for (size_t i = 0; i < 2; ++i) {
        CHECK(end_poses[i].timestamp - start_poses[i].timestamp ==
              Catch::Approx(0.1).margin(1e-12));
        CHECK(start_poses[i].timestamp < end_poses[i].timestamp);
    }
    CHECK((start_poses[1].pose.t - moving.start.t).norm() == 0.0);
    CHECK((end_poses[1].pose.t - moving.end.t).norm() == 0.0);

    // Ordering: the t=0 frame leads even though it was pushed second.
    CHECK(start_poses[0].timestamp == 0.0);
    CHECK(start_poses[1].timestamp == 0.25);

    // Round trip through the trajectory file parser at 1e-9.
    const fs::path path = fs::temp_directory_path() / "blurslam_pipeline_export.txt";
    std::ofstream(path) << export_trajectory(res, TrajectorySample::Mid);
    const std::vector<TimedPose> parsed = load_trajectory_file(path.string());
    const auto mid_poses = sample_trajectory(res, TrajectorySample::Mid);
    REQUIRE(parsed.size() == mid_poses.size());
    for (size_t i = 0; i < parsed.size(); ++i) {
        CHECK(std::abs(parsed[i].timestamp - mid_poses[i].timestamp) < 1e-9);
        CHECK((parsed[i].pose.t - mid_poses[i].pose.t).norm() < 1e-9);
        CHECK((parsed[i].pose.q.coeffs() - mid_poses[i].pose.q.coeffs()).norm() < 1e-9);
    }
    fs::remove(path);

    SequenceResult empty;
    CHECK_THROWS_AS(export_trajectory(empty, TrajectorySample::Mid), DomainError);
}

TEST_CASE("pipeline: config assembly precedence matrix", "[pipeline]") {
    // Defaults only.
    const PipelineConfig defaults = make_pipeline_config(Config{});
    CHECK(defaults.tracker.n_virtual == TrackerConfig{}.n_virtual);
    CHECK(defaults.mapper.iterations == MapperConfig{}.iterations);
    CHECK(defaults.window_size == 8);
    CHECK(defaults.keyframe_max_gap == 20);

    // File layer overrides defaults; flag layer overrides the file.
    Config file;
    file.set("tracker.n_virtual", "7");
    file.set("mapper.iterations", "220");
    file.set("pipeline.window_size", "5");
    file.set("pipeline.seed", "42");

    Config flags;
    flags.set("tracker.n_virtual", "3");
    flags.set("pipeline.keyframe_rotation_deg", "6.5");

    Config merged = file;
    merged.merge(flags);
    const PipelineConfig cfg = make_pipeline_config(merged);
    CHECK(cfg.tracker.n_virtual == 3);            // flag beats file
    CHECK(cfg.mapper.iterations == 220);          // file beats default
    CHECK(cfg.window_size == 5);                  // file beats default
    CHECK(cfg.seed == 42);                        // file beats default
    CHECK(cfg.keyframe_rotation_deg == 6.5);      // flag beats default
    CHECK(cfg.keyframe_max_gap == 20);            // untouched default
    CHECK(cfg.tracker.huber_delta == TrackerConfig{}.huber_delta);
}

TEST_CASE("pipeline: validation errors", "[pipeline]") {
    const Intrinsics cam = small_camera(0.05);

    RgbdFrame small;
    small.rgb = ImageBuffer(cam.width, cam.height, 3);
    small.depth = ImageBuffer(cam.width, cam.height, 1);
    for (size_t i = 0; i < small.depth.size(); ++i) small.depth.raw()[i] = 2.0;
    small.timestamp = 0.0;
    small.intrinsics = cam;

    CHECK_THROWS_AS(run_slam(MemoryFrameSource({}), PipelineConfig{}), DomainError);
    CHECK_THROWS_AS(run_slam(MemoryFrameSource({small}), PipelineConfig{}), DomainError);

    PipelineConfig bad;
    bad.window_size = 0;
    CHECK_THROWS_AS(run_slam(MemoryFrameSource({small, small}), bad), DomainError);
    bad = PipelineConfig{};
    bad.keyframe_rotation_deg = 0.0;
    CHECK_THROWS_AS(run_slam(MemoryFrameSource({small, small}), bad), DomainError);
    bad = PipelineConfig{};
    bad.keyframe_max_gap = 0;
    CHECK_THROWS_AS(run_slam(MemoryFrameSource({small, small}), bad), DomainError);

    // Frame size change mid-sequence.
    RgbdFrame tiny = small;
    tiny.rgb = ImageBuffer(16, 16, 3);
    tiny.depth = ImageBuffer(16, 16, 1);
    tiny.timestamp = 0.1;
    tiny.intrinsics.width = 16;
    tiny.intrinsics.height = 16;
    CHECK_THROWS_AS(run_slam(MemoryFrameSource({small, tiny}), test_config()), ShapeMismatch);
}
