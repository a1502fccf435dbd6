#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "blurslam/dataset.hpp"
#include "support/random_gen.hpp"

using namespace blurslam;
namespace fs = std::filesystem;

namespace {

struct Scratch {
    fs::path dir;
    explicit Scratch(const std::string& name) : dir(fs::temp_directory_path() / name) {
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Scratch() { fs::remove_all(dir); }
    std::string root() const { return dir.string(); }
    std::string file(const std::string& name) const { return (dir / name).string(); }
};

Intrinsics small_camera() {
    Intrinsics cam;
    cam.fx = 30.0;
    cam.fy = 32.0;
    cam.cx = 7.5;
    cam.cy = 5.5;
    cam.width = 16;
    cam.height = 12;
    cam.depth_scale = 1.0 / 5000.0;
    cam.exposure = 0.03;
    return cam;
}

RgbdFrame patterned_frame(const Intrinsics& cam, double timestamp, int phase) {
    RgbdFrame f;
    f.timestamp = timestamp;
    f.intrinsics = cam;
    f.rgb = ImageBuffer(cam.width, cam.height, 3);
    f.depth = ImageBuffer(cam.width, cam.height, 1);
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            for (int c = 0; c < 3; ++c)
                f.rgb.at(x, y, c) = ((x + 2 * y + 5 * c + phase) % 256) / 255.0;
            f.depth.at(x, y) = ((y * cam.width + x + phase) % 4000) * cam.depth_scale;
        }
    return f;
}

}  // namespace

TEST_CASE("dataset round trip preserves frames and camera", "[dataset]") {
    Scratch tmp("blurslam_ds_roundtrip");
    const Intrinsics cam = small_camera();

    std::vector<RgbdFrame> frames;
    std::vector<TimedPose> gt;
    testsupport::Rng rng(8001);
    for (int i = 0; i < 4; ++i) {
        frames.push_back(patterned_frame(cam, 100.0 + 0.1 * i, i));
        gt.push_back({100.0 + 0.1 * i, rng.pose(0.4, 0.5)});
    }
    write_tum_dataset(tmp.root(), cam, frames, gt);

    const Dataset ds = load_dataset(tmp.root());
    REQUIRE(ds.frames.size() == 4);
    CHECK(ds.intrinsics.fx == cam.fx);
    CHECK(ds.intrinsics.fy == cam.fy);
    CHECK(ds.intrinsics.cx == cam.cx);
    CHECK(ds.intrinsics.cy == cam.cy);
    CHECK(ds.intrinsics.width == cam.width);
    CHECK(ds.intrinsics.height == cam.height);
    CHECK(ds.intrinsics.depth_scale == Catch::Approx(cam.depth_scale).epsilon(1e-12));
    CHECK(ds.intrinsics.exposure == Catch::Approx(cam.exposure).epsilon(1e-12));
    REQUIRE(ds.groundtruth.size() == 4);

    for (size_t i = 0; i < 4; ++i) {
        CHECK(ds.frames[i].timestamp == Catch::Approx(frames[i].timestamp).margin(1e-6));
        const RgbdFrame frame = load_frame(ds, i);
        // The patterns are on the 8-bit / uint16 lattices, so decode exactly.
        for (size_t k = 0; k < frame.rgb.size(); ++k)
            CHECK(frame.rgb.raw()[k] == Catch::Approx(frames[i].rgb.raw()[k]).margin(1e-12));
        for (size_t k = 0; k < frame.depth.size(); ++k)
            CHECK(frame.depth.raw()[k] == Catch::Approx(frames[i].depth.raw()[k]).margin(1e-12));
    }
}

TEST_CASE("trajectory files round trip to 1e-9", "[dataset]") {
    Scratch tmp("blurslam_ds_traj");
    testsupport::Rng rng(8002);

    std::vector<TimedPose> poses;
    for (int i = 0; i < 25; ++i) poses.push_back({0.05 * i + 3.0, rng.pose(3.0, 4.0)});

    const std::string path = tmp.file("traj.txt");
    save_trajectory_file(path, poses, "estimated trajectory");
    const std::vector<TimedPose> back = load_trajectory_file(path);
    REQUIRE(back.size() == poses.size());
    for (size_t i = 0; i < poses.size(); ++i) {
        CHECK(std::abs(back[i].timestamp - poses[i].timestamp) < 1e-9);
        CHECK((back[i].pose.t - poses[i].pose.t).cwiseAbs().maxCoeff() < 1e-9);
        CHECK((back[i].pose.q.coeffs() - poses[i].pose.q.coeffs()).cwiseAbs().maxCoeff() < 1e-9);
    }

    // Out-of-order lines with comments come back sorted and normalized.
    const std::string messy = tmp.file("messy.txt");
    std::ofstream out(messy);
    out << "# comment line\n"
        << "2.0 1 0 0 0 0 0 2\n"       // non-unit quaternion
        << "\n"
        << "1.0 0 1 0 0 0 0.6 0.8\n";  // already unit
    out.close();
    const std::vector<TimedPose> loaded = load_trajectory_file(messy);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].timestamp == 1.0);
    CHECK(loaded[1].timestamp == 2.0);
    CHECK(loaded[1].pose.q.coeffs().norm() == Catch::Approx(1.0).margin(1e-12));
    CHECK(loaded[1].pose.q.w() == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("association is greedy nearest within tolerance", "[dataset]") {
    const std::vector<std::pair<double, std::string>> rgb = {
        {0.0, "r0"}, {0.10, "r1"}, {0.20, "r2"}, {0.30, "r3"}};
    const std::vector<std::pair<double, std::string>> depth = {
        {0.101, "d0"}, {0.19, "d1"}, {0.301, "d2"}, {5.0, "d3"}};

    const auto pairs = detail::associate_frames(rgb, depth, 0.02);
    REQUIRE(pairs.size() == 3);
    CHECK(pairs[0].rgb_path == "r1");
    CHECK(pairs[0].depth_path == "d0");
    CHECK(pairs[1].rgb_path == "r2");
    CHECK(pairs[1].depth_path == "d1");
    CHECK(pairs[2].rgb_path == "r3");
    CHECK(pairs[2].depth_path == "d2");

    // A depth frame is consumed by the first color frame that claims it.
    const std::vector<std::pair<double, std::string>> rgb2 = {{0.0, "a"}, {0.011, "b"}};
    const std::vector<std::pair<double, std::string>> depth2 = {{0.01, "d"}};
    const auto pairs2 = detail::associate_frames(rgb2, depth2, 0.02);
    REQUIRE(pairs2.size() == 1);
    CHECK(pairs2[0].rgb_path == "a");
}

TEST_CASE("dataset errors are typed and informative", "[dataset]") {
    Scratch tmp("blurslam_ds_errors");
    CHECK_THROWS_AS(load_dataset(tmp.root() + "/missing"), MissingFile);
    CHECK_THROWS_AS(load_dataset(tmp.root()), MissingFile);  // no camera.txt yet

    std::ofstream(tmp.file("camera.txt")) << "30 32 7.5 5.5 16 12 0.0002 0.03\n";
    std::ofstream(tmp.file("rgb.txt")) << "1.0 rgb/a.png\n";
    std::ofstream(tmp.file("depth.txt")) << "9.0 depth/a.png\n";  // too far away
    CHECK_THROWS_AS(load_dataset(tmp.root()), NoAssociations);

    std::ofstream(tmp.file("depth.txt"), std::ios::trunc) << "notatime depth/a.png\n";
    CHECK_THROWS_AS(load_dataset(tmp.root()), MalformedLine);
    std::ofstream(tmp.file("depth.txt"), std::ios::trunc) << "1.0\n";  // filename missing
    CHECK_THROWS_AS(load_dataset(tmp.root()), MalformedLine);

    std::ofstream(tmp.file("camera.txt"), std::ios::trunc) << "30 32 7.5\n";
    CHECK_THROWS_AS(load_camera(tmp.file("camera.txt")), MalformedLine);

    CHECK_THROWS_AS(load_trajectory_file(tmp.file("absent.txt")), MissingFile);
    std::ofstream(tmp.file("traj.txt")) << "1.0 0 0 0 0 0 0 0\n";  // zero quaternion
    CHECK_THROWS_AS(load_trajectory_file(tmp.file("traj.txt")), MalformedLine);
}

TEST_CASE("exposure defaults to half the median frame interval", "[dataset]") {
    Scratch tmp("blurslam_ds_exposure");
    Intrinsics cam = small_camera();
    cam.exposure = 0.0;  // ask the loader to infer

    std::vector<RgbdFrame> frames;
    for (int i = 0; i < 5; ++i) frames.push_back(patterned_frame(cam, 10.0 + 0.1 * i, i));
    write_tum_dataset(tmp.root(), cam, frames);

    const Dataset ds = load_dataset(tmp.root());
    CHECK(ds.intrinsics.exposure == Catch::Approx(0.05).margin(1e-6));
}
