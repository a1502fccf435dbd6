#include <blurslam/blur.hpp>
#include <blurslam/camera.hpp>
#include <blurslam/image.hpp>

#include <catch2/catch_amalgamated.hpp>

#include "support/random_gen.hpp"

using namespace blurslam;
using testsupport::Rng;

namespace {
ImageBuffer random_image(Rng& rng, int w, int h, int c) {
    ImageBuffer img(w, h, c);
    for (double& v : img.raw()) v = rng.uniform(0.0, 1.0);
    return img;
}
}  // namespace

TEST_CASE("bilinear sampling reproduces integer-grid values", "[image]") {
    Rng rng(101);
    const ImageBuffer img = random_image(rng, 9, 7, 2);
    for (int y = 0; y < 7; ++y)
        for (int x = 0; x < 9; ++x)
            for (int c = 0; c < 2; ++c)
                if (img.bilinear_valid(x, y))
                    CHECK(img.sample_bilinear(x, y, c) == Catch::Approx(img.at(x, y, c)));
}

TEST_CASE("bilinear sampling is linear between neighbors", "[image]") {
    Rng rng(103);
    const ImageBuffer img = random_image(rng, 8, 8, 1);
    CHECK(img.sample_bilinear(2.5, 3.0) ==
          Catch::Approx(0.5 * (img.at(2, 3) + img.at(3, 3))));
    CHECK(img.sample_bilinear(2.0, 3.5) ==
          Catch::Approx(0.5 * (img.at(2, 3) + img.at(2, 4))));
}

TEST_CASE("bilinear gradient matches finite differences", "[image][oracle]") {
    Rng rng(107);
    const ImageBuffer img = random_image(rng, 16, 16, 1);
    for (int i = 0; i < 200; ++i) {
        // Stay away from integer lines where bilinear interpolation kinks.
        const double u = rng.uniform(1.0, 13.0) + rng.uniform(0.1, 0.9);
        const double v = rng.uniform(1.0, 13.0) + rng.uniform(0.1, 0.9);
        double val, gu, gv;
        img.sample_bilinear_grad(u, v, 0, val, gu, gv);
        const double h = 1e-7;
        const double fgu = (img.sample_bilinear(u + h, v) - img.sample_bilinear(u - h, v)) / (2 * h);
        const double fgv = (img.sample_bilinear(u, v + h) - img.sample_bilinear(u, v - h)) / (2 * h);
        CHECK(val == Catch::Approx(img.sample_bilinear(u, v)));
        CHECK(gu == Catch::Approx(fgu).margin(1e-6));
        CHECK(gv == Catch::Approx(fgv).margin(1e-6));
    }
}

TEST_CASE("downsample halves dimensions and preserves constants", "[image]") {
    ImageBuffer img(9, 6, 1, 0.37);
    const ImageBuffer half = downsample_half(img);
    CHECK(half.width() == 5);
    CHECK(half.height() == 3);
    for (int y = 0; y < half.height(); ++y)
        for (int x = 0; x < half.width(); ++x)
            CHECK(half.at(x, y) == Catch::Approx(0.37).epsilon(1e-12));
}

TEST_CASE("downsample preserves linear ramps away from borders", "[image]") {
    ImageBuffer img(17, 17, 1);
    for (int y = 0; y < 17; ++y)
        for (int x = 0; x < 17; ++x) img.at(x, y) = 0.05 * x + 0.02 * y;
    const ImageBuffer half = downsample_half(img);
    for (int y = 2; y < half.height() - 2; ++y)
        for (int x = 2; x < half.width() - 2; ++x)
            CHECK(half.at(x, y) == Catch::Approx(0.05 * 2 * x + 0.02 * 2 * y).epsilon(1e-12));
}

TEST_CASE("pyramid level sizes and intrinsics scaling agree", "[image]") {
    Rng rng(109);
    const ImageBuffer img = random_image(rng, 128, 96, 1);
    const auto pyr = build_pyramid(img, 3);
    REQUIRE(pyr.size() == 3);
    CHECK(pyr[1].width() == 64);
    CHECK(pyr[2].width() == 32);
    CHECK(pyr[2].height() == 24);

    Intrinsics cam;
    cam.fx = 100.0;
    cam.fy = 110.0;
    cam.cx = 63.5;
    cam.cy = 47.5;
    cam.width = 128;
    cam.height = 96;
    const Intrinsics l2 = cam.level(2);
    CHECK(l2.fx == Catch::Approx(25.0));
    CHECK(l2.width == 32);
    // A fixed 3D point projects to coordinates divided by 4 at level 2.
    const Eigen::Vector3d p(0.3, -0.2, 2.0);
    CHECK(l2.project(p).x() == Catch::Approx(cam.project(p).x() / 4.0));
    CHECK(l2.project(p).y() == Catch::Approx(cam.project(p).y() / 4.0));
}

TEST_CASE("projection round trip and jacobian", "[image][oracle]") {
    Intrinsics cam;
    cam.fx = 100.0;
    cam.fy = 100.0;
    cam.cx = 63.5;
    cam.cy = 63.5;
    cam.width = 128;
    cam.height = 128;
    Rng rng(113);
    for (int i = 0; i < 100; ++i) {
        const Eigen::Vector2d px(rng.uniform(0.0, 127.0), rng.uniform(0.0, 127.0));
        const double d = rng.uniform(0.5, 5.0);
        const Eigen::Vector3d p = cam.backproject(px, d);
        CHECK(p.z() == d);
        CHECK((cam.project(p) - px).norm() < 1e-10);

        const Eigen::Matrix<double, 2, 3> J = cam.project_jacobian(p);
        const double h = 1e-6;
        for (int k = 0; k < 3; ++k) {
            Eigen::Vector3d pp = p, pm = p;
            pp[k] += h;
            pm[k] -= h;
            const Eigen::Vector2d fd = (cam.project(pp) - cam.project(pm)) / (2 * h);
            CHECK((J.col(k) - fd).norm() < 1e-5);
        }
    }
}

TEST_CASE("gray conversion uses BT.601 weights", "[image]") {
    ImageBuffer img(2, 1, 3);
    img.at(0, 0, 0) = 1.0;  // pure red
    img.at(1, 0, 1) = 1.0;  // pure green
    const ImageBuffer g = to_gray(img);
    CHECK(g.at(0, 0) == Catch::Approx(0.299));
    CHECK(g.at(1, 0) == Catch::Approx(0.587));
}

TEST_CASE("virtual timestamps cover the exposure uniformly", "[blur]") {
    CHECK(virtual_timestamps(1, 0.08) == std::vector<double>{0.04});
    const auto t2 = virtual_timestamps(2, 0.08);
    CHECK(t2.front() == 0.0);
    CHECK(t2.back() == 0.08);
    const auto t5 = virtual_timestamps(5, 0.1);
    REQUIRE(t5.size() == 5);
    for (int i = 0; i < 5; ++i) CHECK(t5[i] == Catch::Approx(0.025 * i).margin(1e-15));
    CHECK_THROWS_AS(virtual_timestamps(0, 0.1), DomainError);
    CHECK_THROWS_AS(virtual_timestamps(3, 0.0), DomainError);
}

TEST_CASE("blur average of identical images is the image", "[blur]") {
    Rng rng(127);
    const ImageBuffer img = random_image(rng, 12, 9, 3);
    const ImageBuffer blurred = blur_average({img, img, img, img, img});
    CHECK(mean_abs_diff(blurred, img) < 1e-14);
}

TEST_CASE("blur average of shifted impulses forms a uniform streak", "[blur][oracle]") {
    const int n = 8;
    std::vector<ImageBuffer> frames;
    for (int i = 0; i < n; ++i) {
        ImageBuffer f(n, 1, 1);
        f.at(i, 0) = 1.0;
        frames.push_back(f);
    }
    const ImageBuffer blurred = blur_average(frames);
    for (int x = 0; x < n; ++x) CHECK(blurred.at(x, 0) == Catch::Approx(1.0 / n));
}
