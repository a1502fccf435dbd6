#include <blurslam/lie.hpp>

#include <catch2/catch_amalgamated.hpp>

#include "support/finite_diff.hpp"
#include "support/random_gen.hpp"

using namespace blurslam;
using testsupport::central_diff;
using testsupport::rel_error;
using testsupport::Rng;

namespace {
constexpr double kPi = 3.14159265358979323846;
}

TEST_CASE("quaternion construction normalizes and canonicalizes", "[lie]") {
    const UnitQuaternion q(0.0, 0.0, 0.0, 2.0);
    CHECK(q.w() == Catch::Approx(1.0));
    CHECK(q.coeffs().norm() == Catch::Approx(1.0));

    const UnitQuaternion flipped(0.1, -0.2, 0.3, -0.5);
    CHECK(flipped.w() > 0.0);
    CHECK(flipped.x() < 0.0);  // sign of the whole vector flipped together

    CHECK_THROWS_AS(UnitQuaternion(0.0, 0.0, 0.0, 0.0), DomainError);
}

TEST_CASE("quaternion rotation fixed cases", "[lie]") {
    const UnitQuaternion id;
    const Eigen::Vector3d p(0.3, -0.7, 1.1);
    CHECK((id.rotate(p) - p).norm() < 1e-15);

    // 90 degrees about z maps x-hat to y-hat.
    const UnitQuaternion qz = quat_exp(Eigen::Vector3d(0.0, 0.0, kPi / 2.0));
    const Eigen::Vector3d rx = qz.rotate(Eigen::Vector3d::UnitX());
    CHECK((rx - Eigen::Vector3d::UnitY()).norm() < 1e-14);

    // Matrix form agrees with direct rotation.
    const UnitQuaternion q(0.1, 0.2, -0.3, 0.9);
    CHECK((q.matrix() * p - q.rotate(p)).norm() < 1e-14);

    // Composition order: (a*b).rotate == a.rotate(b.rotate).
    const UnitQuaternion a = quat_exp(Eigen::Vector3d(0.4, -0.1, 0.2));
    const UnitQuaternion b = quat_exp(Eigen::Vector3d(-0.2, 0.3, 0.5));
    CHECK((quat_mul(a, b).rotate(p) - a.rotate(b.rotate(p))).norm() < 1e-14);
}

TEST_CASE("exp and log fixed values", "[lie]") {
    CHECK(quat_exp(Eigen::Vector3d::Zero()).w() == 1.0);
    CHECK(quat_log(UnitQuaternion()).norm() == 0.0);

    const UnitQuaternion qz = quat_exp(Eigen::Vector3d(0.0, 0.0, kPi / 2.0));
    CHECK(qz.w() == Catch::Approx(std::cos(kPi / 4.0)));
    CHECK(qz.z() == Catch::Approx(std::sin(kPi / 4.0)));

    // 180-degree rotation about x: log has norm pi.
    const UnitQuaternion half_turn(1.0, 0.0, 0.0, 0.0);
    const Eigen::Vector3d r = quat_log(half_turn);
    CHECK(r.norm() == Catch::Approx(kPi));
    CHECK(r.x() == Catch::Approx(kPi));

    // Principal branch: norm of log never exceeds pi.
    const Eigen::Vector3d big(0.0, 0.0, 1.9 * kPi);
    CHECK(quat_log(quat_exp(big)).norm() <= kPi + 1e-12);
}

TEST_CASE("exp/log series branch is continuous at the threshold", "[lie]") {
    for (const double theta : {0.999e-6, 1.001e-6}) {
        const Eigen::Vector3d r = theta * Eigen::Vector3d(1.0, 2.0, 2.0).normalized();
        const Eigen::Vector3d back = quat_log(quat_exp(r));
        CHECK((back - r).norm() < 1e-18);
    }
}

TEST_CASE("exp/log round trip over random rotation vectors", "[lie][oracle]") {
    Rng rng(42);
    for (int i = 0; i < 1000; ++i) {
        const Eigen::Vector3d r = rng.rotvec(kPi - 0.1);
        const Eigen::Vector3d back = quat_log(quat_exp(r));
        REQUIRE((back - r).norm() < 1e-10);
    }
}

TEST_CASE("pose compose, inverse, act", "[lie]") {
    Rng rng(7);
    for (int i = 0; i < 50; ++i) {
        const PoseSE3 a = rng.pose(2.5, 1.0);
        const PoseSE3 b = rng.pose(2.5, 1.0);
        const Eigen::Vector3d p = rng.vec3(-2.0, 2.0);
        CHECK((a.compose(b).act(p) - a.act(b.act(p))).norm() < 1e-12);
        CHECK((a.compose(a.inverse()).act(p) - p).norm() < 1e-12);
        CHECK((a.inverse().compose(a).t).norm() < 1e-12);
    }
}

TEST_CASE("interpolation hits the endpoints exactly", "[lie]") {
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
        const ExposureTrajectory traj = rng.trajectory(2.0, 0.5, 1.0, rng.uniform(0.01, 0.5));
        const PoseSE3 p0 = interpolate_pose(traj, 0.0);
        const PoseSE3 p1 = interpolate_pose(traj, traj.exposure);
        REQUIRE((p0.q.coeffs() - traj.start.q.coeffs()).norm() < 1e-12);
        REQUIRE((p0.t - traj.start.t).norm() < 1e-12);
        REQUIRE((p1.q.coeffs() - traj.end.q.coeffs()).norm() < 1e-12);
        REQUIRE((p1.t - traj.end.t).norm() < 1e-12);
    }
}

TEST_CASE("interpolation midpoint matches analytic slerp", "[lie]") {
    ExposureTrajectory traj;
    traj.start = PoseSE3::identity();
    traj.end = {quat_exp(Eigen::Vector3d(0.0, 0.0, kPi / 2.0)), Eigen::Vector3d(1.0, 0.0, -2.0)};
    traj.exposure = 0.08;
    const PoseSE3 mid = interpolate_pose(traj, 0.04);
    CHECK(mid.q.z() == Catch::Approx(std::sin(kPi / 8.0)).epsilon(1e-12));
    CHECK(mid.q.w() == Catch::Approx(std::cos(kPi / 8.0)).epsilon(1e-12));
    CHECK((mid.t - Eigen::Vector3d(0.5, 0.0, -1.0)).norm() < 1e-12);
}

TEST_CASE("interpolation is invariant to time reparameterization", "[lie]") {
    Rng rng(11);
    for (int i = 0; i < 50; ++i) {
        ExposureTrajectory traj = rng.trajectory(2.0, 0.5, 1.0, 0.1);
        ExposureTrajectory scaled = traj;
        const double c = rng.uniform(0.2, 5.0);
        scaled.exposure = traj.exposure * c;
        const double t = rng.uniform(0.0, traj.exposure);
        const PoseSE3 p = interpolate_pose(traj, t);
        const PoseSE3 ps = interpolate_pose(scaled, t * c);
        CHECK(quat_angular_distance(p.q, ps.q) < 1e-12);
        CHECK((p.t - ps.t).norm() < 1e-12);
    }
}

TEST_CASE("interpolation of a reversed trajectory mirrors in time", "[lie]") {
    Rng rng(13);
    for (int i = 0; i < 50; ++i) {
        const ExposureTrajectory traj = rng.trajectory(2.0, 0.5, 1.0, 0.1);
        ExposureTrajectory rev;
        rev.start = traj.end;
        rev.end = traj.start;
        rev.exposure = traj.exposure;
        const double t = rng.uniform(0.0, traj.exposure);
        const PoseSE3 a = interpolate_pose(traj, t);
        const PoseSE3 b = interpolate_pose(rev, traj.exposure - t);
        CHECK(quat_angular_distance(a.q, b.q) < 1e-9);
        CHECK((a.t - b.t).norm() < 1e-9);
    }
}

TEST_CASE("static trajectory interpolates to a constant pose", "[lie]") {
    Rng rng(17);
    const PoseSE3 pose = rng.pose(2.0, 1.0);
    const ExposureTrajectory traj = ExposureTrajectory::static_at(pose, 0.05);
    for (const double f : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        const PoseSE3 p = interpolate_pose(traj, f * traj.exposure);
        CHECK(quat_angular_distance(p.q, pose.q) < 1e-13);
        CHECK((p.t - pose.t).norm() < 1e-13);
    }
}

TEST_CASE("interpolation rejects times outside the exposure window", "[lie]") {
    const ExposureTrajectory traj = ExposureTrajectory::static_at(PoseSE3::identity(), 0.05);
    CHECK_THROWS_AS(interpolate_pose(traj, -0.01), DomainError);
    CHECK_THROWS_AS(interpolate_pose(traj, 0.06), DomainError);
    ExposureTrajectory bad = traj;
    bad.exposure = 0.0;
    CHECK_THROWS_AS(interpolate_pose(bad, 0.0), DomainError);
}

TEST_CASE("boxplus jacobian matches finite differences", "[lie][oracle]") {
    Rng rng(23);
    for (int i = 0; i < 100; ++i) {
        const UnitQuaternion q = rng.quat(2.5);
        const auto f = [&](const Eigen::VectorXd& d) -> Eigen::VectorXd {
            return quat_boxplus(q, d.head<3>()).coeffs();
        };
        const Eigen::MatrixXd fd = central_diff(f, Eigen::VectorXd::Zero(3), 1e-6);
        const Eigen::MatrixXd an = detail::boxplus_jacobian(q);
        REQUIRE(rel_error(an, fd) < 1e-7);
    }
}

TEST_CASE("interpolation jacobians match finite differences", "[lie][oracle]") {
    Rng rng(29);
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
        const ExposureTrajectory traj = rng.trajectory(2.0, 0.5, 1.0, rng.uniform(0.02, 0.2));
        const double t = rng.uniform(0.0, traj.exposure);
        const InterpJacobians J = interp_jacobians(traj, t);

        // Same pose as the plain interpolation entry point.
        const PoseSE3 direct = interpolate_pose(traj, t);
        REQUIRE((J.pose.q.coeffs() - direct.q.coeffs()).norm() < 1e-14);
        REQUIRE((J.pose.t - direct.t).norm() < 1e-14);

        const auto f_rot = [&](const Eigen::VectorXd& d) -> Eigen::VectorXd {
            ExposureTrajectory pert = traj;
            pert.start.q = quat_boxplus(traj.start.q, d.head<3>());
            pert.end.q = quat_boxplus(traj.end.q, d.tail<3>());
            return interpolate_pose(pert, t).q.coeffs();
        };
        const Eigen::MatrixXd fd_rot = central_diff(f_rot, Eigen::VectorXd::Zero(6), 1e-6);
        Eigen::MatrixXd an_rot(4, 6);
        an_rot << J.dq_dr_start, J.dq_dr_end;
        const double err = rel_error(an_rot, fd_rot);
        worst = std::max(worst, err);
        REQUIRE(err < 5e-6);

        const auto f_tr = [&](const Eigen::VectorXd& d) -> Eigen::VectorXd {
            ExposureTrajectory pert = traj;
            pert.start.t += d.head<3>();
            pert.end.t += d.tail<3>();
            return interpolate_pose(pert, t).t;
        };
        const Eigen::MatrixXd fd_tr = central_diff(f_tr, Eigen::VectorXd::Zero(6), 1e-6);
        Eigen::MatrixXd an_tr(3, 6);
        an_tr << J.dt_dtstart, J.dt_dtend;
        REQUIRE(rel_error(an_tr, fd_tr) < 5e-6);

        // Translation weights are complementary to the last bit.
        const Eigen::Matrix3d sum = J.dt_dtstart + J.dt_dtend;
        REQUIRE((sum - Eigen::Matrix3d::Identity()).norm() == 0.0);
    }
    INFO("worst rotation-block relative error " << worst);
}

TEST_CASE("interpolation jacobian at t=0 reduces to the boxplus jacobian", "[lie]") {
    Rng rng(31);
    const ExposureTrajectory traj = rng.trajectory(2.0, 0.5, 1.0, 0.1);
    const InterpJacobians J = interp_jacobians(traj, 0.0);
    CHECK(rel_error(J.dq_dr_start, detail::boxplus_jacobian(traj.start.q)) < 1e-12);
    CHECK(J.dq_dr_end.norm() < 1e-12);
    CHECK((J.dt_dtstart - Eigen::Matrix3d::Identity()).norm() == 0.0);
}
