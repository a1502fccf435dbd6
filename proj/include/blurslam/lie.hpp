#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>

#include "blurslam/errors.hpp"

namespace blurslam {

// Quaternions use the Hamilton convention and are stored (x, y, z, w).
// Construction normalizes and canonicalizes to the w >= 0 hemisphere so every
// rotation has a unique representative and log() always takes the short arc.

namespace detail {

inline Eigen::Vector4d hamilton(const Eigen::Vector4d& a, const Eigen::Vector4d& b) {
    return {
        a.w() * b.x() + a.x() * b.w() + a.y() * b.z() - a.z() * b.y(),
        a.w() * b.y() - a.x() * b.z() + a.y() * b.w() + a.z() * b.x(),
        a.w() * b.z() + a.x() * b.y() - a.y() * b.x() + a.z() * b.w(),
        a.w() * b.w() - a.x() * b.x() - a.y() * b.y() - a.z() * b.z(),
    };
}

/// Left-multiplication matrix: hamilton(a, b) == lmat(a) * b.
inline Eigen::Matrix4d lmat(const Eigen::Vector4d& a) {
    Eigen::Matrix4d m;
    // clang-format off
    m <<  a.w(), -a.z(),  a.y(), a.x(),
          a.z(),  a.w(), -a.x(), a.y(),
         -a.y(),  a.x(),  a.w(), a.z(),
         -a.x(), -a.y(), -a.z(), a.w();
    // clang-format on
    return m;
}

/// Right-multiplication matrix: hamilton(a, b) == rmat(b) * a.
inline Eigen::Matrix4d rmat(const Eigen::Vector4d& b) {
    Eigen::Matrix4d m;
    // clang-format off
    m <<  b.w(),  b.z(), -b.y(), b.x(),
         -b.z(),  b.w(),  b.x(), b.y(),
          b.y(), -b.x(),  b.w(), b.z(),
         -b.x(), -b.y(), -b.z(), b.w();
    // clang-format on
    return m;
}

/// d(conjugate)/d(quaternion) in (x, y, z, w) coordinates.
inline Eigen::Matrix4d conj_jacobian() {
    return Eigen::Vector4d(-1.0, -1.0, -1.0, 1.0).asDiagonal();
}

}  // namespace detail

class UnitQuaternion {
public:
    /// Identity rotation.
    UnitQuaternion() : v_(0.0, 0.0, 0.0, 1.0) {}

    /// Normalizes and flips to the w >= 0 hemisphere.
    UnitQuaternion(double x, double y, double z, double w) : v_(x, y, z, w) {
        const double n = v_.norm();
        if (!(n > 0.0) || !std::isfinite(n)) throw DomainError("cannot normalize zero/non-finite quaternion");
        v_ /= n;
        if (v_.w() < 0.0) v_ = -v_;
    }

    explicit UnitQuaternion(const Eigen::Vector4d& xyzw)
        : UnitQuaternion(xyzw.x(), xyzw.y(), xyzw.z(), xyzw.w()) {}

    double x() const { return v_.x(); }
    double y() const { return v_.y(); }
    double z() const { return v_.z(); }
    double w() const { return v_.w(); }

    /// Components as (x, y, z, w).
    const Eigen::Vector4d& coeffs() const { return v_; }

    /// Imaginary part.
    Eigen::Vector3d vec() const { return v_.head<3>(); }

    UnitQuaternion conjugate() const { return UnitQuaternion(-v_.x(), -v_.y(), -v_.z(), v_.w()); }
    UnitQuaternion inverse() const { return conjugate(); }

    Eigen::Matrix3d matrix() const {
        return Eigen::Quaterniond(v_.w(), v_.x(), v_.y(), v_.z()).toRotationMatrix();
    }

    Eigen::Vector3d rotate(const Eigen::Vector3d& p) const { return matrix() * p; }

    /// Rotation angle in [0, pi].
    double angle() const { return 2.0 * std::atan2(v_.head<3>().norm(), v_.w()); }

private:
    Eigen::Vector4d v_;
};

/// Hamilton product (canonicalized).
inline UnitQuaternion quat_mul(const UnitQuaternion& a, const UnitQuaternion& b) {
    return UnitQuaternion(detail::hamilton(a.coeffs(), b.coeffs()));
}

/// Exponential map from a rotation vector (axis * angle) to a quaternion.
/// Switches to a 2nd-order series below 1e-6 rad.
inline UnitQuaternion quat_exp(const Eigen::Vector3d& r) {
    const double theta = r.norm();
    double a, w;
    if (theta < 1e-6) {
        const double t2 = theta * theta;
        a = 0.5 - t2 / 48.0;
        w = 1.0 - t2 / 8.0;
    } else {
        a = std::sin(0.5 * theta) / theta;
        w = std::cos(0.5 * theta);
    }
    return UnitQuaternion(a * r.x(), a * r.y(), a * r.z(), w);
}

/// Principal-branch logarithm: returns the rotation vector with norm <= pi.
inline Eigen::Vector3d quat_log(const UnitQuaternion& q) {
    const Eigen::Vector3d v = q.vec();
    const double s = v.norm();
    const double w = q.w();  // >= 0 by canonicalization
    double k;
    if (s < 1e-6) {
        k = 2.0 / w - 2.0 * s * s / (3.0 * w * w * w);
    } else {
        k = 2.0 * std::atan2(s, w) / s;
    }
    return k * v;
}

/// Right-multiplicative local update q * exp(delta_r).
inline UnitQuaternion quat_boxplus(const UnitQuaternion& q, const Eigen::Vector3d& delta_r) {
    return quat_mul(q, quat_exp(delta_r));
}

/// Geodesic angle between two rotations, in [0, pi].
inline double quat_angular_distance(const UnitQuaternion& a, const UnitQuaternion& b) {
    return quat_mul(a.inverse(), b).angle();
}

namespace detail {

/// d(quat_exp)/d(r), 4x3, rows ordered (x, y, z, w).
inline Eigen::Matrix<double, 4, 3> exp_jacobian(const Eigen::Vector3d& r) {
    const double theta = r.norm();
    double a, g;  // vec = a * r; g = (da/dtheta)/theta
    if (theta < 1e-4) {
        const double t2 = theta * theta;
        a = 0.5 - t2 / 48.0;
        g = -1.0 / 24.0 + t2 / 960.0;
    } else {
        const double h = 0.5 * theta;
        a = std::sin(h) / theta;
        g = (0.5 * std::cos(h) / theta - std::sin(h) / (theta * theta)) / theta;
    }
    Eigen::Matrix<double, 4, 3> J;
    J.topRows<3>() = a * Eigen::Matrix3d::Identity() + g * (r * r.transpose());
    J.row(3) = -0.5 * a * r.transpose();
    return J;
}

/// d(quat_log)/d(q), 3x4, columns ordered (x, y, z, w). Valid for w > 0.
inline Eigen::Matrix<double, 3, 4> log_jacobian(const UnitQuaternion& q) {
    const Eigen::Vector3d v = q.vec();
    const double s = v.norm();
    const double w = q.w();
    double k, m;  // r = k * v; m = dk/ds / s
    if (s < 1e-3) {
        const double w3 = w * w * w;
        k = 2.0 / w - 2.0 * s * s / (3.0 * w3);
        m = -2.0 / w + 2.0 / (3.0 * w3);
    } else {
        k = 2.0 * std::atan2(s, w) / s;
        m = (2.0 * w - k) / (s * s);
    }
    Eigen::Matrix<double, 3, 4> J;
    J.leftCols<3>() = k * Eigen::Matrix3d::Identity() + m * (v * v.transpose());
    J.col(3) = -2.0 * v;
    return J;
}

/// d(q * exp(delta))/d(delta) at delta = 0: lmat(q) * [0.5*I; 0].
inline Eigen::Matrix<double, 4, 3> boxplus_jacobian(const UnitQuaternion& q) {
    return lmat(q.coeffs()) * exp_jacobian(Eigen::Vector3d::Zero());
}

}  // namespace detail

/// Rigid transform: p_out = R(q) * p + t.
struct PoseSE3 {
    UnitQuaternion q;
    Eigen::Vector3d t{0.0, 0.0, 0.0};

    PoseSE3() = default;
    PoseSE3(const UnitQuaternion& q_in, const Eigen::Vector3d& t_in) : q(q_in), t(t_in) {}

    Eigen::Vector3d act(const Eigen::Vector3d& p) const { return q.rotate(p) + t; }

    PoseSE3 compose(const PoseSE3& other) const {
        return {quat_mul(q, other.q), q.rotate(other.t) + t};
    }

    PoseSE3 inverse() const {
        const UnitQuaternion qi = q.inverse();
        return {qi, -qi.rotate(t)};
    }

    static PoseSE3 identity() { return {}; }
};

/// Fractional power of a rigid motion under the decomposed model (geodesic
/// rotation, linear translation); used for constant-velocity extrapolation.
inline PoseSE3 pose_power(const PoseSE3& T, double s) {
    return {quat_exp(s * quat_log(T.q)), s * T.t};
}

/// Camera motion across one exposure window [0, exposure], parameterized by
/// its start and end poses. Intermediate poses follow the decomposed
/// interpolation: shortest-arc geodesic on rotations, linear on translations.
struct ExposureTrajectory {
    PoseSE3 start;
    PoseSE3 end;
    double exposure = 1.0;

    static ExposureTrajectory static_at(const PoseSE3& pose, double exposure) {
        return {pose, pose, exposure};
    }
};

namespace detail {

/// Complementary interpolation weights that sum to 1.0 exactly.
inline void interp_weights(double t, double exposure, double& w_start, double& w_end) {
    w_end = t / exposure;
    w_start = 1.0 - w_end;
    if (w_end < 0.5) w_end = 1.0 - w_start;  // Sterbenz: makes the pair complementary
}

inline void check_interp_domain(const ExposureTrajectory& traj, double t) {
    if (!(traj.exposure > 0.0)) throw DomainError("exposure must be positive");
    const double slack = 1e-12 * traj.exposure;
    if (t < -slack || t > traj.exposure + slack)
        throw DomainError("interpolation time outside [0, exposure]");
}

}  // namespace detail

/// Pose at time t in [0, exposure]:
///   q(t) = q_start * exp((t/exposure) * log(q_start^-1 * q_end))
///   t(t) = (1 - t/exposure) * t_start + (t/exposure) * t_end
inline PoseSE3 interpolate_pose(const ExposureTrajectory& traj, double t) {
    detail::check_interp_domain(traj, t);
    double ws, we;
    detail::interp_weights(t, traj.exposure, ws, we);
    const UnitQuaternion q_rel = quat_mul(traj.start.q.inverse(), traj.end.q);
    const UnitQuaternion q = quat_mul(traj.start.q, quat_exp(we * quat_log(q_rel)));
    return {q, ws * traj.start.t + we * traj.end.t};
}

/// Derivatives of the interpolated pose with respect to local perturbations of
/// the trajectory endpoints. Rotation blocks differentiate the interpolated
/// quaternion (x, y, z, w) against right-multiplicative tangent updates
/// q_endpoint * exp(delta_r); translation blocks are the interpolation weights
/// times identity and sum to the identity exactly.
struct InterpJacobians {
    PoseSE3 pose;
    Eigen::Matrix<double, 4, 3> dq_dr_start;
    Eigen::Matrix<double, 4, 3> dq_dr_end;
    Eigen::Matrix3d dt_dtstart;
    Eigen::Matrix3d dt_dtend;
};

inline InterpJacobians interp_jacobians(const ExposureTrajectory& traj, double t) {
    detail::check_interp_domain(traj, t);
    double ws, we;
    detail::interp_weights(t, traj.exposure, ws, we);

    const Eigen::Vector4d qs = traj.start.q.coeffs();
    const Eigen::Vector4d qe = traj.end.q.coeffs();

    const Eigen::Vector4d q_rel_raw = detail::hamilton(traj.start.q.inverse().coeffs(), qe);
    const UnitQuaternion q_rel(q_rel_raw);
    const double sign_rel = (q_rel_raw.dot(q_rel.coeffs()) < 0.0) ? -1.0 : 1.0;

    const Eigen::Vector3d r = we * quat_log(q_rel);
    const Eigen::Vector4d q_i = quat_exp(r).coeffs();  // w >= 0, never flips
    const Eigen::Vector4d q_raw = detail::hamilton(qs, q_i);
    const UnitQuaternion q_out(q_raw);
    const double sign_out = (q_raw.dot(q_out.coeffs()) < 0.0) ? -1.0 : 1.0;

    const Eigen::Matrix<double, 4, 3> B_s = detail::boxplus_jacobian(traj.start.q);
    const Eigen::Matrix<double, 4, 3> B_e = detail::boxplus_jacobian(traj.end.q);
    const Eigen::Matrix<double, 3, 4> Jlog = (we * sign_rel) * detail::log_jacobian(q_rel);
    const Eigen::Matrix<double, 4, 3> Jexp = detail::exp_jacobian(r);
    const Eigen::Matrix4d Ls = detail::lmat(qs);

    // q_rel = conj(q_start) * q_end
    const Eigen::Matrix<double, 4, 3> drel_ds =
        detail::rmat(qe) * detail::conj_jacobian() * B_s;
    const Eigen::Matrix<double, 4, 3> drel_de =
        detail::lmat(traj.start.q.inverse().coeffs()) * B_e;

    InterpJacobians out;
    out.pose = {q_out, ws * traj.start.t + we * traj.end.t};
    out.dq_dr_start = sign_out * (detail::rmat(q_i) * B_s + Ls * Jexp * Jlog * drel_ds);
    out.dq_dr_end = sign_out * (Ls * Jexp * Jlog * drel_de);
    out.dt_dtstart = ws * Eigen::Matrix3d::Identity();
    out.dt_dtend = we * Eigen::Matrix3d::Identity();
    return out;
}

}  // namespace blurslam
