#pragma once

#include <Eigen/Core>

#include "blurslam/camera.hpp"
#include "blurslam/lie.hpp"

namespace blurslam {

// Pixel transfer between a source view and a reference (target) view through
// a fronto-parallel plane defined in the reference frame at depth d:
//
//   1. cast the unit ray v through source pixel x,
//   2. rotate into the reference frame: gamma = R v, with lambda = gamma_z the
//      cosine between the ray and the plane normal,
//   3. intersect: |L| = (d - p_z) / lambda, p_src = |L| v,
//   4. map to the reference frame (z lands on d exactly) and project.
//
// The pose (q, p) maps source-camera points into the reference frame.

enum class TransferStatus {
    Ok,
    DegenerateRay,  // ray (near) parallel to the plane
    BehindCamera,   // intersection behind the source camera or plane depth <= 0
};

struct TransferResult {
    Eigen::Vector2d pixel{0.0, 0.0};
    TransferStatus status = TransferStatus::Ok;
    Eigen::Vector3d point_ref{0.0, 0.0, 0.0};  // 3D intersection in the reference frame
};

/// Jacobian of the transferred pixel with respect to the raw pose parameters
/// ordered (q_x, q_y, q_z, q_w, p_x, p_y, p_z). Rotation columns differentiate
/// the quadratic form of the rotation matrix in the ambient R^4, matching a
/// chain rule through interpolated-quaternion Jacobians in the same ambient
/// coordinates.
struct TransferJacobian {
    TransferResult result;
    Eigen::Matrix<double, 2, 7> J = Eigen::Matrix<double, 2, 7>::Zero();
};

namespace detail {

/// Rotation matrix as the symmetric quadratic form in (x, y, z, w); agrees
/// with UnitQuaternion::matrix() on unit quaternions but stays polynomial for
/// off-manifold inputs, which is what the raw-parameter Jacobian differentiates.
inline Eigen::Matrix3d quad_form_rotation(const Eigen::Vector4d& q) {
    const double x = q[0], y = q[1], z = q[2], w = q[3];
    Eigen::Matrix3d R;
    // clang-format off
    R << w * w + x * x - y * y - z * z, 2.0 * (x * y - w * z),         2.0 * (x * z + w * y),
         2.0 * (x * y + w * z),         w * w - x * x + y * y - z * z, 2.0 * (y * z - w * x),
         2.0 * (x * z - w * y),         2.0 * (y * z + w * x),         w * w - x * x - y * y + z * z;
    // clang-format on
    return R;
}

}  // namespace detail

/// Ray-level transfer: v_unit is the unit ray through the source pixel and R
/// the (already materialized) rotation of the source-to-reference pose.
inline TransferResult transfer_ray(const Eigen::Vector3d& v_unit, double plane_depth,
                                   const Eigen::Matrix3d& R, const Eigen::Vector3d& p,
                                   const Intrinsics& cam) {
    constexpr double kEps = 1e-9;
    TransferResult out;
    const Eigen::Vector3d gamma = R * v_unit;
    const double lambda = gamma.z();
    if (std::abs(lambda) < kEps) {
        out.status = TransferStatus::DegenerateRay;
        return out;
    }
    const double len = (plane_depth - p.z()) / lambda;
    if (len <= kEps || plane_depth <= kEps) {
        out.status = TransferStatus::BehindCamera;
        return out;
    }
    out.point_ref = len * gamma + p;
    out.pixel = cam.project(out.point_ref);
    return out;
}

/// Ray-level transfer plus the closed-form 2x7 Jacobian. All rotation blocks
/// follow d(gamma)/dq_k = 2 a_k with the plane-constraint correction
/// -(gamma / lambda) * d(lambda)/dq_k, where d(lambda)/dq_k is the z component
/// of d(gamma)/dq_k.
inline TransferJacobian transfer_ray_jacobian(const Eigen::Vector3d& v_unit, double plane_depth,
                                              const Eigen::Vector4d& q, const Eigen::Matrix3d& R,
                                              const Eigen::Vector3d& p, const Intrinsics& cam) {
    TransferJacobian out;
    out.result = transfer_ray(v_unit, plane_depth, R, p, cam);
    if (out.result.status != TransferStatus::Ok) return out;

    const double qx = q[0], qy = q[1], qz = q[2], qw = q[3];
    const double vx = v_unit.x(), vy = v_unit.y(), vz = v_unit.z();

    const double a0 = qx * vx + qy * vy + qz * vz;
    const double a1 = qy * vx - qw * vz - qx * vy;
    const double a2 = qw * vy - qx * vz + qz * vx;
    const double a3 = qw * vx + qy * vz - qz * vy;
    const double a4 = qw * vz + qx * vy - qy * vx;

    const Eigen::Vector3d gamma = R * v_unit;
    const double lambda = gamma.z();
    const double len = (plane_depth - p.z()) / lambda;

    // d(gamma)/dq_k = 2 * a_col; d(lambda)/dq_k = 2 * s_k (its z component).
    const Eigen::Vector3d acol[4] = {
        {a0, a1, a2},   // q_x
        {a4, a0, -a3},  // q_y
        {-a2, a3, a0},  // q_z
        {a3, a2, a4},   // q_w
    };
    const double s[4] = {a2, -a3, a0, a4};

    Eigen::Matrix<double, 3, 7> dP;  // d(point_ref)/d(q, p)
    for (int k = 0; k < 4; ++k)
        dP.col(k) = 2.0 * len * (acol[k] - (s[k] / lambda) * gamma);
    dP.col(4) = Eigen::Vector3d::UnitX();
    dP.col(5) = Eigen::Vector3d::UnitY();
    dP.col(6) = Eigen::Vector3d(-gamma.x() / lambda, -gamma.y() / lambda, 0.0);

    out.J = cam.project_jacobian(out.result.point_ref) * dP;
    return out;
}

/// Raw-parameter transfer used by the Jacobian path and its finite-difference
/// oracle: q is taken as-is (no normalization).
inline TransferResult transfer_point_raw(const Eigen::Vector2d& x, double plane_depth,
                                         const Eigen::Vector4d& q, const Eigen::Vector3d& p,
                                         const Intrinsics& cam) {
    return transfer_ray(cam.ray(x).normalized(), plane_depth, detail::quad_form_rotation(q), p,
                        cam);
}

inline TransferResult transfer_point(const Eigen::Vector2d& x, double plane_depth,
                                     const PoseSE3& T_ref_src, const Intrinsics& cam) {
    return transfer_point_raw(x, plane_depth, T_ref_src.q.coeffs(), T_ref_src.t, cam);
}

inline TransferJacobian transfer_point_jacobian(const Eigen::Vector2d& x, double plane_depth,
                                                const PoseSE3& T_ref_src, const Intrinsics& cam) {
    const Eigen::Vector4d q = T_ref_src.q.coeffs();
    return transfer_ray_jacobian(cam.ray(x).normalized(), plane_depth,
                                 q, detail::quad_form_rotation(q), T_ref_src.t, cam);
}

}  // namespace blurslam
