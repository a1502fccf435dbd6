#pragma once

#include <Eigen/Core>

#include "blurslam/errors.hpp"
#include "blurslam/image.hpp"

namespace blurslam {

/// Pinhole camera. Pixel (0, 0) is the center of the top-left pixel.
struct Intrinsics {
    double fx = 0.0, fy = 0.0;
    double cx = 0.0, cy = 0.0;
    int width = 0, height = 0;
    double depth_scale = 1.0 / 5000.0;  // meters per stored depth unit
    double exposure = 0.0;              // seconds

    Eigen::Vector2d project(const Eigen::Vector3d& p) const {
        return {fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy};
    }

    /// Point with camera-frame z equal to depth.
    Eigen::Vector3d backproject(const Eigen::Vector2d& px, double depth) const {
        return {depth * (px.x() - cx) / fx, depth * (px.y() - cy) / fy, depth};
    }

    /// Unnormalized viewing ray with unit z.
    Eigen::Vector3d ray(const Eigen::Vector2d& px) const {
        return {(px.x() - cx) / fx, (px.y() - cy) / fy, 1.0};
    }

    /// d(project)/d(p) evaluated at p.
    Eigen::Matrix<double, 2, 3> project_jacobian(const Eigen::Vector3d& p) const {
        const double iz = 1.0 / p.z();
        Eigen::Matrix<double, 2, 3> J;
        J << fx * iz, 0.0, -fx * p.x() * iz * iz,
             0.0, fy * iz, -fy * p.y() * iz * iz;
        return J;
    }

    /// Intrinsics of pyramid level l (factor-2 decimation at even coords).
    Intrinsics level(int l) const {
        Intrinsics out = *this;
        const double s = static_cast<double>(1 << l);
        out.fx = fx / s;
        out.fy = fy / s;
        out.cx = cx / s;
        out.cy = cy / s;
        int w = width, h = height;
        for (int i = 0; i < l; ++i) {
            w = (w + 1) / 2;
            h = (h + 1) / 2;
        }
        out.width = w;
        out.height = h;
        return out;
    }
};

/// One captured frame: blurry color, depth in meters (0 = invalid), capture
/// timestamp of the exposure start, and the camera that took it.
struct RgbdFrame {
    ImageBuffer rgb;    // 3 channels
    ImageBuffer depth;  // 1 channel, meters
    double timestamp = 0.0;
    Intrinsics intrinsics;
};

}  // namespace blurslam
