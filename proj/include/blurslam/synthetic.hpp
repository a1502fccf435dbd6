#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "blurslam/blur.hpp"
#include "blurslam/camera.hpp"
#include "blurslam/errors.hpp"
#include "blurslam/image.hpp"
#include "blurslam/lie.hpp"

namespace blurslam {

// Procedural RGB-D oracle: axis-aligned textured rectangles (walls and boxes)
// rendered by exact ray casting, an analytic camera path, and blur synthesized
// by averaging many more virtual views than any tracker configuration uses.

namespace detail {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline double hash_unit(uint64_t seed, int64_t xi, int64_t yi) {
    uint64_t h = splitmix64(seed ^ (0x9E3779B97F4A7C15ULL * static_cast<uint64_t>(xi)));
    h = splitmix64(h ^ (0xC2B2AE3D27D4EB4FULL * static_cast<uint64_t>(yi)));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

/// Band-limited lattice value noise in [0, 1] with quintic interpolation.
inline double value_noise(uint64_t seed, double u, double v, double cell) {
    const double x = u / cell, y = v / cell;
    const double fx = std::floor(x), fy = std::floor(y);
    const int64_t xi = static_cast<int64_t>(fx), yi = static_cast<int64_t>(fy);
    double tx = x - fx, ty = y - fy;
    tx = tx * tx * tx * (tx * (tx * 6.0 - 15.0) + 10.0);
    ty = ty * ty * ty * (ty * (ty * 6.0 - 15.0) + 10.0);
    const double v00 = hash_unit(seed, xi, yi), v10 = hash_unit(seed, xi + 1, yi);
    const double v01 = hash_unit(seed, xi, yi + 1), v11 = hash_unit(seed, xi + 1, yi + 1);
    return (1.0 - ty) * ((1.0 - tx) * v00 + tx * v10) + ty * ((1.0 - tx) * v01 + tx * v11);
}

inline double checker(double u, double v, double cell) {
    const auto iu = static_cast<int64_t>(std::floor(u / cell));
    const auto iv = static_cast<int64_t>(std::floor(v / cell));
    return ((iu + iv) & 1) ? 1.0 : 0.0;
}

}  // namespace detail

/// One axis-aligned textured rectangle: constant coordinate `coord` on `axis`,
/// bounded on the remaining two axes (in cyclic order axis+1, axis+2).
struct RectPrim {
    int axis = 2;
    double coord = 0.0;
    double lo0 = 0.0, hi0 = 0.0;  // bounds along axis (axis+1)%3
    double lo1 = 0.0, hi1 = 0.0;  // bounds along axis (axis+2)%3
    Eigen::Vector3d base_color{0.7, 0.7, 0.7};
    uint64_t tex_seed = 0;
    double noise_cell = 0.25;
    double checker_cell = 0.45;
};

struct SyntheticScene {
    std::vector<RectPrim> rects;

    /// Two-octave value noise mixed with a checkerboard, modulating the base
    /// color between roughly 0.35x and 0.95x.
    Eigen::Vector3d shade(const RectPrim& r, double u, double v) const {
        const double n = 0.65 * detail::value_noise(r.tex_seed, u, v, r.noise_cell) +
                         0.35 * detail::value_noise(r.tex_seed ^ 0x5851F42D4C957F2DULL, u, v,
                                                    0.5 * r.noise_cell);
        const double t = 0.62 * n + 0.38 * detail::checker(u, v, r.checker_cell);
        return (0.35 + 0.60 * t) * r.base_color;
    }

    static void add_box(SyntheticScene& scene, const Eigen::Vector3d& center,
                        const Eigen::Vector3d& half, uint64_t seed) {
        for (int axis = 0; axis < 3; ++axis) {
            const int u = (axis + 1) % 3, v = (axis + 2) % 3;
            for (int side = -1; side <= 1; side += 2) {
                RectPrim r;
                r.axis = axis;
                r.coord = center[axis] + side * half[axis];
                r.lo0 = center[u] - half[u];
                r.hi0 = center[u] + half[u];
                r.lo1 = center[v] - half[v];
                r.hi1 = center[v] + half[v];
                const uint64_t h = detail::splitmix64(seed + scene.rects.size());
                r.tex_seed = h;
                r.base_color = {0.35 + 0.6 * detail::hash_unit(h, 1, 0),
                                0.35 + 0.6 * detail::hash_unit(h, 2, 0),
                                0.35 + 0.6 * detail::hash_unit(h, 3, 0)};
                r.noise_cell = 0.12 + 0.10 * detail::hash_unit(h, 4, 0);
                r.checker_cell = 0.16 + 0.12 * detail::hash_unit(h, 5, 0);
                scene.rects.push_back(r);
            }
        }
    }

    /// A wide textured back wall (guaranteeing full frustum coverage for the
    /// standard paths) with three boxes at distinct depths for parallax.
    static SyntheticScene standard_room(uint64_t seed) {
        SyntheticScene scene;
        RectPrim wall;
        wall.axis = 2;
        wall.coord = 2.1;
        wall.lo0 = -2.6;  // x
        wall.hi0 = 2.6;
        wall.lo1 = -1.8;  // y
        wall.hi1 = 1.8;
        wall.tex_seed = detail::splitmix64(seed ^ 0xABCDEF12345ULL);
        wall.base_color = {0.85, 0.78, 0.62};
        wall.noise_cell = 0.28;
        wall.checker_cell = 0.5;
        scene.rects.push_back(wall);

        add_box(scene, {-0.45, 0.35, 1.55}, {0.28, 0.30, 0.22}, seed + 1);
        add_box(scene, {0.50, -0.30, 1.75}, {0.25, 0.22, 0.20}, seed + 2);
        add_box(scene, {0.05, 0.05, 1.90}, {0.35, 0.20, 0.15}, seed + 3);
        return scene;
    }
};

/// Analytic camera-to-world path: linear velocity plus small per-axis
/// sinusoids in translation; a linear rotation ramp plus sinusoidal rotation
/// offsets combined in one rotation vector.
struct PathSpec {
    Eigen::Vector3d pos0{0.0, 0.0, 0.0};
    Eigen::Vector3d vel{0.0, 0.0, 0.0};
    Eigen::Vector3d trans_sin_amp{0.0, 0.0, 0.0};
    Eigen::Vector3d trans_sin_freq{0.0, 0.0, 0.0};  // Hz
    UnitQuaternion q0;
    Eigen::Vector3d rot_rate{0.0, 0.0, 0.0};  // rad/s
    Eigen::Vector3d rot_sin_amp{0.0, 0.0, 0.0};
    Eigen::Vector3d rot_sin_freq{0.0, 0.0, 0.0};  // Hz

    PoseSE3 pose_at(double t) const {
        Eigen::Vector3d p = pos0 + vel * t;
        Eigen::Vector3d r = rot_rate * t;
        for (int k = 0; k < 3; ++k) {
            p[k] += trans_sin_amp[k] * std::sin(2.0 * M_PI * trans_sin_freq[k] * t);
            r[k] += rot_sin_amp[k] * std::sin(2.0 * M_PI * rot_sin_freq[k] * t);
        }
        return {quat_mul(q0, quat_exp(r)), p};
    }

    /// Lateral sweep with a steady roll: about 2 degrees and 2 cm of motion
    /// per 60 ms exposure, in-exposure motion within a hair of the geodesic
    /// interpolation model.
    static PathSpec standard_sweep() {
        PathSpec path;
        path.pos0 = {-0.33, 0.0, 0.0};
        path.vel = {0.333, 0.0, 0.0};
        path.trans_sin_amp = {0.0, 0.035, 0.05};
        path.trans_sin_freq = {0.0, 0.40, 0.30};
        path.rot_rate = {0.0, 0.0, 0.5818};  // 33.3 deg/s roll
        path.rot_sin_amp = {0.030, 0.035, 0.0};
        path.rot_sin_freq = {0.25, 0.20, 0.0};
        return path;
    }

    /// Handheld-shake stress path: the sinusoidal rotation has a period of
    /// about 1.3 exposures, so the rotation direction reverses mid-exposure
    /// and the in-exposure motion is deliberately non-geodesic.
    static PathSpec shake_stress(double exposure) {
        PathSpec path = standard_sweep();
        path.rot_rate = {0.0, 0.0, 0.25};
        const double f = 1.0 / (1.3 * exposure);
        path.rot_sin_amp = {0.020, 0.026, 0.0};
        path.rot_sin_freq = {f, 0.77 * f, 0.0};
        return path;
    }
};

/// Ray-cast a scene view. Returns {rgb, depth}; depth is camera-frame z in
/// meters, 0 where no primitive is hit. coverage_out (optional) receives the
/// fraction of pixels that hit any primitive.
inline std::pair<ImageBuffer, ImageBuffer> render_scene(const SyntheticScene& scene,
                                                        const Intrinsics& cam,
                                                        const PoseSE3& pose_wc,
                                                        double* coverage_out = nullptr) {
    ImageBuffer rgb(cam.width, cam.height, 3);
    ImageBuffer depth(cam.width, cam.height, 1);
    const Eigen::Matrix3d R = pose_wc.q.matrix();
    const Eigen::Vector3d& origin = pose_wc.t;
    int hits = 0;
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            const Eigen::Vector3d ray_cam = cam.ray({double(x), double(y)}).normalized();
            const Eigen::Vector3d dir = R * ray_cam;
            double best_t = 1e30;
            const RectPrim* best = nullptr;
            double bu = 0.0, bv = 0.0;
            for (const RectPrim& r : scene.rects) {
                const double denom = dir[r.axis];
                if (std::abs(denom) < 1e-12) continue;
                const double t = (r.coord - origin[r.axis]) / denom;
                if (t <= 1e-6 || t >= best_t) continue;
                const int ua = (r.axis + 1) % 3, va = (r.axis + 2) % 3;
                const double u = origin[ua] + t * dir[ua];
                const double v = origin[va] + t * dir[va];
                if (u < r.lo0 || u > r.hi0 || v < r.lo1 || v > r.hi1) continue;
                best_t = t;
                best = &r;
                bu = u;
                bv = v;
            }
            if (!best) continue;
            ++hits;
            const Eigen::Vector3d c = scene.shade(*best, bu, bv);
            for (int ch = 0; ch < 3; ++ch) rgb.at(x, y, ch) = std::min(1.0, std::max(0.0, c[ch]));
            depth.at(x, y) = best_t * ray_cam.z();
        }
    }
    if (coverage_out) *coverage_out = double(hits) / (double(cam.width) * cam.height);
    return {std::move(rgb), std::move(depth)};
}

/// One ground-truth frame: the true exposure trajectory (camera-to-world), the
/// sharp mid-exposure view with its depth, and the oracle-blurred capture.
struct GtFrame {
    double timestamp = 0.0;
    ExposureTrajectory traj_w;
    ImageBuffer sharp_mid;
    ImageBuffer depth_mid;
    ImageBuffer blurry;

    RgbdFrame as_rgbd(const Intrinsics& cam) const {
        return {blurry, depth_mid, timestamp, cam};
    }
};

struct GtSequence {
    Intrinsics cam;
    std::vector<GtFrame> frames;
};

inline Intrinsics default_camera(double exposure) {
    Intrinsics cam;
    cam.fx = 100.0;
    cam.fy = 100.0;
    cam.cx = 63.5;
    cam.cy = 63.5;
    cam.width = 128;
    cam.height = 128;
    cam.exposure = exposure;
    return cam;
}

/// Renders a blurred RGB-D sequence along a path. Blur is the average of
/// n_oracle >= 4x-any-tracker-n views sampled on the true (possibly
/// non-geodesic) path; depth is the sharp mid-exposure depth. Every frame's
/// coverage must reach 60% or generation throws SceneValidation.
inline GtSequence generate_sequence(const SyntheticScene& scene, const PathSpec& path,
                                    const Intrinsics& cam, int n_frames, double frame_dt,
                                    int n_oracle) {
    if (n_frames < 1) throw DomainError("need at least one frame");
    if (n_oracle < 2) throw DomainError("oracle blur needs n >= 2");
    const double tau = cam.exposure;
    if (!(tau > 0.0)) throw DomainError("camera exposure must be positive");

    GtSequence seq;
    seq.cam = cam;
    seq.frames.reserve(n_frames);
    const std::vector<double> offsets = virtual_timestamps(n_oracle, tau);
    for (int k = 0; k < n_frames; ++k) {
        GtFrame f;
        f.timestamp = k * frame_dt;
        f.traj_w = {path.pose_at(f.timestamp), path.pose_at(f.timestamp + tau), tau};

        double coverage = 0.0;
        auto mid = render_scene(scene, cam, path.pose_at(f.timestamp + 0.5 * tau), &coverage);
        if (coverage < 0.6)
            throw SceneValidation("synthetic frame covers only " + std::to_string(coverage) +
                                  " of the image (need >= 0.6)");
        f.sharp_mid = std::move(mid.first);
        f.depth_mid = std::move(mid.second);

        ImageBuffer acc(cam.width, cam.height, 3);
        for (const double dt : offsets) {
            acc += render_scene(scene, cam, path.pose_at(f.timestamp + dt)).first;
        }
        acc *= 1.0 / n_oracle;
        f.blurry = std::move(acc);
        seq.frames.push_back(std::move(f));
    }
    return seq;
}

}  // namespace blurslam
