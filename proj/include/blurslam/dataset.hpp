#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "blurslam/camera.hpp"
#include "blurslam/errors.hpp"
#include "blurslam/metrics.hpp"
#include "blurslam/png_io.hpp"

namespace blurslam {

/// One color/depth pair from the dataset index, paths relative to the root.
struct FrameEntry {
    double timestamp = 0.0;  // color timestamp; the frame's reference time
    std::string rgb_path;
    std::string depth_path;
    double depth_timestamp = 0.0;
};

struct Dataset {
    std::string root;
    Intrinsics intrinsics;
    std::vector<FrameEntry> frames;
    std::vector<TimedPose> groundtruth;  // empty when no groundtruth.txt exists
};

namespace detail {

inline bool blank_or_comment(const std::string& line) {
    const size_t pos = line.find_first_not_of(" \t\r");
    return pos == std::string::npos || line[pos] == '#';
}

/// "timestamp filename" index files (rgb.txt / depth.txt).
inline std::vector<std::pair<double, std::string>> load_index(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingFile(path);
    std::vector<std::pair<double, std::string>> entries;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (blank_or_comment(line)) continue;
        std::istringstream ss(line);
        double ts;
        std::string file;
        if (!(ss >> ts >> file)) throw MalformedLine(path, line_no, line);
        entries.emplace_back(ts, std::move(file));
    }
    std::stable_sort(entries.begin(), entries.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    return entries;
}

/// Greedy nearest-timestamp association: color entries in order, each taking
/// the closest still-unused depth entry within the tolerance.
inline std::vector<FrameEntry> associate_frames(
    const std::vector<std::pair<double, std::string>>& rgb,
    const std::vector<std::pair<double, std::string>>& depth, double tolerance) {
    std::vector<FrameEntry> out;
    std::vector<char> used(depth.size(), 0);
    for (const auto& [ts, file] : rgb) {
        const auto it = std::lower_bound(
            depth.begin(), depth.end(), ts,
            [](const auto& entry, double t) { return entry.first < t; });
        const size_t hi = static_cast<size_t>(it - depth.begin());
        size_t best = depth.size();
        double best_dist = 0.0;
        const auto consider = [&](size_t j) {
            const double dist = std::abs(depth[j].first - ts);
            if (used[j] || dist > tolerance) return;
            if (best == depth.size() || dist < best_dist) {
                best = j;
                best_dist = dist;
            }
        };
        for (size_t j = hi; j-- > 0;) {
            if (ts - depth[j].first > tolerance) break;
            consider(j);
        }
        for (size_t j = hi; j < depth.size(); ++j) {
            if (depth[j].first - ts > tolerance) break;
            consider(j);
        }
        if (best == depth.size()) continue;
        used[best] = 1;
        out.push_back({ts, file, depth[best].second, depth[best].first});
    }
    return out;
}

}  // namespace detail

/// Camera file: one line "fx fy cx cy width height depth_scale exposure".
inline Intrinsics load_camera(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingFile(path);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::blank_or_comment(line)) continue;
        std::istringstream ss(line);
        Intrinsics cam;
        if (!(ss >> cam.fx >> cam.fy >> cam.cx >> cam.cy >> cam.width >> cam.height >>
              cam.depth_scale >> cam.exposure))
            throw MalformedLine(path, line_no, line);
        if (cam.fx <= 0 || cam.fy <= 0 || cam.width <= 0 || cam.height <= 0 ||
            cam.depth_scale <= 0)
            throw MalformedLine(path, line_no, line);
        return cam;
    }
    throw MalformedLine(path, line_no, "<empty camera file>");
}

inline void save_camera(const std::string& path, const Intrinsics& cam) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw MissingFile(path);
    char line[256];
    std::snprintf(line, sizeof(line), "%.12g %.12g %.12g %.12g %d %d %.12g %.12g\n", cam.fx,
                  cam.fy, cam.cx, cam.cy, cam.width, cam.height, cam.depth_scale, cam.exposure);
    out << "# fx fy cx cy width height depth_scale exposure\n" << line;
}

/// Trajectory file: "timestamp tx ty tz qx qy qz qw" per line. Poses come
/// back sorted by timestamp with re-normalized quaternions.
inline std::vector<TimedPose> load_trajectory_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingFile(path);
    std::vector<TimedPose> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::blank_or_comment(line)) continue;
        std::istringstream ss(line);
        double ts;
        Eigen::Vector3d t;
        Eigen::Vector4d q;
        if (!(ss >> ts >> t.x() >> t.y() >> t.z() >> q.x() >> q.y() >> q.z() >> q.w()))
            throw MalformedLine(path, line_no, line);
        if (q.norm() < 1e-6) throw MalformedLine(path, line_no, line);
        out.push_back({ts, {UnitQuaternion(q), t}});
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const TimedPose& a, const TimedPose& b) { return a.timestamp < b.timestamp; });
    return out;
}

/// Data lines only (no comment header); parses back to 1e-9.
inline std::string trajectory_to_text(const std::vector<TimedPose>& poses) {
    std::string text;
    char line[320];
    for (const TimedPose& p : poses) {
        const Eigen::Vector4d q = p.pose.q.coeffs();
        std::snprintf(line, sizeof(line),
                      "%.9f %.12g %.12g %.12g %.12g %.12g %.12g %.12g\n", p.timestamp,
                      p.pose.t.x(), p.pose.t.y(), p.pose.t.z(), q.x(), q.y(), q.z(), q.w());
        text += line;
    }
    return text;
}

inline void save_trajectory_file(const std::string& path, const std::vector<TimedPose>& poses,
                                 const std::string& header = "") {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw MissingFile(path);
    if (!header.empty()) out << "# " << header << "\n";
    out << "# timestamp tx ty tz qx qy qz qw\n";
    out << trajectory_to_text(poses);
    if (!out) throw Error("failed to write trajectory: " + path);
}

/// Load a dataset directory: rgb.txt + depth.txt + camera.txt, optional
/// groundtruth.txt. When the camera file carries a non-positive exposure,
/// it defaults to half the median inter-frame interval.
inline Dataset load_dataset(const std::string& root, double assoc_tolerance = 0.02) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw MissingFile(root);

    Dataset ds;
    ds.root = root;
    ds.intrinsics = load_camera(root + "/camera.txt");
    const auto rgb = detail::load_index(root + "/rgb.txt");
    const auto depth = detail::load_index(root + "/depth.txt");
    ds.frames = detail::associate_frames(rgb, depth, assoc_tolerance);
    if (ds.frames.empty())
        throw NoAssociations(root + ": no color/depth pairs within " +
                             std::to_string(assoc_tolerance) + "s");

    if (ds.intrinsics.exposure <= 0.0) {
        if (ds.frames.size() < 2)
            throw DomainError(root + ": cannot infer exposure from a single frame");
        std::vector<double> gaps;
        for (size_t i = 1; i < ds.frames.size(); ++i)
            gaps.push_back(ds.frames[i].timestamp - ds.frames[i - 1].timestamp);
        std::nth_element(gaps.begin(), gaps.begin() + gaps.size() / 2, gaps.end());
        ds.intrinsics.exposure = 0.5 * gaps[gaps.size() / 2];
        if (ds.intrinsics.exposure <= 0.0)
            throw DomainError(root + ": non-increasing frame timestamps");
    }

    if (fs::exists(root + "/groundtruth.txt"))
        ds.groundtruth = load_trajectory_file(root + "/groundtruth.txt");
    return ds;
}

/// Decode one associated frame; depth comes back in meters.
inline RgbdFrame load_frame(const Dataset& ds, size_t index) {
    if (index >= ds.frames.size()) throw DomainError("frame index out of range");
    const FrameEntry& entry = ds.frames[index];
    RgbdFrame frame;
    frame.timestamp = entry.timestamp;
    frame.intrinsics = ds.intrinsics;
    frame.rgb = read_png_rgb8(ds.root + "/" + entry.rgb_path);
    frame.depth = read_png_gray16(ds.root + "/" + entry.depth_path, ds.intrinsics.depth_scale);
    if (frame.rgb.width() != ds.intrinsics.width || frame.rgb.height() != ds.intrinsics.height ||
        frame.depth.width() != ds.intrinsics.width ||
        frame.depth.height() != ds.intrinsics.height)
        throw ShapeMismatch(entry.rgb_path + ": image size does not match camera file");
    return frame;
}

/// Write frames out in the dataset layout this library reads back:
/// rgb/<ts>.png + depth/<ts>.png, index files, camera.txt, and (when given)
/// groundtruth.txt.
inline void write_tum_dataset(const std::string& root, const Intrinsics& cam,
                              const std::vector<RgbdFrame>& frames,
                              const std::vector<TimedPose>& groundtruth = {}) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(root + "/rgb", ec);
    fs::create_directories(root + "/depth", ec);
    if (!fs::is_directory(root + "/rgb") || !fs::is_directory(root + "/depth"))
        throw MissingFile(root);

    std::ofstream rgb_index(root + "/rgb.txt", std::ios::trunc);
    std::ofstream depth_index(root + "/depth.txt", std::ios::trunc);
    rgb_index << "# timestamp filename\n";
    depth_index << "# timestamp filename\n";
    char ts_buf[64];
    for (const RgbdFrame& frame : frames) {
        std::snprintf(ts_buf, sizeof(ts_buf), "%.6f", frame.timestamp);
        const std::string rgb_rel = std::string("rgb/") + ts_buf + ".png";
        const std::string depth_rel = std::string("depth/") + ts_buf + ".png";
        write_png_rgb8(root + "/" + rgb_rel, frame.rgb);
        write_png_gray16(root + "/" + depth_rel, frame.depth, cam.depth_scale);
        rgb_index << ts_buf << " " << rgb_rel << "\n";
        depth_index << ts_buf << " " << depth_rel << "\n";
    }
    save_camera(root + "/camera.txt", cam);
    if (!groundtruth.empty()) save_trajectory_file(root + "/groundtruth.txt", groundtruth);
}

}  // namespace blurslam
