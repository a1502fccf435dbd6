#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "blurslam/errors.hpp"
#include "blurslam/splat.hpp"

namespace blurslam {

namespace detail {

// Checkpoint layout (little-endian): "MBAG" magic, u32 version, u64 count,
// then one 56-byte record per Gaussian: mean xyz, log-scale xyz, rotation
// quaternion xyzw, pre-sigmoid opacity, color rgb - all float32.
inline constexpr char kMapMagic[4] = {'M', 'B', 'A', 'G'};
inline constexpr std::uint32_t kMapVersion = 1;
inline constexpr size_t kMapRecordFloats = 14;

template <typename T>
void put_le(std::string& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    out.append(bytes, sizeof(T));  // host is little-endian (x86/aarch64 targets)
}

template <typename T>
T get_le(const std::string& in, size_t& offset) {
    T value;
    std::memcpy(&value, in.data() + offset, sizeof(T));
    offset += sizeof(T);
    return value;
}

}  // namespace detail

/// Serialize the map's Gaussians (ids and densification stats are not part
/// of a checkpoint). The byte stream is a pure function of the parameters.
inline void save_checkpoint(const GaussianMap& map, const std::string& path) {
    std::string buf;
    buf.reserve(16 + map.size() * detail::kMapRecordFloats * sizeof(float));
    buf.append(detail::kMapMagic, 4);
    detail::put_le(buf, detail::kMapVersion);
    detail::put_le(buf, static_cast<std::uint64_t>(map.size()));
    for (const Gaussian3D& g : map.gaussians) {
        for (int k = 0; k < 3; ++k) detail::put_le(buf, static_cast<float>(g.mean(k)));
        for (int k = 0; k < 3; ++k) detail::put_le(buf, static_cast<float>(g.log_scale(k)));
        for (int k = 0; k < 4; ++k)
            detail::put_le(buf, static_cast<float>(g.rotation.coeffs()(k)));
        detail::put_le(buf, static_cast<float>(g.opacity_logit));
        for (int k = 0; k < 3; ++k) detail::put_le(buf, static_cast<float>(g.color(k)));
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw MissingFile(path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw Error("failed to write checkpoint: " + path);
}

/// Load a checkpoint written by save_checkpoint. Quaternions are
/// re-normalized; Gaussians receive fresh ids 0..count-1.
inline GaussianMap load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFile(path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < 16 || std::memcmp(buf.data(), detail::kMapMagic, 4) != 0)
        throw CorruptCheckpoint(path + ": bad magic");
    size_t offset = 4;
    const auto version = detail::get_le<std::uint32_t>(buf, offset);
    if (version != detail::kMapVersion)
        throw CorruptCheckpoint(path + ": unsupported version " + std::to_string(version));
    const auto count = detail::get_le<std::uint64_t>(buf, offset);
    const size_t expected = offset + count * detail::kMapRecordFloats * sizeof(float);
    if (buf.size() != expected)
        throw CorruptCheckpoint(path + ": payload size mismatch (" +
                                std::to_string(buf.size()) + " bytes, expected " +
                                std::to_string(expected) + ")");

    GaussianMap map;
    map.gaussians.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        Gaussian3D g;
        for (int k = 0; k < 3; ++k) g.mean(k) = detail::get_le<float>(buf, offset);
        for (int k = 0; k < 3; ++k) g.log_scale(k) = detail::get_le<float>(buf, offset);
        Eigen::Vector4d q;
        for (int k = 0; k < 4; ++k) q(k) = detail::get_le<float>(buf, offset);
        g.rotation = UnitQuaternion(q);
        g.opacity_logit = detail::get_le<float>(buf, offset);
        for (int k = 0; k < 3; ++k) g.color(k) = detail::get_le<float>(buf, offset);
        map.add(g);
    }
    return map;
}

/// Export Gaussian centers as a plain-text point cloud, one "x y z r g b"
/// line per Gaussian with 8-bit colors.
inline void save_point_cloud(const GaussianMap& map, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw MissingFile(path);
    char line[160];
    for (const Gaussian3D& g : map.gaussians) {
        const auto c8 = [](double v) {
            return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        };
        std::snprintf(line, sizeof(line), "%.9g %.9g %.9g %d %d %d\n", g.mean.x(), g.mean.y(),
                      g.mean.z(), c8(g.color.x()), c8(g.color.y()), c8(g.color.z()));
        out << line;
    }
    if (!out) throw Error("failed to write point cloud: " + path);
}

}  // namespace blurslam
