#pragma once

#include <stdexcept>
#include <string>

namespace blurslam {

/// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// A required file or directory does not exist or cannot be opened.
struct MissingFile : Error {
    explicit MissingFile(const std::string& path)
        : Error("missing or unreadable file: " + path) {}
};

/// A line in a text index/trajectory file does not match the expected format.
struct MalformedLine : Error {
    MalformedLine(const std::string& path, int line_no, const std::string& line)
        : Error("malformed line " + std::to_string(line_no) + " in " + path + ": " + line) {}
};

/// Color/depth timestamp association produced no usable pairs.
struct NoAssociations : Error {
    explicit NoAssociations(const std::string& what) : Error(what) {}
};

/// Inputs have incompatible shapes (image sizes, channel counts, list lengths).
struct ShapeMismatch : Error {
    explicit ShapeMismatch(const std::string& what) : Error(what) {}
};

/// An argument is outside its documented domain.
struct DomainError : Error {
    explicit DomainError(const std::string& what) : Error(what) {}
};

/// Keypoint selection found fewer usable anchors than the required minimum.
struct InsufficientKeypoints : Error {
    explicit InsufficientKeypoints(const std::string& what) : Error(what) {}
};

/// The tracker failed to reduce the cost at maximum damping for several
/// consecutive iterations and gave up on the frame.
struct TrackingDiverged : Error {
    explicit TrackingDiverged(const std::string& what) : Error(what) {}
};

/// Trajectory alignment was given fewer than the minimum number of pairs.
struct InsufficientPairs : Error {
    explicit InsufficientPairs(const std::string& what) : Error(what) {}
};

/// Map optimization was requested with an empty keyframe set.
struct NoKeyframes : Error {
    explicit NoKeyframes(const std::string& what) : Error(what) {}
};

/// A binary checkpoint has a bad magic, version, or truncated payload.
struct CorruptCheckpoint : Error {
    explicit CorruptCheckpoint(const std::string& what) : Error(what) {}
};

/// A generated synthetic scene failed its own validity checks.
struct SceneValidation : Error {
    explicit SceneValidation(const std::string& what) : Error(what) {}
};

}  // namespace blurslam
