#pragma once

#include <vector>

#include "blurslam/errors.hpp"
#include "blurslam/image.hpp"

namespace blurslam {

/// Uniformly spaced virtual capture times inside an exposure window.
/// n >= 2 spans [0, exposure] inclusive; n == 1 degenerates to the midpoint.
inline std::vector<double> virtual_timestamps(int n, double exposure) {
    if (n < 1) throw DomainError("virtual sample count must be >= 1");
    if (!(exposure > 0.0)) throw DomainError("exposure must be positive");
    if (n == 1) return {0.5 * exposure};
    std::vector<double> t(n);
    for (int i = 0; i < n; ++i) t[i] = exposure * static_cast<double>(i) / (n - 1);
    return t;
}

struct VirtualSchedule {
    std::vector<double> times;
    double exposure = 0.0;

    static VirtualSchedule make(int n, double exposure) {
        return {virtual_timestamps(n, exposure), exposure};
    }
};

/// Discrete blur formation: the unweighted mean of the sharp virtual images.
inline ImageBuffer blur_average(const std::vector<ImageBuffer>& images) {
    if (images.empty()) throw DomainError("blur_average needs at least one image");
    ImageBuffer acc = images[0];
    for (size_t i = 1; i < images.size(); ++i) acc += images[i];
    acc *= 1.0 / static_cast<double>(images.size());
    return acc;
}

}  // namespace blurslam
