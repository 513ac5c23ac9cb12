#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace swintempo {

/// Row-major 2-D scalar image.
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> values;

    Image() = default;
    Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), values(h * w, fill) {}

    double& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
    double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
    std::size_t size() const { return values.size(); }
};

/// Per-slice nodule likelihood in [0, 1], same extent as the slice it came from.
struct ProbabilityMap {
    Image values;
    long slice_index = 0;
    std::string series_id;
};

}  // namespace swintempo
