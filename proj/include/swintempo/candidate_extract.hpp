#pragma once

#include "swintempo/image.hpp"
#include "swintempo/volume_io.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace swintempo {

constexpr double kDefaultThreshold = 0.5;
constexpr double kDefaultEpsMm = 2.5;
constexpr std::size_t kDefaultMinPts = 1;
constexpr double kRadiusFloorMm = 1.0;

struct Mask2D {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> data;

    Mask2D() = default;
    Mask2D(std::size_t h, std::size_t w) : height(h), width(w), data(h * w, 0) {}
    std::uint8_t at(std::size_t y, std::size_t x) const { return data[y * width + x]; }
    std::size_t count() const;
};

struct Pixel {
    std::size_t y = 0;
    std::size_t x = 0;
    auto operator<=>(const Pixel&) const = default;
};

/// One 8-connected foreground component. Pixels are in raster order; the boundary holds the
/// pixels with a 4-neighbour outside the component (image edges count as outside).
struct Component {
    std::vector<Pixel> pixels;
    std::vector<Pixel> boundary;
};

struct SliceDetection {
    long slice_index = 0;
    double centroid_x = 0.0;  // pixels
    double centroid_y = 0.0;
    double area_px = 0.0;
    double radius2d_px = 0.0;
    double score = 0.0;
};

struct NoduleCandidate {
    std::string series_id;
    WorldPoint center_mm;
    double radius_mm = 0.0;
    double probability = 0.0;
};

/// Placement of a stack of maps in world space.
struct SeriesGeometry {
    std::string series_id;
    Axis3 spacing_mm{1.0, 1.0, 1.0};  // (z, y, x)
    Axis3 origin_mm{0.0, 0.0, 0.0};

    static SeriesGeometry of(const CTVolume& volume) {
        return {volume.series_id, volume.spacing_mm, volume.origin_mm};
    }
};

/// Pixel set iff value > t; t must lie in (0, 1).
Mask2D threshold_map(const ProbabilityMap& map, double t);

/// Components ordered by their first pixel in raster order.
std::vector<Component> find_contours(const Mask2D& mask);

SliceDetection summarize_contour(const Component& component, const ProbabilityMap& map);

/// DBSCAN labels: cluster ids from 0 in order of each cluster's lowest-index core point,
/// -1 for noise. Neighbourhoods are closed balls (distance <= eps) that include the point.
/// A border point joins the cluster of its lowest-index core neighbour.
std::vector<int> dbscan(std::span<const std::array<double, 3>> points, double eps, std::size_t min_pts);

/// DBSCAN over detection centroids in millimetres; each cluster becomes one candidate.
/// Noise points are dropped (there is none when min_pts == 1).
std::vector<NoduleCandidate> cluster_3d(std::span<const SliceDetection> detections, double eps_mm,
                                        std::size_t min_pts, const SeriesGeometry& geometry);

/// Descending probability; ties broken by ascending (z, y, x).
void sort_candidates(std::vector<NoduleCandidate>& candidates);

struct ExtractOptions {
    double threshold = kDefaultThreshold;
    double eps_mm = kDefaultEpsMm;
    std::size_t min_pts = kDefaultMinPts;
};

/// threshold -> contours -> per-slice summaries -> 3-D clustering, sorted.
std::vector<NoduleCandidate> extract(std::span<const ProbabilityMap> maps, const ExtractOptions& options,
                                     const SeriesGeometry& geometry);

/// Header `series_id,coord_x,coord_y,coord_z,radius_mm,probability`.
void write_candidates(std::span<const NoduleCandidate> candidates, const std::filesystem::path& path);
std::vector<NoduleCandidate> read_candidates(const std::filesystem::path& path);

}  // namespace swintempo
