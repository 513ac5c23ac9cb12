#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace swintempo {

/// Grid extent as (Z, Y, X).
using Extent3 = std::array<std::size_t, 3>;
/// Per-axis physical quantity in (z, y, x) order.
using Axis3 = std::array<double, 3>;

struct WorldPoint {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
};

double distance_mm(const WorldPoint& a, const WorldPoint& b);

/// A CT scan: slices along Z are the frames the detector walks through.
///
/// Voxels are stored Z-major (z, then y, then x). World position of voxel (z, y, x) is
/// origin + index * spacing on each axis, in millimetres.
struct CTVolume {
    std::string series_id;
    Extent3 shape{0, 0, 0};
    Axis3 spacing_mm{1.0, 1.0, 1.0};
    Axis3 origin_mm{0.0, 0.0, 0.0};
    std::vector<float> voxels;
    /// Set once clip/mask/standardize have been applied; persisted in the sidecar.
    bool preprocessed = false;

    std::size_t slice_size() const { return shape[1] * shape[2]; }
    std::size_t index(std::size_t z, std::size_t y, std::size_t x) const {
        return (z * shape[1] + y) * shape[2] + x;
    }
    float at(std::size_t z, std::size_t y, std::size_t x) const { return voxels[index(z, y, x)]; }
    std::span<const float> slice(std::size_t z) const {
        return std::span<const float>(voxels).subspan(z * slice_size(), slice_size());
    }
    WorldPoint voxel_to_world(double z, double y, double x) const;

    /// Throws ValidationError when the shape, spacing or voxel values break the invariants.
    void validate() const;
};

/// Ground-truth nodule: a world-coordinate sphere.
struct Annotation {
    std::string series_id;
    WorldPoint center_mm;
    double diameter_mm = 0.0;
};

struct BinaryVolume {
    Extent3 shape{0, 0, 0};
    std::vector<std::uint8_t> data;

    BinaryVolume() = default;
    explicit BinaryVolume(Extent3 extent) : shape(extent), data(extent[0] * extent[1] * extent[2], 0) {}

    std::size_t index(std::size_t z, std::size_t y, std::size_t x) const {
        return (z * shape[1] + y) * shape[2] + x;
    }
    std::size_t count() const;
};

using LungMask = BinaryVolume;

struct PhantomConfig {
    std::size_t n_volumes = 4;
    Extent3 shape{16, 64, 64};
    Axis3 spacing_mm{2.0, 1.0, 1.0};
    std::pair<int, int> nodules_per_volume{1, 3};
    std::pair<double, double> nodule_radius_mm{3.0, 5.0};
    /// Standard deviation of the additive Gaussian texture, in HU.
    double background_texture = 50.0;
    std::uint64_t seed = 0;
    std::string series_prefix = "phantom";

    void validate() const;
};

struct PhantomCase {
    CTVolume volume;
    LungMask lung_mask;
    std::vector<Annotation> annotations;
    /// Voxels painted with nodule intensity.
    BinaryVolume nodule_voxels;
};

constexpr float kNoduleHu = 0.0F;
constexpr float kLungHu = -800.0F;
constexpr float kTissueHu = 40.0F;
constexpr float kAirHu = -1000.0F;

/// Reads `<name>.json` + `<name>.raw`. `path` may name either file or the common stem.
CTVolume read_volume(const std::filesystem::path& path);
void write_volume(const CTVolume& volume, const std::filesystem::path& path);

LungMask read_mask(const std::filesystem::path& path);
/// Stores the mask in the volume format (values 0.0 / 1.0) using `geometry`'s metadata.
void write_mask(const LungMask& mask, const CTVolume& geometry, const std::filesystem::path& path);

std::vector<Annotation> read_annotations(const std::filesystem::path& path);
void write_annotations(std::span<const Annotation> annotations, const std::filesystem::path& path);

/// Voxel is set iff its centre lies within diameter/2 (mm) of any annotation centre.
BinaryVolume rasterize_annotations(const Extent3& shape, const Axis3& spacing_mm, const Axis3& origin_mm,
                                   std::span<const Annotation> annotations);

/// Deterministic synthetic scans: a tissue body, two ellipsoidal lungs, and
/// non-overlapping spherical nodules fully inside the lungs.
std::vector<PhantomCase> generate_phantom(const PhantomConfig& config);

/// One scan of an on-disk dataset directory.
struct DatasetEntry {
    std::string series_id;
    std::filesystem::path volume;
    std::filesystem::path mask;  // empty when the scan has no lung mask
};

/// Dataset layout: `<series>.json/.raw`, optional `<series>_mask.json/.raw`, and
/// `annotations.csv`.
std::vector<DatasetEntry> list_dataset(const std::filesystem::path& directory);
std::filesystem::path dataset_annotations(const std::filesystem::path& directory);
void write_dataset(std::span<const PhantomCase> cases, const std::filesystem::path& directory);

}  // namespace swintempo
