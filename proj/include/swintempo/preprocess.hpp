#pragma once

#include "swintempo/image.hpp"
#include "swintempo/volume_io.hpp"

#include <cstddef>
#include <span>

namespace swintempo {

constexpr double kHuFloor = -1200.0;
constexpr double kHuCeiling = 600.0;
constexpr double kStandardizeEpsilon = 1e-8;

enum class StandardizeScope { PerVolume, PerSlice };

CTVolume clip_hu(const CTVolume& volume);

/// Voxels outside the lung mask are set to the clip floor.
CTVolume apply_lung_mask(const CTVolume& volume, const LungMask& mask);

/// (v - mean) / max(std, eps) over the whole volume, or per slice when requested.
CTVolume standardize(const CTVolume& volume, StandardizeScope scope = StandardizeScope::PerVolume);

/// Bilinear resampling (pixel-centre aligned) to target x target.
Image resize_slice(const Image& slice, std::size_t target);

/// Bilinear resampling to an arbitrary extent.
Image resize_image(const Image& image, std::size_t height, std::size_t width);

/// Nearest-neighbour resampling; keeps binary images binary.
Image resize_nearest(const Image& image, std::size_t height, std::size_t width);

/// clip -> mask -> standardize. A missing mask skips the masking step.
CTVolume preprocess_volume(const CTVolume& volume, const LungMask* mask,
                           StandardizeScope scope = StandardizeScope::PerVolume);

Image slice_image(const CTVolume& volume, std::size_t z);

}  // namespace swintempo
