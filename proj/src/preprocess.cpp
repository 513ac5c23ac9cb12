#include "swintempo/preprocess.hpp"

#include "swintempo/errors.hpp"

#include <algorithm>
#include <cmath>

namespace swintempo {

namespace {

void standardize_range(std::span<float> values) {
    double mean = 0.0;
    for (float v : values) {
        mean += v;
    }
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (float v : values) {
        var += (v - mean) * (v - mean);
    }
    var /= static_cast<double>(values.size());
    const double scale = std::max(std::sqrt(var), kStandardizeEpsilon);
    for (float& v : values) {
        v = static_cast<float>((v - mean) / scale);
    }
}

// Source coordinate of destination pixel `d` when mapping `in` samples onto `out`.
double source_coordinate(std::size_t d, std::size_t in, std::size_t out) {
    const double s = (static_cast<double>(d) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(in) - 1.0);
}

}  // namespace

CTVolume clip_hu(const CTVolume& volume) {
    CTVolume out = volume;
    for (float& v : out.voxels) {
        v = static_cast<float>(std::min(kHuCeiling, std::max(kHuFloor, static_cast<double>(v))));
    }
    return out;
}

CTVolume apply_lung_mask(const CTVolume& volume, const LungMask& mask) {
    if (mask.shape != volume.shape || mask.data.size() != volume.voxels.size()) {
        throw ValidationError("apply_lung_mask: mask shape does not match volume '" + volume.series_id + "'");
    }
    CTVolume out = volume;
    for (std::size_t i = 0; i < out.voxels.size(); ++i) {
        if (!mask.data[i]) {
            out.voxels[i] = static_cast<float>(kHuFloor);
        }
    }
    return out;
}

CTVolume standardize(const CTVolume& volume, StandardizeScope scope) {
    if (volume.voxels.empty()) {
        throw ValidationError("standardize: empty volume");
    }
    CTVolume out = volume;
    if (scope == StandardizeScope::PerVolume) {
        standardize_range(out.voxels);
    } else {
        for (std::size_t z = 0; z < out.shape[0]; ++z) {
            standardize_range(std::span<float>(out.voxels).subspan(z * out.slice_size(), out.slice_size()));
        }
    }
    return out;
}

Image resize_image(const Image& image, std::size_t height, std::size_t width) {
    if (image.height < 1 || image.width < 1 || height < 1 || width < 1) {
        throw ValidationError("resize_image: empty extent");
    }
    if (image.height == height && image.width == width) {
        return image;
    }
    Image out(height, width);
    for (std::size_t y = 0; y < height; ++y) {
        const double sy = source_coordinate(y, image.height, height);
        const auto y0 = static_cast<std::size_t>(std::floor(sy));
        const std::size_t y1 = std::min(y0 + 1, image.height - 1);
        const double fy = sy - static_cast<double>(y0);
        for (std::size_t x = 0; x < width; ++x) {
            const double sx = source_coordinate(x, image.width, width);
            const auto x0 = static_cast<std::size_t>(std::floor(sx));
            const std::size_t x1 = std::min(x0 + 1, image.width - 1);
            const double fx = sx - static_cast<double>(x0);
            const double top = image.at(y0, x0) * (1.0 - fx) + image.at(y0, x1) * fx;
            const double bottom = image.at(y1, x0) * (1.0 - fx) + image.at(y1, x1) * fx;
            out.at(y, x) = top * (1.0 - fy) + bottom * fy;
        }
    }
    return out;
}

Image resize_slice(const Image& slice, std::size_t target) {
    if (slice.height < 2 || slice.width < 2) {
        throw ValidationError("resize_slice: slice must be at least 2x2");
    }
    return resize_image(slice, target, target);
}

Image resize_nearest(const Image& image, std::size_t height, std::size_t width) {
    if (image.height == height && image.width == width) {
        return image;
    }
    Image out(height, width);
    for (std::size_t y = 0; y < height; ++y) {
        const auto sy = std::min(image.height - 1, static_cast<std::size_t>(std::floor(
                                                       (static_cast<double>(y) + 0.5) * static_cast<double>(image.height) /
                                                       static_cast<double>(height))));
        for (std::size_t x = 0; x < width; ++x) {
            const auto sx = std::min(image.width - 1, static_cast<std::size_t>(std::floor(
                                                          (static_cast<double>(x) + 0.5) * static_cast<double>(image.width) /
                                                          static_cast<double>(width))));
            out.at(y, x) = image.at(sy, sx);
        }
    }
    return out;
}

CTVolume preprocess_volume(const CTVolume& volume, const LungMask* mask, StandardizeScope scope) {
    volume.validate();
    CTVolume out = clip_hu(volume);
    if (mask) {
        out = apply_lung_mask(out, *mask);
    }
    out = standardize(out, scope);
    out.preprocessed = true;
    return out;
}

Image slice_image(const CTVolume& volume, std::size_t z) {
    if (z >= volume.shape[0]) {
        throw ValidationError("slice_image: slice index out of range");
    }
    Image out(volume.shape[1], volume.shape[2]);
    const auto s = volume.slice(z);
    std::copy(s.begin(), s.end(), out.values.begin());
    return out;
}

}  // namespace swintempo
