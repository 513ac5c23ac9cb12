#pragma once

#include "swintempo/params.hpp"
#include "swintempo/random.hpp"
#include "swintempo/swin_encoder.hpp"
#include "swintempo/tensor.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace swintempo {

/// Convolutional branch. Feature maps are [C, h, w].
struct UNetConfig {
    std::size_t base_channels = 16;
    std::size_t n_down = 5;
    std::size_t decoder_levels = 5;

    void validate() const;
    std::size_t channels(std::size_t level) const { return base_channels << level; }
};

/// Contracting-path features at scales 1/1 ... 1/2^n_down.
struct UNetPyramid {
    std::vector<Tensor> levels;
};

/// Fused features at 1/4 ... 1/32 plus the UNet-only skips at 1/1 and 1/2.
struct FusedPyramid {
    std::vector<Tensor> levels;
    Tensor skip_full;
    Tensor skip_half;
};

/// conv3x3 -> norm -> ReLU, twice.
Tensor double_conv(const Tensor& x, const ParamStore& params, const std::string& prefix);

/// [H, W] or [1, H, W] slice -> six feature levels.
UNetPyramid contract(const Tensor& slice, const UNetConfig& cfg, const ParamStore& params,
                     const std::string& prefix = "unet.");

/// Projects UNet levels 2..5 with a 1x1 convolution to the encoder channel count and adds the
/// encoder level. A null `swin` keeps the projection alone.
FusedPyramid fuse(const UNetPyramid& unet, const FeaturePyramid* swin, const ParamStore& params,
                  const std::string& prefix = "fuse.");

/// Five 2x up-sampling stages with skips, then a 1x1 head: bottleneck [C, H/32, W/32] -> [H, W]
/// logits.
Tensor expand(const FusedPyramid& fused, const Tensor& bottleneck, const ParamStore& params,
              const std::string& prefix = "dec.");

/// Registers contracting-path, fusion and decoder parameters.
void init_unet(ParamStore& params, const UNetConfig& unet, const SwinConfig& swin, Rng& rng);

/// Channel count of the decoder skip at scale 1/2^level.
std::size_t skip_channels(std::size_t level, const UNetConfig& unet, const SwinConfig& swin);

}  // namespace swintempo
