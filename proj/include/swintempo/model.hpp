#pragma once

#include "swintempo/image.hpp"
#include "swintempo/params.hpp"
#include "swintempo/swin_encoder.hpp"
#include "swintempo/temporal_gru.hpp"
#include "swintempo/unet_fusion.hpp"
#include "swintempo/volume_io.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace swintempo {

/// Ablation variants: UNet alone, UNet fused with the windowed-attention encoder, and the
/// fused model with a recurrent bottleneck.
enum class Variant { BaselineUnet, SwinEnhanced, SwinTempo };

std::string to_string(Variant variant);
/// Accepts baseline_unet, swin_enhanced, swin_tempo.
Variant parse_variant(const std::string& name);

struct ModelConfig {
    Variant variant = Variant::SwinTempo;
    std::size_t image_size = 224;
    SwinConfig swin;
    UNetConfig unet;

    /// 64x64 input, tiny encoder, 4 base UNet channels.
    static ModelConfig tiny(Variant variant = Variant::SwinTempo);

    bool uses_swin() const { return variant != Variant::BaselineUnet; }
    bool uses_gru() const { return variant == Variant::SwinTempo; }
    std::size_t bottleneck_channels() const { return swin.stage_channels(swin.stages() - 1); }
    std::size_t bottleneck_extent() const { return image_size / swin.downsampling(); }
    void validate() const;

    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
};

struct SliceResult {
    Tensor logits;  // [H, W]
    HiddenState state;
};

/// Names of the stages a forward pass executed, in order.
struct ForwardTrace {
    std::vector<std::string> stages;
};

class Model {
public:
    Model(ModelConfig cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    /// Zero state at the bottleneck; unused by non-recurrent variants.
    HiddenState initial_state() const;

    /// One slice [image_size, image_size]. Records a graph when gradients are enabled.
    SliceResult forward(const Tensor& slice, const HiddenState& state, long slice_index,
                        ForwardTrace* trace = nullptr) const;

    /// Probability maps for every slice in ascending z, with the state reset at the start.
    /// Slices are resampled to the model input size and maps back to the slice size.
    std::vector<ProbabilityMap> process_volume(const CTVolume& volume) const;

private:
    ModelConfig cfg_;
    ParamStore params_;
};

}  // namespace swintempo
