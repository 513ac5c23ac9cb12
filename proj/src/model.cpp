#include "swintempo/model.hpp"

#include "swintempo/errors.hpp"
#include "swintempo/ops.hpp"
#include "swintempo/preprocess.hpp"

#include "json.hpp"

namespace swintempo {

using nlohmann::json;

std::string to_string(Variant variant) {
    switch (variant) {
        case Variant::BaselineUnet:
            return "baseline_unet";
        case Variant::SwinEnhanced:
            return "swin_enhanced";
        case Variant::SwinTempo:
            return "swin_tempo";
    }
    return "unknown";
}

Variant parse_variant(const std::string& name) {
    for (Variant v : {Variant::BaselineUnet, Variant::SwinEnhanced, Variant::SwinTempo}) {
        if (to_string(v) == name) {
            return v;
        }
    }
    throw ConfigError("unknown variant '" + name + "' (expected baseline_unet, swin_enhanced or swin_tempo)");
}

ModelConfig ModelConfig::tiny(Variant variant) {
    ModelConfig cfg;
    cfg.variant = variant;
    cfg.image_size = 64;
    cfg.swin = SwinConfig::tiny();
    cfg.unet.base_channels = 4;
    return cfg;
}

void ModelConfig::validate() const {
    swin.validate();
    unet.validate();
    if (swin.patch_size != 4 || swin.stages() != 4) {
        throw ConfigError("model: encoder must have four stages and patch size 4 to align with the UNet scales");
    }
    if (swin.in_channels != 3 && swin.in_channels != 1) {
        throw ConfigError("model: encoder in_channels must be 1 or 3");
    }
    if (image_size == 0 || image_size % swin.downsampling() != 0) {
        throw ConfigError("model: image_size " + std::to_string(image_size) + " must be a positive multiple of " +
                          std::to_string(swin.downsampling()));
    }
}

std::string ModelConfig::to_json() const {
    json j;
    j["variant"] = to_string(variant);
    j["image_size"] = image_size;
    j["swin"] = {{"embed_dim", swin.embed_dim},     {"depths", swin.depths},
                 {"heads", swin.heads},             {"window_size", swin.window_size},
                 {"patch_size", swin.patch_size},   {"mlp_ratio", swin.mlp_ratio},
                 {"in_channels", swin.in_channels}};
    j["unet"] = {{"base_channels", unet.base_channels},
                 {"n_down", unet.n_down},
                 {"decoder_levels", unet.decoder_levels}};
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    try {
        const json j = json::parse(text);
        ModelConfig cfg;
        cfg.variant = parse_variant(j.at("variant").get<std::string>());
        cfg.image_size = j.at("image_size").get<std::size_t>();
        const json& s = j.at("swin");
        cfg.swin.embed_dim = s.at("embed_dim").get<std::size_t>();
        cfg.swin.depths = s.at("depths").get<std::vector<std::size_t>>();
        cfg.swin.heads = s.at("heads").get<std::vector<std::size_t>>();
        cfg.swin.window_size = s.at("window_size").get<std::size_t>();
        cfg.swin.patch_size = s.at("patch_size").get<std::size_t>();
        cfg.swin.mlp_ratio = s.at("mlp_ratio").get<double>();
        cfg.swin.in_channels = s.at("in_channels").get<std::size_t>();
        const json& u = j.at("unet");
        cfg.unet.base_channels = u.at("base_channels").get<std::size_t>();
        cfg.unet.n_down = u.at("n_down").get<std::size_t>();
        cfg.unet.decoder_levels = u.at("decoder_levels").get<std::size_t>();
        cfg.validate();
        return cfg;
    } catch (const json::exception& e) {
        throw FormatError(std::string("model config: ") + e.what());
    }
}

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    // Each branch draws from its own stream so variants share identical values for the
    // parameters they have in common.
    Rng unet_rng(seed);
    init_unet(params_, cfg_.unet, cfg_.swin, unet_rng);
    if (cfg_.uses_swin()) {
        Rng swin_rng(seed ^ 0x5377696e00000000ULL);
        init_swin(params_, cfg_.swin, swin_rng);
    }
    if (cfg_.uses_gru()) {
        Rng gru_rng(seed ^ 0x4752550000000000ULL);
        init_gru(params_, cfg_.bottleneck_channels(), cfg_.bottleneck_channels(), gru_rng);
    }
}

HiddenState Model::initial_state() const {
    const std::size_t e = cfg_.bottleneck_extent();
    return init_hidden(cfg_.bottleneck_channels(), e, e);
}

SliceResult Model::forward(const Tensor& slice, const HiddenState& state, long slice_index,
                           ForwardTrace* trace) const {
    if (slice.rank() != 2 || slice.dim(0) != cfg_.image_size || slice.dim(1) != cfg_.image_size) {
        throw ValidationError("model: expected a " + std::to_string(cfg_.image_size) + "x" +
                              std::to_string(cfg_.image_size) + " slice, got " + shape_str(slice.shape()));
    }
    auto mark = [&](const char* stage) {
        if (trace) {
            trace->stages.emplace_back(stage);
        }
    };
    const UNetPyramid unet = contract(slice, cfg_.unet, params_);
    mark("unet.contract");
    FusedPyramid fused;
    if (cfg_.uses_swin()) {
        const FeaturePyramid swin = encode(slice, cfg_.swin, params_);
        mark("swin.encode");
        fused = fuse(unet, &swin, params_);
    } else {
        fused = fuse(unet, nullptr, params_);
    }
    mark("fuse");
    SliceResult out;
    Tensor bottleneck = fused.levels.back();
    if (cfg_.uses_gru()) {
        out.state = gru_step(bottleneck, state, params_, slice_index);
        bottleneck = out.state.state;
        mark("gru.step");
    } else {
        out.state = {state.state, slice_index};
    }
    out.logits = expand(fused, bottleneck, params_);
    mark("dec.expand");
    return out;
}

std::vector<ProbabilityMap> Model::process_volume(const CTVolume& volume) const {
    volume.validate();
    if (!volume.preprocessed) {
        throw ValidationError("process_volume: volume '" + volume.series_id + "' has not been preprocessed");
    }
    NoGradGuard no_grad;
    const std::size_t n = cfg_.image_size;
    HiddenState state = initial_state();
    std::vector<ProbabilityMap> maps;
    maps.reserve(volume.shape[0]);
    for (std::size_t z = 0; z < volume.shape[0]; ++z) {
        const Image slice = slice_image(volume, z);
        const Image input = (slice.height == n && slice.width == n) ? slice : resize_slice(slice, n);
        SliceResult result = forward(Tensor({n, n}, input.values), state, static_cast<long>(z));
        state = result.state;
        const Tensor prob = ops::sigmoid(result.logits);
        Image map(n, n);
        std::copy(prob.values().begin(), prob.values().end(), map.values.begin());
        if (slice.height != n || slice.width != n) {
            map = resize_image(map, slice.height, slice.width);
        }
        maps.push_back({std::move(map), static_cast<long>(z), volume.series_id});
    }
    return maps;
}

}  // namespace swintempo
