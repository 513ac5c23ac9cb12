#include "swintempo/unet_fusion.hpp"

#include "swintempo/errors.hpp"
#include "swintempo/ops.hpp"

#include <cmath>

namespace swintempo {

namespace {

constexpr std::size_t kSharedLevels = 4;  // 1/4 ... 1/32
constexpr std::size_t kFirstShared = 2;
constexpr double kHeadBias = -4.6;        // sigmoid(-4.6) ~ 0.01 foreground prior

Tensor kaiming(Shape shape, std::size_t fan_in, Rng& rng) {
    return init::normal(std::move(shape), std::sqrt(2.0 / static_cast<double>(fan_in)), rng);
}

void add_conv_block(ParamStore& params, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
    params.add(prefix + "conv1.weight", kaiming({out, in, 3, 3}, in * 9, rng));
    params.add(prefix + "conv1.bias", init::zeros({out}));
    params.add(prefix + "norm1.weight", init::constant({out}, 1.0));
    params.add(prefix + "norm1.bias", init::zeros({out}));
    params.add(prefix + "conv2.weight", kaiming({out, out, 3, 3}, out * 9, rng));
    params.add(prefix + "conv2.bias", init::zeros({out}));
    params.add(prefix + "norm2.weight", init::constant({out}, 1.0));
    params.add(prefix + "norm2.bias", init::zeros({out}));
}

void require_spatial(const Tensor& a, const Tensor& b, const std::string& what) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2)) {
        throw ValidationError(what + ": spatial mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

}  // namespace

void UNetConfig::validate() const {
    if (base_channels < 1) {
        throw ConfigError("unet: base_channels must be at least 1");
    }
    if (n_down != 5 || decoder_levels != 5) {
        throw ConfigError("unet: n_down and decoder_levels must both be 5 to span 1/1 ... 1/32");
    }
}

std::size_t skip_channels(std::size_t level, const UNetConfig& unet, const SwinConfig& swin) {
    return level >= kFirstShared ? swin.stage_channels(level - kFirstShared) : unet.channels(level);
}

Tensor double_conv(const Tensor& x, const ParamStore& params, const std::string& prefix) {
    Tensor h = ops::conv2d(x, params.at(prefix + "conv1.weight"), params.at(prefix + "conv1.bias"), 1);
    h = ops::relu(ops::map_norm(h, params.at(prefix + "norm1.weight"), params.at(prefix + "norm1.bias")));
    h = ops::conv2d(h, params.at(prefix + "conv2.weight"), params.at(prefix + "conv2.bias"), 1);
    return ops::relu(ops::map_norm(h, params.at(prefix + "norm2.weight"), params.at(prefix + "norm2.bias")));
}

UNetPyramid contract(const Tensor& slice, const UNetConfig& cfg, const ParamStore& params,
                     const std::string& prefix) {
    cfg.validate();
    Tensor x;
    if (slice.rank() == 2) {
        x = ops::reshape(slice, {1, slice.dim(0), slice.dim(1)});
    } else if (slice.rank() == 3 && slice.dim(0) == 1) {
        x = slice;
    } else {
        throw ValidationError("contract: expected a single-channel slice, got " + shape_str(slice.shape()));
    }
    const std::size_t factor = std::size_t{1} << cfg.n_down;
    if (x.dim(1) % factor != 0 || x.dim(2) % factor != 0 || x.dim(1) == 0 || x.dim(2) == 0) {
        throw ValidationError("contract: " + std::to_string(x.dim(1)) + "x" + std::to_string(x.dim(2)) +
                              " is not divisible by " + std::to_string(factor));
    }
    UNetPyramid out;
    for (std::size_t level = 0; level <= cfg.n_down; ++level) {
        if (level > 0) {
            x = ops::max_pool2(x);
        }
        x = double_conv(x, params, prefix + "enc" + std::to_string(level) + ".");
        out.levels.push_back(x);
    }
    return out;
}

FusedPyramid fuse(const UNetPyramid& unet, const FeaturePyramid* swin, const ParamStore& params,
                  const std::string& prefix) {
    if (unet.levels.size() != kFirstShared + kSharedLevels) {
        throw ValidationError("fuse: expected " + std::to_string(kFirstShared + kSharedLevels) + " UNet levels");
    }
    if (swin && swin->levels.size() != kSharedLevels) {
        throw ValidationError("fuse: expected " + std::to_string(kSharedLevels) + " encoder levels");
    }
    FusedPyramid out;
    out.skip_full = unet.levels[0];
    out.skip_half = unet.levels[1];
    for (std::size_t k = 0; k < kSharedLevels; ++k) {
        const std::string name = prefix + "proj" + std::to_string(k) + ".";
        Tensor projected =
            ops::conv2d(unet.levels[k + kFirstShared], params.at(name + "weight"), params.at(name + "bias"), 0);
        if (swin) {
            const Tensor encoded = tokens_to_map(swin->levels[k].tokens);
            require_spatial(projected, encoded, "fuse level " + std::to_string(k));
            if (projected.dim(0) != encoded.dim(0)) {
                throw ValidationError("fuse: projection emits " + std::to_string(projected.dim(0)) +
                                      " channels, encoder level has " + std::to_string(encoded.dim(0)));
            }
            projected = ops::add(projected, encoded);
        }
        out.levels.push_back(projected);
    }
    return out;
}

Tensor expand(const FusedPyramid& fused, const Tensor& bottleneck, const ParamStore& params,
              const std::string& prefix) {
    if (fused.levels.size() != kSharedLevels) {
        throw ValidationError("expand: fused pyramid must have " + std::to_string(kSharedLevels) + " levels");
    }
    Tensor x = bottleneck;
    require_spatial(x, fused.levels.back(), "expand bottleneck");
    // stage i lands on scale 1/2^(4-i)
    for (std::size_t i = 0; i < 5; ++i) {
        const std::size_t level = 4 - i;
        const Tensor& skip = level >= kFirstShared ? fused.levels[level - kFirstShared]
                                                   : (level == 1 ? fused.skip_half : fused.skip_full);
        const std::string stage = prefix + "up" + std::to_string(i) + ".";
        x = ops::conv_transpose2x(x, params.at(stage + "weight"), params.at(stage + "bias"));
        require_spatial(x, skip, "expand stage " + std::to_string(i));
        x = double_conv(ops::concat0({x, skip}), params, prefix + "block" + std::to_string(i) + ".");
    }
    const Tensor logits = ops::conv2d(x, params.at(prefix + "head.weight"), params.at(prefix + "head.bias"), 0);
    return ops::reshape(logits, {logits.dim(1), logits.dim(2)});
}

void init_unet(ParamStore& params, const UNetConfig& unet, const SwinConfig& swin, Rng& rng) {
    unet.validate();
    swin.validate();
    if (swin.patch_size != 4 || swin.stages() != kSharedLevels) {
        throw ConfigError("fusion requires a four-stage encoder with patch size 4 (levels 1/4 ... 1/32)");
    }
    for (std::size_t level = 0; level <= unet.n_down; ++level) {
        const std::size_t in = level == 0 ? 1 : unet.channels(level - 1);
        add_conv_block(params, "unet.enc" + std::to_string(level) + ".", in, unet.channels(level), rng);
    }
    for (std::size_t k = 0; k < kSharedLevels; ++k) {
        const std::size_t in = unet.channels(k + kFirstShared);
        const std::size_t out = swin.stage_channels(k);
        const std::string name = "fuse.proj" + std::to_string(k) + ".";
        params.add(name + "weight", init::normal({out, in, 1, 1}, std::sqrt(1.0 / static_cast<double>(in)), rng));
        params.add(name + "bias", init::zeros({out}));
    }
    std::size_t channels = swin.stage_channels(kSharedLevels - 1);
    for (std::size_t i = 0; i < 5; ++i) {
        const std::size_t level = 4 - i;
        const std::size_t skip = skip_channels(level, unet, swin);
        const std::string stage = "dec.up" + std::to_string(i) + ".";
        params.add(stage + "weight", kaiming({channels, skip, 3, 3}, channels * 9, rng));
        params.add(stage + "bias", init::zeros({skip}));
        add_conv_block(params, "dec.block" + std::to_string(i) + ".", 2 * skip, skip, rng);
        channels = skip;
    }
    params.add("dec.head.weight", kaiming({1, channels, 1, 1}, channels, rng));
    params.add("dec.head.bias", init::constant({1}, kHeadBias));
}

}  // namespace swintempo
