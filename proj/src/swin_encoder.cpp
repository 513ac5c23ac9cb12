#include "swintempo/swin_encoder.hpp"

#include "swintempo/errors.hpp"

#include <cmath>
#include <limits>

namespace swintempo {

namespace {

using Index = std::int64_t;

ops::IndexMap share(std::vector<Index> index) {
    return std::make_shared<const std::vector<Index>>(std::move(index));
}

std::size_t round_up(std::size_t n, std::size_t multiple) { return (n + multiple - 1) / multiple * multiple; }

void require_grid(const Tensor& t, const char* op) {
    if (t.rank() != 3 || t.dim(0) == 0 || t.dim(1) == 0) {
        throw ValidationError(std::string(op) + ": expected a [h, w, C] grid, got " + shape_str(t.shape()));
    }
}

std::size_t table_window_of(const Tensor& table) {
    const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(table.dim(0)))));
    if (side * side != table.dim(0) || side % 2 == 0) {
        throw ConfigError("relative position bias table has " + std::to_string(table.dim(0)) +
                          " rows, not a (2w-1)^2 square");
    }
    return (side + 1) / 2;
}

// Row of padded coordinate `p` in the rolled frame, i.e. the position it came from.
std::size_t unroll(std::size_t p, std::size_t shift, std::size_t padded) { return (p + shift) % padded; }

}  // namespace

SwinConfig SwinConfig::tiny() {
    SwinConfig cfg;
    cfg.embed_dim = 8;
    cfg.depths = {1, 1, 2, 1};
    cfg.heads = {1, 2, 4, 8};
    cfg.window_size = 4;
    return cfg;
}

void SwinConfig::validate() const {
    if (depths.empty() || depths.size() != heads.size()) {
        throw ConfigError("swin: depths and heads must be non-empty and of equal length");
    }
    if (embed_dim == 0 || patch_size == 0 || window_size == 0 || in_channels == 0) {
        throw ConfigError("swin: embed_dim, patch_size, window_size and in_channels must be positive");
    }
    if (!(mlp_ratio > 0.0)) {
        throw ConfigError("swin: mlp_ratio must be positive");
    }
    for (std::size_t s = 0; s < heads.size(); ++s) {
        if (heads[s] == 0 || stage_channels(s) % heads[s] != 0) {
            throw ConfigError("swin: stage " + std::to_string(s) + " has " + std::to_string(stage_channels(s)) +
                              " channels, not divisible by " + std::to_string(heads[s]) + " heads");
        }
    }
}

std::size_t SwinConfig::mlp_hidden(std::size_t stage) const {
    return static_cast<std::size_t>(std::lround(mlp_ratio * static_cast<double>(stage_channels(stage))));
}

WindowLayout window_layout(std::size_t height, std::size_t width, std::size_t window, bool shifted) {
    if (height == 0 || width == 0 || window == 0) {
        throw ValidationError("window_layout: empty grid or window");
    }
    WindowLayout layout;
    layout.height = height;
    layout.width = width;
    layout.window = window;
    if (std::min(height, width) <= window) {
        layout.window = std::min(height, width);
        shifted = false;
    }
    layout.shift = shifted ? layout.window / 2 : 0;
    layout.padded_height = round_up(height, layout.window);
    layout.padded_width = round_up(width, layout.window);
    return layout;
}

Tensor replicate_channels(const Tensor& slice, std::size_t channels) {
    std::size_t h = 0;
    std::size_t w = 0;
    if (slice.rank() == 2) {
        h = slice.dim(0);
        w = slice.dim(1);
    } else if (slice.rank() == 3 && slice.dim(0) == 1) {
        h = slice.dim(1);
        w = slice.dim(2);
    } else {
        throw ValidationError("replicate_channels: expected a single-channel slice, got " + shape_str(slice.shape()));
    }
    std::vector<Index> index(channels * h * w);
    for (std::size_t i = 0; i < index.size(); ++i) {
        index[i] = static_cast<Index>(i % (h * w));
    }
    return ops::gather(slice, share(std::move(index)), {channels, h, w});
}

TokenGrid patch_embed(const Tensor& image, const SwinConfig& cfg, const ParamStore& params,
                      const std::string& prefix) {
    if (image.rank() != 3 || image.dim(0) != cfg.in_channels) {
        throw ValidationError("patch_embed: expected [" + std::to_string(cfg.in_channels) + ", H, W], got " +
                              shape_str(image.shape()));
    }
    const std::size_t p = cfg.patch_size;
    const std::size_t channels = image.dim(0);
    const std::size_t height = image.dim(1);
    const std::size_t width = image.dim(2);
    if (height % p != 0 || width % p != 0 || height == 0 || width == 0) {
        throw ValidationError("patch_embed: " + std::to_string(height) + "x" + std::to_string(width) +
                              " is not divisible by patch size " + std::to_string(p));
    }
    const std::size_t gh = height / p;
    const std::size_t gw = width / p;
    const std::size_t dim = cfg.patch_dim();
    std::vector<Index> index(gh * gw * dim);
    for (std::size_t gy = 0; gy < gh; ++gy) {
        for (std::size_t gx = 0; gx < gw; ++gx) {
            Index* out = index.data() + (gy * gw + gx) * dim;
            for (std::size_t c = 0; c < channels; ++c) {
                for (std::size_t ky = 0; ky < p; ++ky) {
                    for (std::size_t kx = 0; kx < p; ++kx) {
                        *out++ = static_cast<Index>((c * height + gy * p + ky) * width + gx * p + kx);
                    }
                }
            }
        }
    }
    const Tensor patches = ops::gather(image, share(std::move(index)), {gh, gw, dim});
    const Tensor projected =
        ops::linear(patches, params.at(prefix + "patch_embed.proj.weight"), params.at(prefix + "patch_embed.proj.bias"));
    return {ops::layer_norm(projected, params.at(prefix + "patch_embed.norm.weight"),
                            params.at(prefix + "patch_embed.norm.bias")),
            0};
}

Tensor window_partition(const Tensor& grid, const WindowLayout& layout) {
    require_grid(grid, "window_partition");
    if (grid.dim(0) != layout.height || grid.dim(1) != layout.width) {
        throw ValidationError("window_partition: grid does not match layout");
    }
    const std::size_t c = grid.dim(2);
    const std::size_t win = layout.window;
    const std::size_t t = layout.tokens_per_window();
    std::vector<Index> index(layout.n_windows() * t * c);
    for (std::size_t wy = 0; wy < layout.windows_y(); ++wy) {
        for (std::size_t wx = 0; wx < layout.windows_x(); ++wx) {
            for (std::size_t ty = 0; ty < win; ++ty) {
                const std::size_t y = unroll(wy * win + ty, layout.shift, layout.padded_height);
                for (std::size_t tx = 0; tx < win; ++tx) {
                    const std::size_t x = unroll(wx * win + tx, layout.shift, layout.padded_width);
                    Index* out = index.data() + ((wy * layout.windows_x() + wx) * t + ty * win + tx) * c;
                    const bool inside = y < layout.height && x < layout.width;
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        out[ch] = inside ? static_cast<Index>((y * layout.width + x) * c + ch) : -1;
                    }
                }
            }
        }
    }
    return ops::gather(grid, share(std::move(index)), {layout.n_windows(), t, c});
}

Tensor window_unpartition(const Tensor& windows, const WindowLayout& layout, std::size_t channels) {
    const std::size_t win = layout.window;
    const std::size_t t = layout.tokens_per_window();
    if (windows.rank() != 3 || windows.dim(0) != layout.n_windows() || windows.dim(1) != t ||
        windows.dim(2) != channels) {
        throw ValidationError("window_unpartition: windows do not match layout");
    }
    std::vector<Index> index(layout.height * layout.width * channels);
    for (std::size_t y = 0; y < layout.height; ++y) {
        const std::size_t py = (y + layout.padded_height - layout.shift) % layout.padded_height;
        for (std::size_t x = 0; x < layout.width; ++x) {
            const std::size_t px = (x + layout.padded_width - layout.shift) % layout.padded_width;
            const std::size_t w_index = (py / win) * layout.windows_x() + px / win;
            const std::size_t token = (py % win) * win + px % win;
            Index* out = index.data() + (y * layout.width + x) * channels;
            for (std::size_t ch = 0; ch < channels; ++ch) {
                out[ch] = static_cast<Index>((w_index * t + token) * channels + ch);
            }
        }
    }
    return ops::gather(windows, share(std::move(index)), {layout.height, layout.width, channels});
}

std::shared_ptr<const std::vector<double>> shifted_window_mask(const WindowLayout& layout) {
    if (layout.shift == 0) {
        return nullptr;
    }
    const std::size_t win = layout.window;
    const std::size_t s = layout.shift;
    auto region = [&](std::size_t p, std::size_t padded) -> int {
        if (p < padded - win) {
            return 0;
        }
        return p < padded - s ? 1 : 2;
    };
    const std::size_t t = layout.tokens_per_window();
    auto mask = std::make_shared<std::vector<double>>(layout.n_windows() * t * t, 0.0);
    std::vector<int> label(t);
    for (std::size_t wy = 0; wy < layout.windows_y(); ++wy) {
        for (std::size_t wx = 0; wx < layout.windows_x(); ++wx) {
            for (std::size_t ty = 0; ty < win; ++ty) {
                for (std::size_t tx = 0; tx < win; ++tx) {
                    label[ty * win + tx] = region(wy * win + ty, layout.padded_height) * 3 +
                                           region(wx * win + tx, layout.padded_width);
                }
            }
            double* m = mask->data() + (wy * layout.windows_x() + wx) * t * t;
            for (std::size_t i = 0; i < t; ++i) {
                for (std::size_t j = 0; j < t; ++j) {
                    if (label[i] != label[j]) {
                        m[i * t + j] = -std::numeric_limits<double>::infinity();
                    }
                }
            }
        }
    }
    return mask;
}

Tensor relative_position_bias(const Tensor& table, std::size_t table_window, std::size_t window,
                              std::size_t heads) {
    const std::size_t side = 2 * table_window - 1;
    if (table.rank() != 2 || table.dim(0) != side * side || table.dim(1) != heads) {
        throw ConfigError("relative position bias table " + shape_str(table.shape()) + " does not match window " +
                          std::to_string(table_window) + " and " + std::to_string(heads) + " heads");
    }
    if (window > table_window) {
        throw ConfigError("relative_position_bias: window exceeds table window");
    }
    const std::size_t t = window * window;
    std::vector<Index> index(heads * t * t);
    for (std::size_t i = 0; i < t; ++i) {
        const auto yi = static_cast<Index>(i / window);
        const auto xi = static_cast<Index>(i % window);
        for (std::size_t j = 0; j < t; ++j) {
            const auto yj = static_cast<Index>(j / window);
            const auto xj = static_cast<Index>(j % window);
            const auto offset = static_cast<Index>(table_window) - 1;
            const Index rel = (yi - yj + offset) * static_cast<Index>(side) + (xi - xj + offset);
            for (std::size_t h = 0; h < heads; ++h) {
                index[(h * t + i) * t + j] = rel * static_cast<Index>(heads) + static_cast<Index>(h);
            }
        }
    }
    return ops::gather(table, share(std::move(index)), {heads, t, t});
}

AttentionWeights attention_weights(const ParamStore& params, const std::string& prefix) {
    return {params.at(prefix + "qkv.weight"), params.at(prefix + "qkv.bias"),
            params.at(prefix + "relative_position_bias_table"), params.at(prefix + "proj.weight"),
            params.at(prefix + "proj.bias")};
}

Tensor window_attention(const Tensor& windows, const AttentionWeights& weights, std::size_t heads,
                        std::size_t table_window, std::size_t window,
                        std::shared_ptr<const std::vector<double>> mask, std::vector<double>* probabilities) {
    if (windows.rank() != 3) {
        throw ValidationError("window_attention: expected [n_windows, T, C], got " + shape_str(windows.shape()));
    }
    const std::size_t nw = windows.dim(0);
    const std::size_t t = windows.dim(1);
    const std::size_t c = windows.dim(2);
    if (heads == 0 || c % heads != 0) {
        throw ConfigError("window_attention: " + std::to_string(c) + " channels not divisible by " +
                          std::to_string(heads) + " heads");
    }
    if (t != window * window) {
        throw ValidationError("window_attention: token count does not match window");
    }
    const std::size_t d = c / heads;
    const Tensor qkv = ops::linear(windows, weights.qkv_weight, weights.qkv_bias);

    auto split = [&](std::size_t which) {
        std::vector<Index> index(nw * heads * t * d);
        for (std::size_t n = 0; n < nw; ++n) {
            for (std::size_t h = 0; h < heads; ++h) {
                for (std::size_t i = 0; i < t; ++i) {
                    for (std::size_t e = 0; e < d; ++e) {
                        index[((n * heads + h) * t + i) * d + e] =
                            static_cast<Index>((n * t + i) * 3 * c + which * c + h * d + e);
                    }
                }
            }
        }
        return ops::gather(qkv, share(std::move(index)), {nw * heads, t, d});
    };
    const Tensor bias = relative_position_bias(weights.bias_table, table_window, window, heads);
    const Tensor attended = ops::window_attention_core(split(0), split(1), split(2), bias, std::move(mask), heads,
                                                       1.0 / std::sqrt(static_cast<double>(d)), probabilities);

    std::vector<Index> index(nw * t * c);
    for (std::size_t n = 0; n < nw; ++n) {
        for (std::size_t i = 0; i < t; ++i) {
            for (std::size_t h = 0; h < heads; ++h) {
                for (std::size_t e = 0; e < d; ++e) {
                    index[(n * t + i) * c + h * d + e] = static_cast<Index>(((n * heads + h) * t + i) * d + e);
                }
            }
        }
    }
    const Tensor merged = ops::gather(attended, share(std::move(index)), {nw, t, c});
    return ops::linear(merged, weights.proj_weight, weights.proj_bias);
}

TokenGrid swin_block(const TokenGrid& grid, const ParamStore& params, const std::string& prefix,
                     std::size_t heads, std::size_t window, bool shifted, std::vector<double>* probabilities) {
    require_grid(grid.tokens, "swin_block");
    const Tensor& x = grid.tokens;
    const std::size_t c = grid.channels();
    const WindowLayout layout = window_layout(grid.height(), grid.width(), window, shifted);
    const AttentionWeights weights = attention_weights(params, prefix + "attn.");

    const Tensor normed = ops::layer_norm(x, params.at(prefix + "norm1.weight"), params.at(prefix + "norm1.bias"));
    const Tensor windows = window_partition(normed, layout);
    const Tensor attended = window_attention(windows, weights, heads, table_window_of(weights.bias_table),
                                             layout.window, shifted_window_mask(layout), probabilities);
    const Tensor after_attention = ops::add(x, window_unpartition(attended, layout, c));

    const Tensor normed2 =
        ops::layer_norm(after_attention, params.at(prefix + "norm2.weight"), params.at(prefix + "norm2.bias"));
    const Tensor hidden = ops::gelu(
        ops::linear(normed2, params.at(prefix + "mlp.fc1.weight"), params.at(prefix + "mlp.fc1.bias")));
    const Tensor mlp = ops::linear(hidden, params.at(prefix + "mlp.fc2.weight"), params.at(prefix + "mlp.fc2.bias"));
    return {ops::add(after_attention, mlp), grid.stage};
}

TokenGrid patch_merge(const TokenGrid& grid, const ParamStore& params, const std::string& prefix) {
    require_grid(grid.tokens, "patch_merge");
    const std::size_t h = grid.height();
    const std::size_t w = grid.width();
    const std::size_t c = grid.channels();
    const std::size_t oh = (h + 1) / 2;
    const std::size_t ow = (w + 1) / 2;
    // Concatenation order: (even row, even col), (odd, even), (even, odd), (odd, odd).
    constexpr std::size_t kOffsets[4][2] = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
    std::vector<Index> index(oh * ow * 4 * c);
    for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
            for (std::size_t part = 0; part < 4; ++part) {
                const std::size_t sy = std::min(2 * y + kOffsets[part][0], h - 1);
                const std::size_t sx = std::min(2 * x + kOffsets[part][1], w - 1);
                Index* out = index.data() + ((y * ow + x) * 4 + part) * c;
                for (std::size_t ch = 0; ch < c; ++ch) {
                    out[ch] = static_cast<Index>((sy * w + sx) * c + ch);
                }
            }
        }
    }
    const Tensor merged = ops::gather(grid.tokens, share(std::move(index)), {oh, ow, 4 * c});
    const Tensor normed =
        ops::layer_norm(merged, params.at(prefix + "norm.weight"), params.at(prefix + "norm.bias"));
    return {ops::linear(normed, params.at(prefix + "reduction.weight"), Tensor()), grid.stage + 1};
}

FeaturePyramid encode(const Tensor& slice, const SwinConfig& cfg, const ParamStore& params,
                      const std::string& prefix) {
    cfg.validate();
    const Tensor image = (slice.rank() == 3 && slice.dim(0) == cfg.in_channels)
                             ? slice
                             : replicate_channels(slice, cfg.in_channels);
    TokenGrid x = patch_embed(image, cfg, params, prefix);
    FeaturePyramid pyramid;
    for (std::size_t s = 0; s < cfg.stages(); ++s) {
        const std::string stage = prefix + "layers." + std::to_string(s) + ".";
        for (std::size_t b = 0; b < cfg.depths[s]; ++b) {
            x = swin_block(x, params, stage + "blocks." + std::to_string(b) + ".", cfg.heads[s], cfg.window_size,
                           b % 2 == 1);
        }
        const std::string norm = prefix + "norm" + std::to_string(s) + ".";
        pyramid.levels.push_back(
            {ops::layer_norm(x.tokens, params.at(norm + "weight"), params.at(norm + "bias")), s});
        if (s + 1 < cfg.stages()) {
            x = patch_merge(x, params, stage + "downsample.");
        }
    }
    return pyramid;
}

void init_swin(ParamStore& params, const SwinConfig& cfg, Rng& rng, const std::string& prefix) {
    cfg.validate();
    constexpr double kSd = 0.02;
    auto add_norm = [&](const std::string& name, std::size_t c) {
        params.add(name + "weight", init::constant({c}, 1.0));
        params.add(name + "bias", init::zeros({c}));
    };
    const std::size_t c0 = cfg.embed_dim;
    params.add(prefix + "patch_embed.proj.weight", init::truncated_normal({c0, cfg.patch_dim()}, kSd, rng));
    params.add(prefix + "patch_embed.proj.bias", init::zeros({c0}));
    add_norm(prefix + "patch_embed.norm.", c0);
    const std::size_t table_side = 2 * cfg.window_size - 1;
    for (std::size_t s = 0; s < cfg.stages(); ++s) {
        const std::size_t c = cfg.stage_channels(s);
        const std::size_t hidden = cfg.mlp_hidden(s);
        const std::string stage = prefix + "layers." + std::to_string(s) + ".";
        for (std::size_t b = 0; b < cfg.depths[s]; ++b) {
            const std::string block = stage + "blocks." + std::to_string(b) + ".";
            add_norm(block + "norm1.", c);
            params.add(block + "attn.qkv.weight", init::truncated_normal({3 * c, c}, kSd, rng));
            params.add(block + "attn.qkv.bias", init::zeros({3 * c}));
            params.add(block + "attn.relative_position_bias_table",
                       init::truncated_normal({table_side * table_side, cfg.heads[s]}, kSd, rng));
            params.add(block + "attn.proj.weight", init::truncated_normal({c, c}, kSd, rng));
            params.add(block + "attn.proj.bias", init::zeros({c}));
            add_norm(block + "norm2.", c);
            params.add(block + "mlp.fc1.weight", init::truncated_normal({hidden, c}, kSd, rng));
            params.add(block + "mlp.fc1.bias", init::zeros({hidden}));
            params.add(block + "mlp.fc2.weight", init::truncated_normal({c, hidden}, kSd, rng));
            params.add(block + "mlp.fc2.bias", init::zeros({c}));
        }
        add_norm(prefix + "norm" + std::to_string(s) + ".", c);
        if (s + 1 < cfg.stages()) {
            add_norm(stage + "downsample.norm.", 4 * c);
            params.add(stage + "downsample.reduction.weight", init::truncated_normal({2 * c, 4 * c}, kSd, rng));
        }
    }
}

Tensor tokens_to_map(const Tensor& tokens) {
    require_grid(tokens, "tokens_to_map");
    const std::size_t h = tokens.dim(0);
    const std::size_t w = tokens.dim(1);
    const std::size_t c = tokens.dim(2);
    std::vector<Index> index(c * h * w);
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < h * w; ++i) {
            index[ch * h * w + i] = static_cast<Index>(i * c + ch);
        }
    }
    return ops::gather(tokens, share(std::move(index)), {c, h, w});
}

Tensor map_to_tokens(const Tensor& map) {
    if (map.rank() != 3) {
        throw ValidationError("map_to_tokens: expected [C, h, w], got " + shape_str(map.shape()));
    }
    const std::size_t c = map.dim(0);
    const std::size_t hw = map.dim(1) * map.dim(2);
    std::vector<Index> index(c * hw);
    for (std::size_t i = 0; i < hw; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            index[i * c + ch] = static_cast<Index>(ch * hw + i);
        }
    }
    return ops::gather(map, share(std::move(index)), {map.dim(1), map.dim(2), c});
}

}  // namespace swintempo
