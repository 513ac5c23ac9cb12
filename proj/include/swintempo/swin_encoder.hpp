#pragma once

#include "swintempo/ops.hpp"
#include "swintempo/params.hpp"
#include "swintempo/random.hpp"
#include "swintempo/tensor.hpp"

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

namespace swintempo {

/// Hierarchical windowed-attention encoder hyperparameters.
struct SwinConfig {
    std::size_t embed_dim = 96;
    std::vector<std::size_t> depths{2, 2, 6, 2};
    std::vector<std::size_t> heads{3, 6, 12, 24};
    std::size_t window_size = 7;
    std::size_t patch_size = 4;
    double mlp_ratio = 4.0;
    std::size_t in_channels = 3;

    /// C=8, depths (1,1,2,1), heads (1,2,4,8), w=4.
    static SwinConfig tiny();

    void validate() const;
    std::size_t stages() const { return depths.size(); }
    std::size_t stage_channels(std::size_t stage) const { return embed_dim << stage; }
    std::size_t patch_dim() const { return patch_size * patch_size * in_channels; }
    std::size_t mlp_hidden(std::size_t stage) const;
    /// Input extent must be a multiple of this.
    std::size_t downsampling() const { return patch_size << (stages() - 1); }
};

/// Token grid [h, w, C] of one stage.
struct TokenGrid {
    Tensor tokens;
    std::size_t stage = 0;

    std::size_t height() const { return tokens.dim(0); }
    std::size_t width() const { return tokens.dim(1); }
    std::size_t channels() const { return tokens.dim(2); }
};

/// One token grid per stage, scales 1/p, 1/2p, ...
struct FeaturePyramid {
    std::vector<TokenGrid> levels;
};

/// Window geometry for one block on an h x w grid. The window shrinks to the grid when the
/// grid is smaller, in which case no shift is applied.
struct WindowLayout {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t window = 0;
    std::size_t shift = 0;
    std::size_t padded_height = 0;
    std::size_t padded_width = 0;

    std::size_t windows_y() const { return padded_height / window; }
    std::size_t windows_x() const { return padded_width / window; }
    std::size_t n_windows() const { return windows_y() * windows_x(); }
    std::size_t tokens_per_window() const { return window * window; }
};

WindowLayout window_layout(std::size_t height, std::size_t width, std::size_t window, bool shifted);

/// Replicates a grayscale [H, W] (or [1, H, W]) slice to `channels` channels.
Tensor replicate_channels(const Tensor& slice, std::size_t channels);

/// [in_ch, H, W] -> grid [H/p, W/p, C]: linear map of each flattened (c, ky, kx) patch,
/// then layer normalization.
TokenGrid patch_embed(const Tensor& image, const SwinConfig& cfg, const ParamStore& params,
                      const std::string& prefix = "swin.");

/// grid [h, w, C] -> windows [n_windows, window^2, C] after a cyclic shift of -shift in
/// both axes. Zero tokens fill the padding up to a multiple of the window.
Tensor window_partition(const Tensor& grid, const WindowLayout& layout);

/// Exact inverse of window_partition: reverses the shift and crops the padding.
Tensor window_unpartition(const Tensor& windows, const WindowLayout& layout, std::size_t channels);

/// Additive [n_windows, T, T] mask (0 or -inf) separating regions that the cyclic shift
/// brought together. Null when the layout is unshifted.
std::shared_ptr<const std::vector<double>> shifted_window_mask(const WindowLayout& layout);

/// [heads, T, T] bias gathered from a [(2w-1)^2, heads] table. `table_window` is the window
/// the table was sized for; `window` (<= table_window) is the one in use.
Tensor relative_position_bias(const Tensor& table, std::size_t table_window, std::size_t window,
                              std::size_t heads);

struct AttentionWeights {
    Tensor qkv_weight;   // [3C, C]
    Tensor qkv_bias;     // [3C]
    Tensor bias_table;   // [(2w-1)^2, heads]
    Tensor proj_weight;  // [C, C]
    Tensor proj_bias;    // [C]
};

AttentionWeights attention_weights(const ParamStore& params, const std::string& prefix);

/// Multi-head self-attention within each window, with relative position bias and an
/// optional additive mask. windows [n_windows, T, C] -> same shape.
Tensor window_attention(const Tensor& windows, const AttentionWeights& weights, std::size_t heads,
                        std::size_t table_window, std::size_t window,
                        std::shared_ptr<const std::vector<double>> mask,
                        std::vector<double>* probabilities = nullptr);

/// LN -> (S)W-MSA -> residual, then LN -> MLP -> residual.
TokenGrid swin_block(const TokenGrid& grid, const ParamStore& params, const std::string& prefix,
                     std::size_t heads, std::size_t window, bool shifted,
                     std::vector<double>* probabilities = nullptr);

/// [h, w, C] -> [ceil(h/2), ceil(w/2), 2C]. Odd extents are padded by replicating the last
/// row/column.
TokenGrid patch_merge(const TokenGrid& grid, const ParamStore& params, const std::string& prefix);

/// Full encoder. `slice` is [H, W] grayscale or [in_ch, H, W].
FeaturePyramid encode(const Tensor& slice, const SwinConfig& cfg, const ParamStore& params,
                      const std::string& prefix = "swin.");

/// Registers all encoder parameters under `prefix`.
void init_swin(ParamStore& params, const SwinConfig& cfg, Rng& rng, const std::string& prefix = "swin.");

/// [h, w, C] -> [C, h, w].
Tensor tokens_to_map(const Tensor& tokens);
/// [C, h, w] -> [h, w, C].
Tensor map_to_tokens(const Tensor& map);

}  // namespace swintempo
