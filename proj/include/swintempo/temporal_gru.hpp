#pragma once

#include "swintempo/params.hpp"
#include "swintempo/random.hpp"
#include "swintempo/tensor.hpp"

#include <cstddef>
#include <string>

namespace swintempo {

/// Recurrent state carried across the slices of one volume.
struct HiddenState {
    Tensor state;  // [C_b, h_b, w_b]
    long slice_index_last = -1;
};

HiddenState init_hidden(std::size_t channels, std::size_t height, std::size_t width);

/// Gate activations of one step, exposed for inspection.
struct GruGates {
    Tensor update;     // z
    Tensor reset;      // r
    Tensor candidate;  // h~
};

/// Convolutional GRU update with 3x3 gates over [x; h]:
///   z = sigmoid(conv_z([x; h])), r = sigmoid(conv_r([x; h])),
///   h~ = tanh(conv_h([x; r * h])), h' = (1 - z) * h + z * h~.
/// `slice_index` must exceed the state's last index.
HiddenState gru_step(const Tensor& x, const HiddenState& h, const ParamStore& params, long slice_index,
                     const std::string& prefix = "gru.", GruGates* gates = nullptr);

/// Registers gate convolutions for `input_channels` inputs and `hidden_channels` state channels.
void init_gru(ParamStore& params, std::size_t input_channels, std::size_t hidden_channels, Rng& rng,
              const std::string& prefix = "gru.");

}  // namespace swintempo
