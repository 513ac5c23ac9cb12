#include "swintempo/temporal_gru.hpp"

#include "swintempo/errors.hpp"
#include "swintempo/ops.hpp"

#include <cmath>

namespace swintempo {

HiddenState init_hidden(std::size_t channels, std::size_t height, std::size_t width) {
    return {Tensor({channels, height, width}, 0.0), -1};
}

HiddenState gru_step(const Tensor& x, const HiddenState& h, const ParamStore& params, long slice_index,
                     const std::string& prefix, GruGates* gates) {
    const Tensor& state = h.state;
    if (x.rank() != 3 || state.rank() != 3 || x.dim(1) != state.dim(1) || x.dim(2) != state.dim(2)) {
        throw ValidationError("gru_step: input " + shape_str(x.shape()) + " incompatible with state " +
                              shape_str(state.shape()));
    }
    if (slice_index <= h.slice_index_last) {
        throw ValidationError("gru_step: slice index " + std::to_string(slice_index) +
                              " does not follow " + std::to_string(h.slice_index_last));
    }
    const Tensor xh = ops::concat0({x, state});
    const Tensor z = ops::sigmoid(ops::conv2d(xh, params.at(prefix + "conv_z.weight"), params.at(prefix + "conv_z.bias"), 1));
    const Tensor r = ops::sigmoid(ops::conv2d(xh, params.at(prefix + "conv_r.weight"), params.at(prefix + "conv_r.bias"), 1));
    const Tensor candidate = ops::tanh(ops::conv2d(ops::concat0({x, ops::mul(r, state)}),
                                                   params.at(prefix + "conv_h.weight"),
                                                   params.at(prefix + "conv_h.bias"), 1));
    // (1 - z) * h + z * h~ = h + z * (h~ - h)
    const Tensor next = ops::add(state, ops::mul(z, ops::sub(candidate, state)));
    if (gates) {
        *gates = {z, r, candidate};
    }
    return {next, slice_index};
}

void init_gru(ParamStore& params, std::size_t input_channels, std::size_t hidden_channels, Rng& rng,
              const std::string& prefix) {
    const std::size_t in = input_channels + hidden_channels;
    const double sd = std::sqrt(1.0 / static_cast<double>(in * 9));
    for (const char* gate : {"conv_z", "conv_r", "conv_h"}) {
        params.add(prefix + gate + ".weight", init::normal({hidden_channels, in, 3, 3}, sd, rng));
        params.add(prefix + gate + ".bias", init::zeros({hidden_channels}));
    }
}

}  // namespace swintempo
