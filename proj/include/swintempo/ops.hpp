#pragma once

#include "swintempo/tensor.hpp"

#include <cstdint>
#include <memory>
#include <vector>

// Differentiable tensor operations. Feature maps are laid out [C, H, W]; token sets are
// [..., C] with the channel axis last.
namespace swintempo::ops {

using IndexMap = std::shared_ptr<const std::vector<std::int64_t>>;

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// scale * a + shift, element-wise.
Tensor affine(const Tensor& a, double scale, double shift);

Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
/// Exact (erf-based) Gaussian error linear unit.
Tensor gelu(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Mean of a list of scalars.
Tensor mean_of(const std::vector<Tensor>& scalars);

Tensor reshape(const Tensor& a, Shape shape);

/// out[i] = a[index[i]], or 0 where index[i] < 0.
Tensor gather(const Tensor& a, IndexMap index, Shape out_shape);

/// x [..., in] times weight [out, in] plus optional bias [out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Normalizes over the last axis, then applies per-channel gain and offset.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Normalizes a [C, H, W] map over all of its elements (one group), with per-channel
/// gain and offset. Batch-independent, so single-slice inference is well defined.
Tensor map_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Stride-1 convolution: x [Cin, H, W], weight [Cout, Cin, k, k], bias [Cout] (optional),
/// zero padding `pad` on every side.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t pad);

/// 3x3 transposed convolution, stride 2, padding 1, output padding 1: [Cin, H, W] to
/// [Cout, 2H, 2W]. weight is [Cin, Cout, 3, 3].
Tensor conv_transpose2x(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// 2x2 max pooling with stride 2 over [C, H, W]; H and W must be even.
Tensor max_pool2(const Tensor& x);

/// Concatenation along axis 0; trailing dimensions must match.
Tensor concat0(const std::vector<Tensor>& parts);

/// Batched scaled dot-product attention over windows.
///
/// q, k, v: [n_windows * heads, T, d], ordered window-major then head.
/// bias: [heads, T, T] added to every window's logits for that head.
/// mask: optional constant [n_windows, T, T] added to logits (0 or -inf); may be null.
/// Returns [n_windows * heads, T, d]. If `probabilities` is non-null it receives the
/// softmax matrices, laid out like the logits.
Tensor window_attention_core(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& bias,
                             std::shared_ptr<const std::vector<double>> mask, std::size_t heads,
                             double scale, std::vector<double>* probabilities = nullptr);

/// Mean binary cross-entropy of probabilities against {0,1} targets, with predictions
/// clamped to [eps, 1 - eps].
Tensor bce_loss(const Tensor& pred, std::shared_ptr<const std::vector<double>> target,
                double eps = 1e-7);

/// Mean binary cross-entropy evaluated on logits in a numerically stable form.
/// Gradient with respect to each logit is (sigmoid(x) - y) / N.
Tensor bce_with_logits(const Tensor& logits, std::shared_ptr<const std::vector<double>> target);

/// While alive, folds every ReLU sign, max-pool selection and probability clamp evaluated on
/// the calling thread into a hash. Equal hashes mean two forward passes ran in the same
/// piecewise-smooth region of the network.
class ActivationPattern {
public:
    ActivationPattern();
    ~ActivationPattern();
    ActivationPattern(const ActivationPattern&) = delete;
    ActivationPattern& operator=(const ActivationPattern&) = delete;

    std::uint64_t value() const { return hash_; }
    void mix(std::uint64_t v) { hash_ = (hash_ ^ v) * 0x100000001b3ULL; }
    static ActivationPattern* active();

private:
    std::uint64_t hash_ = 0xcbf29ce484222325ULL;
    ActivationPattern* previous_;
};

}  // namespace swintempo::ops
