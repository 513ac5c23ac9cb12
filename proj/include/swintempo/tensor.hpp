#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace swintempo {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until something flows into it
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads self.grad and accumulates into parents' grads.
    std::function<void(Node& self)> backward;

    void ensure_grad();
};

}  // namespace detail

/// Dense row-major double tensor with reverse-mode differentiation.
///
/// A Tensor is a shared handle: copies alias the same storage. Leaves created with
/// requires_grad act as parameters and accumulate gradients across backward() calls
/// until zero_grad(). Results of ops record their inputs only while gradient recording
/// is enabled on the calling thread (see NoGradGuard).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double value) { return Tensor(Shape{1}, std::vector<double>{value}); }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const;
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const { return shape().size(); }
    std::size_t size() const;

    std::span<const double> values() const;
    std::span<double> mutable_values();
    double item() const;
    double operator[](std::size_t index) const { return values()[index]; }

    bool requires_grad() const;
    Tensor& set_requires_grad(bool flag);
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    bool has_grad() const;
    void zero_grad();

    /// Copy of the value with no graph history.
    Tensor detach() const;

    /// Backpropagates from a single-element tensor, seeding d(self)/d(self) = 1. The
    /// recorded graph below this tensor is released afterwards.
    void backward() const;

    detail::Node* node() const { return node_.get(); }
    const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

private:
    friend Tensor make_op_result(Shape, std::vector<double>, std::initializer_list<Tensor>,
                                 std::function<void(detail::Node&)>);
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

    std::shared_ptr<detail::Node> node_;
};

/// Creates an op output. The backward closure is attached only if recording is on and at
/// least one input requires a gradient.
Tensor make_op_result(Shape shape, std::vector<double> value, std::initializer_list<Tensor> inputs,
                      std::function<void(detail::Node&)> backward);

/// Result with an explicit list of inputs (for variadic ops like concat).
Tensor make_op_result_list(Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs,
                           std::function<void(detail::Node&)> backward);

bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

}  // namespace swintempo
