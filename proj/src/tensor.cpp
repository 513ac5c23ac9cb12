#include "swintempo/tensor.hpp"

#include "swintempo/errors.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace swintempo {

namespace {

thread_local bool g_grad_enabled = true;

}  // namespace

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) {
            out << ',';
        }
        out << shape[i];
    }
    out << ']';
    return out.str();
}

void detail::Node::ensure_grad() {
    if (grad.size() != value.size()) {
        grad.assign(value.size(), 0.0);
    }
}

Tensor::Tensor(Shape shape, double fill) : node_(std::make_shared<detail::Node>()) {
    node_->value.assign(numel(shape), fill);
    node_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : node_(std::make_shared<detail::Node>()) {
    if (numel(shape) != values.size()) {
        throw ValidationError("Tensor: shape " + shape_str(shape) + " does not match " +
                              std::to_string(values.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
}

const Shape& Tensor::shape() const {
    if (!node_) {
        throw ValidationError("Tensor: undefined tensor");
    }
    return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) {
        throw ValidationError("Tensor::dim: axis out of range for " + shape_str(s));
    }
    return s[axis];
}

std::size_t Tensor::size() const { return node_ ? node_->value.size() : 0; }

std::span<const double> Tensor::values() const {
    if (!node_) {
        throw ValidationError("Tensor: undefined tensor");
    }
    return node_->value;
}

std::span<double> Tensor::mutable_values() {
    if (!node_) {
        throw ValidationError("Tensor: undefined tensor");
    }
    return node_->value;
}

double Tensor::item() const {
    if (size() != 1) {
        throw ValidationError("Tensor::item: tensor has " + std::to_string(size()) + " elements");
    }
    return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
    if (!node_) {
        throw ValidationError("Tensor: undefined tensor");
    }
    node_->requires_grad = flag;
    return *this;
}

std::span<const double> Tensor::grad() const {
    if (!node_) {
        throw ValidationError("Tensor: undefined tensor");
    }
    node_->ensure_grad();
    return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
    if (!node_) {
        throw ValidationError("Tensor: undefined tensor");
    }
    node_->ensure_grad();
    return node_->grad;
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }

void Tensor::zero_grad() {
    if (node_ && !node_->grad.empty()) {
        std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->value); }

void Tensor::backward() const {
    if (size() != 1) {
        throw ValidationError("Tensor::backward: only scalar outputs can seed backpropagation");
    }
    if (!node_->requires_grad) {
        return;
    }

    // Iterative post-order DFS gives a topological order (parents before children).
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* parent = node->parents[next++].get();
            if (parent && parent->requires_grad && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    node_->ensure_grad();
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = *it;
        if (node->backward && !node->grad.empty()) {
            node->backward(*node);
        }
    }
    // Release the graph: interior nodes drop their inputs and closures.
    for (detail::Node* node : order) {
        if (node->backward) {
            node->backward = nullptr;
            node->parents.clear();
            node->grad.clear();
            node->grad.shrink_to_fit();
        }
    }
}

namespace {

template <class Range>
Tensor finish_op(Shape shape, std::vector<double> value, const Range& inputs,
                 std::function<void(detail::Node&)> backward) {
    Tensor out(std::move(shape), std::move(value));
    if (!g_grad_enabled) {
        return out;
    }
    bool any = false;
    for (const Tensor& t : inputs) {
        if (t.requires_grad()) {
            any = true;
            break;
        }
    }
    if (!any) {
        return out;
    }
    detail::Node* node = out.node();
    node->requires_grad = true;
    node->backward = std::move(backward);
    for (const Tensor& t : inputs) {
        node->parents.push_back(t.node_ptr());
    }
    return out;
}

}  // namespace

Tensor make_op_result(Shape shape, std::vector<double> value, std::initializer_list<Tensor> inputs,
                      std::function<void(detail::Node&)> backward) {
    return finish_op(std::move(shape), std::move(value), inputs, std::move(backward));
}

Tensor make_op_result_list(Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs,
                           std::function<void(detail::Node&)> backward) {
    return finish_op(std::move(shape), std::move(value), inputs, std::move(backward));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace swintempo
