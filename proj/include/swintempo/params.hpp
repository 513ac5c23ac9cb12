#pragma once

#include "swintempo/random.hpp"
#include "swintempo/tensor.hpp"

#include <map>
#include <string>
#include <vector>

namespace swintempo {

/// Named trainable tensors. Iteration order is lexicographic by name, so serialization and
/// optimizer updates are independent of registration order.
class ParamStore {
public:
    /// Registers a leaf that requires gradients. Duplicate names are rejected.
    Tensor& add(const std::string& name, Tensor value);
    const Tensor& at(const std::string& name) const;
    Tensor& at(const std::string& name);
    bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
    bool has_prefix(const std::string& prefix) const;

    std::vector<std::string> names() const;
    std::size_t size() const { return tensors_.size(); }
    std::size_t element_count() const;
    void zero_grad();

    auto begin() { return tensors_.begin(); }
    auto end() { return tensors_.end(); }
    auto begin() const { return tensors_.begin(); }
    auto end() const { return tensors_.end(); }

private:
    std::map<std::string, Tensor> tensors_;
};

namespace init {

Tensor zeros(Shape shape);
Tensor constant(Shape shape, double value);
/// Normal(0, sd) truncated to two standard deviations.
Tensor truncated_normal(Shape shape, double sd, Rng& rng);
Tensor normal(Shape shape, double sd, Rng& rng);

}  // namespace init

}  // namespace swintempo
