#include "swintempo/params.hpp"

#include "swintempo/errors.hpp"

namespace swintempo {

Tensor& ParamStore::add(const std::string& name, Tensor value) {
    if (!value.defined()) {
        throw ValidationError("ParamStore: undefined tensor for '" + name + "'");
    }
    value.set_requires_grad(true);
    auto [it, inserted] = tensors_.emplace(name, std::move(value));
    if (!inserted) {
        throw ValidationError("ParamStore: duplicate parameter '" + name + "'");
    }
    return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) {
        throw ConfigError("missing parameter '" + name + "'");
    }
    return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) {
        throw ConfigError("missing parameter '" + name + "'");
    }
    return it->second;
}

bool ParamStore::has_prefix(const std::string& prefix) const {
    auto it = tensors_.lower_bound(prefix);
    return it != tensors_.end() && it->first.compare(0, prefix.size(), prefix) == 0;
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(tensors_.size());
    for (const auto& [name, _] : tensors_) {
        out.push_back(name);
    }
    return out;
}

std::size_t ParamStore::element_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) {
        n += t.size();
    }
    return n;
}

void ParamStore::zero_grad() {
    for (auto& [_, t] : tensors_) {
        t.zero_grad();
    }
}

namespace init {

Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }

Tensor constant(Shape shape, double value) { return Tensor(std::move(shape), value); }

Tensor truncated_normal(Shape shape, double sd, Rng& rng) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) {
        x = sd * rng.truncated_normal();
    }
    return Tensor(std::move(shape), std::move(v));
}

Tensor normal(Shape shape, double sd, Rng& rng) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) {
        x = rng.normal(0.0, sd);
    }
    return Tensor(std::move(shape), std::move(v));
}

}  // namespace init

}  // namespace swintempo
