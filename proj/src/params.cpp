#include "mvar/params.hpp"

#include <cmath>

namespace mvar::num {

DenseMatrix& ParamSet::add(const std::string& name, DenseMatrix value) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    index_[name] = tensors_.size();
    tensors_.push_back(NamedTensor{name, std::move(value)});
    return tensors_.back().value;
}

bool ParamSet::has(const std::string& name) const { return index_.count(name) != 0; }

DenseMatrix& ParamSet::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter name: " + name);
    return tensors_[it->second].value;
}

const DenseMatrix& ParamSet::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter name: " + name);
    return tensors_[it->second].value;
}

size_t ParamSet::scalar_count() const {
    size_t n = 0;
    for (const auto& t : tensors_) n += t.value.size();
    return n;
}

GradSet zero_grads(const ParamSet& params) {
    GradSet g;
    g.reserve(params.count());
    for (const auto& t : params.tensors())
        g.emplace_back(t.value.rows, t.value.cols, 0.0);
    return g;
}

void init_uniform_fan_in(DenseMatrix& m, int fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in < 1 ? 1 : fan_in));
    for (double& x : m.v) x = rng.uniform(-bound, bound);
}

}  // namespace mvar::num
