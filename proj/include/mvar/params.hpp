#pragma once

#include <map>
#include <string>
#include <vector>

#include "mvar/dense.hpp"
#include "mvar/util.hpp"

namespace mvar::num {

struct NamedTensor {
    std::string name;
    DenseMatrix value;
};

/// Ordered collection of named parameter tensors. Registration order is the
/// canonical order for initialization, optimizer state and serialization.
class ParamSet {
public:
    DenseMatrix& add(const std::string& name, DenseMatrix value);
    bool has(const std::string& name) const;
    DenseMatrix& at(const std::string& name);
    const DenseMatrix& at(const std::string& name) const;

    size_t count() const { return tensors_.size(); }
    size_t scalar_count() const;
    NamedTensor& tensor(size_t i) { return tensors_[i]; }
    const NamedTensor& tensor(size_t i) const { return tensors_[i]; }

    std::vector<NamedTensor>& tensors() { return tensors_; }
    const std::vector<NamedTensor>& tensors() const { return tensors_; }

private:
    std::vector<NamedTensor> tensors_;
    std::map<std::string, size_t> index_;
};

/// Gradients aligned with a ParamSet's registration order.
using GradSet = std::vector<DenseMatrix>;

GradSet zero_grads(const ParamSet& params);

/// Fill a tensor with uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) draws.
void init_uniform_fan_in(DenseMatrix& m, int fan_in, Rng& rng);

}  // namespace mvar::num
