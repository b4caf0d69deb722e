#pragma once

#include <functional>

#include "mvar/params.hpp"

namespace mvar::num {

/// Scalar loss evaluated against the current parameter values.
using LossFn = std::function<double(const ParamSet&)>;

/// Central-difference gradients of f with respect to every scalar in params,
/// perturbing one scalar at a time: (f(x+h) - f(x-h)) / (2h). This path never
/// touches the tape; it is the independent oracle the tape is checked against.
/// Throws NumericError if f returns a non-finite value.
GradSet finite_diff_gradients(const LossFn& f, ParamSet& params, double h = 1e-5);

struct GradCheckEntry {
    std::string name;
    int row = 0, col = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    size_t compared = 0;
    GradCheckEntry worst;
    bool ok(double tol) const { return compared > 0 && max_rel_err <= tol; }
};

/// Elementwise comparison with an absolute floor: entries agreeing within
/// abs_floor pass outright, every other entry is scored by
/// |a - b| / max(|a|, |b|).
GradCheckReport compare_gradients(const ParamSet& params, const GradSet& analytic,
                                  const GradSet& numeric, double abs_floor = 1e-8);

}  // namespace mvar::num
