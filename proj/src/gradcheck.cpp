#include "mvar/gradcheck.hpp"

#include <cmath>

namespace mvar::num {

GradSet finite_diff_gradients(const LossFn& f, ParamSet& params, double h) {
    if (!(h > 0.0)) throw NumericError("finite_diff_gradients: h must be positive");
    GradSet grads = zero_grads(params);
    for (size_t t = 0; t < params.count(); ++t) {
        DenseMatrix& m = params.tensor(t).value;
        for (size_t i = 0; i < m.v.size(); ++i) {
            const double saved = m.v[i];
            m.v[i] = saved + h;
            const double up = f(params);
            m.v[i] = saved - h;
            const double down = f(params);
            m.v[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down))
                throw NumericError("finite_diff_gradients: non-finite loss at " +
                                   params.tensor(t).name);
            grads[t].v[i] = (up - down) / (2.0 * h);
        }
    }
    return grads;
}

GradCheckReport compare_gradients(const ParamSet& params, const GradSet& analytic,
                                  const GradSet& numeric, double abs_floor) {
    if (analytic.size() != params.count() || numeric.size() != params.count())
        throw ShapeError("compare_gradients: gradient sets do not match parameter set");
    GradCheckReport rep;
    for (size_t t = 0; t < params.count(); ++t) {
        const DenseMatrix& a = analytic[t];
        const DenseMatrix& b = numeric[t];
        if (!a.same_shape(b) || !a.same_shape(params.tensor(t).value))
            throw ShapeError("compare_gradients: shape mismatch at " + params.tensor(t).name);
        for (int r = 0; r < a.rows; ++r) {
            for (int c = 0; c < a.cols; ++c) {
                const double x = a.at(r, c), y = b.at(r, c);
                const double diff = std::fabs(x - y);
                double rel = 0.0;
                if (diff > abs_floor) {
                    const double denom = std::max(std::fabs(x), std::fabs(y));
                    rel = denom > 0.0 ? diff / denom : 0.0;
                }
                ++rep.compared;
                if (rel > rep.max_rel_err) {
                    rep.max_rel_err = rel;
                    rep.worst = GradCheckEntry{params.tensor(t).name, r, c, x, y, rel};
                }
            }
        }
    }
    return rep;
}

}  // namespace mvar::num
