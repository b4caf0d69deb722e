#include "mvar/dense.hpp"

#include <algorithm>
#include <cmath>

namespace mvar::num {

bool DenseMatrix::all_finite() const {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

DenseMatrix matmul_plain(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols != b.rows)
        throw ShapeError("matmul: lhs " + a.shape_str() + " rhs " + b.shape_str());
    DenseMatrix c(a.rows, b.cols, 0.0);
    for (int i = 0; i < a.rows; ++i) {
        const double* ar = a.row(i);
        double* cr = c.row(i);
        for (int k = 0; k < a.cols; ++k) {
            const double aik = ar[k];
            const double* br = b.row(k);
            for (int j = 0; j < b.cols; ++j) cr[j] += aik * br[j];
        }
    }
    return c;
}

DenseMatrix transpose_plain(const DenseMatrix& a) {
    DenseMatrix t(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
    return t;
}

double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
    if (!a.same_shape(b))
        throw ShapeError("max_abs_diff: " + a.shape_str() + " vs " + b.shape_str());
    double m = 0.0;
    for (size_t i = 0; i < a.v.size(); ++i) m = std::max(m, std::fabs(a.v[i] - b.v[i]));
    return m;
}

double stable_sum(const double* p, size_t n) {
    if (n == 0) return 0.0;
    if (n == 1) return p[0];
    static thread_local std::vector<double> scratch;
    scratch.assign(p, p + n);
    std::sort(scratch.begin(), scratch.end());
    double s = 0.0;
    for (double x : scratch) s += x;
    return s;
}

double stable_sum(const std::vector<double>& v) { return stable_sum(v.data(), v.size()); }

}  // namespace mvar::num
