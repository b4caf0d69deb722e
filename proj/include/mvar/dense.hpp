#pragma once

#include <string>
#include <vector>

#include "mvar/util.hpp"

namespace mvar::num {

/// Row-major dense matrix of doubles. All model arithmetic is 64-bit; 32-bit
/// floats appear only in file payloads.
struct DenseMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    DenseMatrix() = default;
    DenseMatrix(int r, int c, double fill = 0.0) : rows(r), cols(c) {
        if (r < 1 || c < 1)
            throw ShapeError("matrix dims must be >= 1, got " + std::to_string(r) + "x" +
                             std::to_string(c));
        v.assign(static_cast<size_t>(r) * c, fill);
    }

    static DenseMatrix from_rows(const std::vector<std::vector<double>>& rows_in) {
        if (rows_in.empty() || rows_in.front().empty())
            throw ShapeError("from_rows: empty input");
        DenseMatrix m(static_cast<int>(rows_in.size()), static_cast<int>(rows_in.front().size()));
        for (int r = 0; r < m.rows; ++r) {
            if (static_cast<int>(rows_in[r].size()) != m.cols)
                throw ShapeError("from_rows: ragged input");
            for (int c = 0; c < m.cols; ++c) m.at(r, c) = rows_in[r][c];
        }
        return m;
    }

    double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
    double* row(int r) { return v.data() + static_cast<size_t>(r) * cols; }
    const double* row(int r) const { return v.data() + static_cast<size_t>(r) * cols; }

    size_t size() const { return v.size(); }
    bool same_shape(const DenseMatrix& o) const { return rows == o.rows && cols == o.cols; }
    std::string shape_str() const { return std::to_string(rows) + "x" + std::to_string(cols); }

    bool all_finite() const;
};

// Plain (untaped) helpers used by optimizer state, oracles and I/O glue.
DenseMatrix matmul_plain(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix transpose_plain(const DenseMatrix& a);
double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b);

/// Sum with a canonical (value-sorted) accumulation order, so the result does
/// not depend on how the inputs happen to be arranged.
double stable_sum(const double* p, size_t n);
double stable_sum(const std::vector<double>& v);

}  // namespace mvar::num
