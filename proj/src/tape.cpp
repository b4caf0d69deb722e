#include "mvar/tape.hpp"

#include <algorithm>
#include <cmath>

namespace mvar::num {

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

/// Sum a scratch buffer in ascending value order. Equal values commute, so
/// the result is independent of the caller's element order.
double sorted_sum(std::vector<double>& scratch) {
    std::sort(scratch.begin(), scratch.end());
    double s = 0.0;
    for (double x : scratch) s += x;
    return s;
}
}  // namespace

double gelu_scalar(double x) { return x * 0.5 * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad_scalar(double x) {
    const double phi_cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
    const double phi_pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
    return phi_cdf + x * phi_pdf;
}

int Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

void Tape::check(Val v) const {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
        throw NumericError("tape: dangling value handle");
}

Tape::Node& Tape::node(Val v) {
    check(v);
    return nodes_[static_cast<size_t>(v.id)];
}

const Tape::Node& Tape::node(Val v) const {
    check(v);
    return nodes_[static_cast<size_t>(v.id)];
}

const DenseMatrix& Tape::value(Val v) const { return node(v).value; }

const DenseMatrix& Tape::grad(Val v) const {
    const Node& n = node(v);
    if (n.grad.rows == 0) return zero_1x1_;
    return n.grad;
}

bool Tape::requires_grad(Val v) const { return node(v).needs_grad; }

DenseMatrix& Tape::grad_buf(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.rows == 0) n.grad = DenseMatrix(n.value.rows, n.value.cols, 0.0);
    return n.grad;
}

Val Tape::leaf(DenseMatrix value, bool requires_grad) {
    Node n;
    n.op = Op::kLeaf;
    n.value = std::move(value);
    n.needs_grad = requires_grad;
    return Val{push(std::move(n))};
}

Val Tape::matmul(Val a, Val b) {
    const DenseMatrix& av = node(a).value;
    const DenseMatrix& bv = node(b).value;
    if (av.cols != bv.rows)
        throw ShapeError("matmul: lhs " + av.shape_str() + " rhs " + bv.shape_str());
    Node n;
    n.op = Op::kMatmul;
    n.inputs = {a.id, b.id};
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    n.value = DenseMatrix(av.rows, bv.cols, 0.0);
    for (int i = 0; i < av.rows; ++i) {
        const double* ar = av.row(i);
        double* cr = n.value.row(i);
        for (int k = 0; k < av.cols; ++k) {
            const double aik = ar[k];
            const double* br = bv.row(k);
            for (int j = 0; j < bv.cols; ++j) cr[j] += aik * br[j];
        }
    }
    return Val{push(std::move(n))};
}

Val Tape::add(Val a, Val b) {
    const DenseMatrix& av = node(a).value;
    const DenseMatrix& bv = node(b).value;
    if (!av.same_shape(bv))
        throw ShapeError("add: lhs " + av.shape_str() + " rhs " + bv.shape_str());
    Node n;
    n.op = Op::kAdd;
    n.inputs = {a.id, b.id};
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    n.value = av;
    for (size_t i = 0; i < n.value.v.size(); ++i) n.value.v[i] += bv.v[i];
    return Val{push(std::move(n))};
}

Val Tape::scale(Val a, double s) {
    Node n;
    n.op = Op::kScale;
    n.inputs = {a.id};
    n.needs_grad = node(a).needs_grad;
    n.scalar = s;
    n.value = node(a).value;
    for (double& x : n.value.v) x *= s;
    return Val{push(std::move(n))};
}

Val Tape::hadamard(Val a, Val b) {
    const DenseMatrix& av = node(a).value;
    const DenseMatrix& bv = node(b).value;
    if (!av.same_shape(bv))
        throw ShapeError("hadamard: lhs " + av.shape_str() + " rhs " + bv.shape_str());
    Node n;
    n.op = Op::kHadamard;
    n.inputs = {a.id, b.id};
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    n.value = av;
    for (size_t i = 0; i < n.value.v.size(); ++i) n.value.v[i] *= bv.v[i];
    return Val{push(std::move(n))};
}

Val Tape::add_bias_row(Val a, Val bias) {
    const DenseMatrix& av = node(a).value;
    const DenseMatrix& bv = node(bias).value;
    if (bv.rows != 1 || bv.cols != av.cols)
        throw ShapeError("add_bias_row: input " + av.shape_str() + " bias " + bv.shape_str());
    Node n;
    n.op = Op::kAddBiasRow;
    n.inputs = {a.id, bias.id};
    n.needs_grad = node(a).needs_grad || node(bias).needs_grad;
    n.value = av;
    for (int r = 0; r < av.rows; ++r) {
        double* row = n.value.row(r);
        for (int c = 0; c < av.cols; ++c) row[c] += bv.v[static_cast<size_t>(c)];
    }
    return Val{push(std::move(n))};
}

Val Tape::gelu(Val a) {
    Node n;
    n.op = Op::kGelu;
    n.inputs = {a.id};
    n.needs_grad = node(a).needs_grad;
    n.value = node(a).value;
    for (double& x : n.value.v) x = gelu_scalar(x);
    return Val{push(std::move(n))};
}

Val Tape::abs(Val a) {
    Node n;
    n.op = Op::kAbs;
    n.inputs = {a.id};
    n.needs_grad = node(a).needs_grad;
    n.value = node(a).value;
    for (double& x : n.value.v) x = std::fabs(x);
    return Val{push(std::move(n))};
}

Val Tape::softmax_rows(Val a) {
    const DenseMatrix& av = node(a).value;
    Node n;
    n.op = Op::kSoftmaxRows;
    n.inputs = {a.id};
    n.needs_grad = node(a).needs_grad;
    n.value = DenseMatrix(av.rows, av.cols);
    std::vector<double> scratch(static_cast<size_t>(av.cols));
    for (int r = 0; r < av.rows; ++r) {
        const double* in = av.row(r);
        double* out = n.value.row(r);
        bool finite = true;
        double mx = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < av.cols; ++c) {
            if (std::isnan(in[c])) finite = false;
            mx = std::max(mx, in[c]);
        }
        if (!finite) {
            for (int c = 0; c < av.cols; ++c) out[c] = std::numeric_limits<double>::quiet_NaN();
            continue;
        }
        for (int c = 0; c < av.cols; ++c) out[c] = std::exp(in[c] - mx);
        std::copy(out, out + av.cols, scratch.begin());
        const double denom = sorted_sum(scratch);
        for (int c = 0; c < av.cols; ++c) out[c] /= denom;
    }
    return Val{push(std::move(n))};
}

Val Tape::layer_norm(Val a, Val gain, Val bias, double eps) {
    const DenseMatrix& av = node(a).value;
    const DenseMatrix& gv = node(gain).value;
    const DenseMatrix& bv = node(bias).value;
    if (gv.rows != 1 || gv.cols != av.cols || bv.rows != 1 || bv.cols != av.cols)
        throw ShapeError("layer_norm: input " + av.shape_str() + " gain " + gv.shape_str() +
                         " bias " + bv.shape_str());
    if (!(eps > 0.0)) throw NumericError("layer_norm: eps must be positive");
    Node n;
    n.op = Op::kLayerNorm;
    n.inputs = {a.id, gain.id, bias.id};
    n.needs_grad = node(a).needs_grad || node(gain).needs_grad || node(bias).needs_grad;
    n.scalar = eps;
    n.value = DenseMatrix(av.rows, av.cols);
    for (int r = 0; r < av.rows; ++r) {
        const double* in = av.row(r);
        double* out = n.value.row(r);
        double mean = 0.0;
        for (int c = 0; c < av.cols; ++c) mean += in[c];
        mean /= av.cols;
        double var = 0.0;
        for (int c = 0; c < av.cols; ++c) var += (in[c] - mean) * (in[c] - mean);
        var /= av.cols;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int c = 0; c < av.cols; ++c)
            out[c] = gv.v[static_cast<size_t>(c)] * (in[c] - mean) * inv +
                     bv.v[static_cast<size_t>(c)];
    }
    return Val{push(std::move(n))};
}

Val Tape::transpose(Val a) {
    Node n;
    n.op = Op::kTranspose;
    n.inputs = {a.id};
    n.needs_grad = node(a).needs_grad;
    n.value = transpose_plain(node(a).value);
    return Val{push(std::move(n))};
}

Val Tape::concat_cols(std::span<const Val> parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const int rows = node(parts[0]).value.rows;
    int cols = 0;
    bool needs = false;
    for (Val p : parts) {
        const DenseMatrix& pv = node(p).value;
        if (pv.rows != rows)
            throw ShapeError("concat_cols: row mismatch " + std::to_string(rows) + " vs " +
                             pv.shape_str());
        cols += pv.cols;
        needs = needs || node(p).needs_grad;
    }
    Node n;
    n.op = Op::kConcatCols;
    for (Val p : parts) n.inputs.push_back(p.id);
    n.needs_grad = needs;
    n.value = DenseMatrix(rows, cols);
    int off = 0;
    for (Val p : parts) {
        const DenseMatrix& pv = node(p).value;
        for (int r = 0; r < rows; ++r)
            std::copy(pv.row(r), pv.row(r) + pv.cols, n.value.row(r) + off);
        off += pv.cols;
    }
    return Val{push(std::move(n))};
}

Val Tape::concat_cols(Val a, Val b) {
    const Val parts[2] = {a, b};
    return concat_cols(std::span<const Val>(parts, 2));
}

Val Tape::slice_cols(Val a, int c0, int c1) {
    const DenseMatrix& av = node(a).value;
    if (c0 < 0 || c1 > av.cols || c0 >= c1)
        throw ShapeError("slice_cols: range [" + std::to_string(c0) + ", " + std::to_string(c1) +
                         ") of " + av.shape_str());
    Node n;
    n.op = Op::kSliceCols;
    n.inputs = {a.id};
    n.needs_grad = node(a).needs_grad;
    n.c0 = c0;
    n.c1 = c1;
    n.value = DenseMatrix(av.rows, c1 - c0);
    for (int r = 0; r < av.rows; ++r)
        std::copy(av.row(r) + c0, av.row(r) + c1, n.value.row(r));
    return Val{push(std::move(n))};
}

Val Tape::conv2d(Val image, Val kernels, Val bias, const ConvSpec& spec) {
    const DenseMatrix& x = node(image).value;
    const DenseMatrix& k = node(kernels).value;
    const DenseMatrix& b = node(bias).value;
    const int h = spec.in_h, w = spec.in_w, kh = spec.kh, kw = spec.kw, s = spec.stride;
    if (h < 1 || w < 1 || s < 1) throw ShapeError("conv2d: bad spec");
    if (kh % 2 == 0 || kw % 2 == 0)
        throw ShapeError("conv2d: kernel size must be odd, got " + std::to_string(kh) + "x" +
                         std::to_string(kw));
    if (h % s != 0 || w % s != 0)
        throw ShapeError("conv2d: input " + std::to_string(h) + "x" + std::to_string(w) +
                         " not divisible by stride " + std::to_string(s));
    if (x.cols != h * w)
        throw ShapeError("conv2d: image " + x.shape_str() + " does not match " +
                         std::to_string(h) + "x" + std::to_string(w));
    const int c_in = x.rows;
    const int c_out = k.rows;
    if (k.cols != c_in * kh * kw)
        throw ShapeError("conv2d: kernels " + k.shape_str() + " want cols " +
                         std::to_string(c_in * kh * kw));
    if (b.rows != 1 || b.cols != c_out)
        throw ShapeError("conv2d: bias " + b.shape_str() + " want 1x" + std::to_string(c_out));
    const int oh = h / s, ow = w / s;
    const int ph = (kh - 1) / 2, pw = (kw - 1) / 2;

    Node n;
    n.op = Op::kConv2d;
    n.inputs = {image.id, kernels.id, bias.id};
    n.needs_grad = node(image).needs_grad || node(kernels).needs_grad || node(bias).needs_grad;
    n.conv = spec;
    n.value = DenseMatrix(c_out, oh * ow);
    for (int co = 0; co < c_out; ++co) {
        const double* kr = k.row(co);
        double* out = n.value.row(co);
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                double acc = b.v[static_cast<size_t>(co)];
                for (int ci = 0; ci < c_in; ++ci) {
                    const double* xr = x.row(ci);
                    const double* kc = kr + ci * kh * kw;
                    for (int ky = 0; ky < kh; ++ky) {
                        const int y = oy * s + ky - ph;
                        if (y < 0 || y >= h) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int xx = ox * s + kx - pw;
                            if (xx < 0 || xx >= w) continue;
                            acc += xr[y * w + xx] * kc[ky * kw + kx];
                        }
                    }
                }
                out[oy * ow + ox] = acc;
            }
        }
    }
    return Val{push(std::move(n))};
}

Val Tape::attn_mix(Val attn, Val values) {
    const DenseMatrix& a = node(attn).value;
    const DenseMatrix& v = node(values).value;
    if (a.cols != v.rows)
        throw ShapeError("attn_mix: attn " + a.shape_str() + " values " + v.shape_str());
    Node n;
    n.op = Op::kAttnMix;
    n.inputs = {attn.id, values.id};
    n.needs_grad = node(attn).needs_grad || node(values).needs_grad;
    n.value = DenseMatrix(a.rows, v.cols);
    std::vector<double> scratch(static_cast<size_t>(a.cols));
    for (int i = 0; i < a.rows; ++i) {
        const double* ar = a.row(i);
        double* out = n.value.row(i);
        for (int c = 0; c < v.cols; ++c) {
            for (int t = 0; t < a.cols; ++t) scratch[static_cast<size_t>(t)] = ar[t] * v.at(t, c);
            out[c] = sorted_sum(scratch);
        }
    }
    return Val{push(std::move(n))};
}

Val Tape::sum_all(Val a) {
    Node n;
    n.op = Op::kSumAll;
    n.inputs = {a.id};
    n.needs_grad = node(a).needs_grad;
    n.value = DenseMatrix(1, 1);
    double s = 0.0;
    for (double x : node(a).value.v) s += x;
    n.value.v[0] = s;
    return Val{push(std::move(n))};
}

void Tape::backward(Val loss, const std::function<void(int)>& visit) {
    const Node& ln = node(loss);
    if (ln.value.rows != 1 || ln.value.cols != 1)
        throw ShapeError("backward: loss must be 1x1, got " + ln.value.shape_str());
    grad_buf(loss.id).v[0] = 1.0;

    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.needs_grad || n.grad.rows == 0) continue;
        if (visit) visit(id);
        const DenseMatrix& g = n.grad;
        switch (n.op) {
            case Op::kLeaf:
                break;
            case Op::kMatmul: {
                Node& a = nodes_[static_cast<size_t>(n.inputs[0])];
                Node& b = nodes_[static_cast<size_t>(n.inputs[1])];
                if (a.needs_grad) {
                    DenseMatrix& da = grad_buf(n.inputs[0]);
                    for (int i = 0; i < a.value.rows; ++i) {
                        const double* gr = g.row(i);
                        double* dar = da.row(i);
                        for (int k = 0; k < a.value.cols; ++k) {
                            const double* br = b.value.row(k);
                            double acc = 0.0;
                            for (int j = 0; j < g.cols; ++j) acc += gr[j] * br[j];
                            dar[k] += acc;
                        }
                    }
                }
                if (b.needs_grad) {
                    DenseMatrix& db = grad_buf(n.inputs[1]);
                    for (int i = 0; i < a.value.rows; ++i) {
                        const double* ar = a.value.row(i);
                        const double* gr = g.row(i);
                        for (int k = 0; k < a.value.cols; ++k) {
                            const double aik = ar[k];
                            double* dbr = db.row(k);
                            for (int j = 0; j < g.cols; ++j) dbr[j] += aik * gr[j];
                        }
                    }
                }
                break;
            }
            case Op::kAdd:
                for (int which = 0; which < 2; ++which) {
                    Node& in = nodes_[static_cast<size_t>(n.inputs[static_cast<size_t>(which)])];
                    if (!in.needs_grad) continue;
                    DenseMatrix& d = grad_buf(n.inputs[static_cast<size_t>(which)]);
                    for (size_t i = 0; i < g.v.size(); ++i) d.v[i] += g.v[i];
                }
                break;
            case Op::kScale: {
                Node& in = nodes_[static_cast<size_t>(n.inputs[0])];
                if (in.needs_grad) {
                    DenseMatrix& d = grad_buf(n.inputs[0]);
                    for (size_t i = 0; i < g.v.size(); ++i) d.v[i] += n.scalar * g.v[i];
                }
                break;
            }
            case Op::kHadamard: {
                Node& a = nodes_[static_cast<size_t>(n.inputs[0])];
                Node& b = nodes_[static_cast<size_t>(n.inputs[1])];
                if (a.needs_grad) {
                    DenseMatrix& da = grad_buf(n.inputs[0]);
                    for (size_t i = 0; i < g.v.size(); ++i) da.v[i] += g.v[i] * b.value.v[i];
                }
                if (b.needs_grad) {
                    DenseMatrix& db = grad_buf(n.inputs[1]);
                    for (size_t i = 0; i < g.v.size(); ++i) db.v[i] += g.v[i] * a.value.v[i];
                }
                break;
            }
            case Op::kAddBiasRow: {
                Node& a = nodes_[static_cast<size_t>(n.inputs[0])];
                Node& b = nodes_[static_cast<size_t>(n.inputs[1])];
                if (a.needs_grad) {
                    DenseMatrix& da = grad_buf(n.inputs[0]);
                    for (size_t i = 0; i < g.v.size(); ++i) da.v[i] += g.v[i];
                }
                if (b.needs_grad) {
                    DenseMatrix& db = grad_buf(n.inputs[1]);
                    for (int r = 0; r < g.rows; ++r) {
                        const double* gr = g.row(r);
                        for (int c = 0; c < g.cols; ++c) db.v[static_cast<size_t>(c)] += gr[c];
                    }
                }
                break;
            }
            case Op::kGelu: {
                Node& a = nodes_[static_cast<size_t>(n.inputs[0])];
                if (a.needs_grad) {
                    DenseMatrix& da = grad_buf(n.inputs[0]);
                    for (size_t i = 0; i < g.v.size(); ++i)
                        da.v[i] += g.v[i] * gelu_grad_scalar(a.value.v[i]);
                }
                break;
            }
            case Op::kAbs: {
                Node& a = nodes_[static_cast<size_t>(n.inputs[0])];
                if (a.needs_grad) {
                    DenseMatrix& da = grad_buf(n.inputs[0]);
                    for (size_t i = 0; i < g.v.size(); ++i) {
                        const double x = a.value.v[i];
                        if (x > 0.0) da.v[i] += g.v[i];
                        else if (x < 0.0) da.v[i] -= g.v[i];
                    }
                }
                break;
            }
            case Op::kSoftmaxRows: {
                Node& a = nodes_[static_cast<size_t>(n.inputs[0])];
                if (a.needs_grad) {
                    DenseMatrix& da = grad_buf(n.inputs[0]);
                    for (int r = 0; r < g.rows; ++r) {
                        const double* gr = g.row(r);
                        const double* pr = n.value.row(r);
                        double dot = 0.0;
                        for (int c = 0; c < g.cols; ++c) dot += gr[c] * pr[c];
                        double* dar = da.row(r);
                        for (int c = 0; c < g.cols; ++c) dar[c] += pr[c] * (gr[c] - dot);
                    }
                }
                break;
            }
            case Op::kLayerNorm: {
                Node& a = nodes_[static_cast<size_t>(n.inputs[0])];
                Node& gain = nodes_[static_cast<size_t>(n.inputs[1])];
                Node& bias = nodes_[static_cast<size_t>(n.inputs[2])];
                const double eps = n.scalar;
                const int cols = a.value.cols;
                for (int r = 0; r < a.value.rows; ++r) {
                    const double* in = a.value.row(r);
                    const double* gr = g.row(r);
                    double mean = 0.0;
                    for (int c = 0; c < cols; ++c) mean += in[c];
                    mean /= cols;
                    double var = 0.0;
                    for (int c = 0; c < cols; ++c) var += (in[c] - mean) * (in[c] - mean);
                    var /= cols;
                    const double inv = 1.0 / std::sqrt(var + eps);
                    if (gain.needs_grad) {
                        DenseMatrix& dg = grad_buf(n.inputs[1]);
                        for (int c = 0; c < cols; ++c)
                            dg.v[static_cast<size_t>(c)] += gr[c] * (in[c] - mean) * inv;
                    }
                    if (bias.needs_grad) {
                        DenseMatrix& db = grad_buf(n.inputs[2]);
                        for (int c = 0; c < cols; ++c) db.v[static_cast<size_t>(c)] += gr[c];
                    }
                    if (a.needs_grad) {
                        DenseMatrix& da = grad_buf(n.inputs[0]);
                        double m1 = 0.0, m2 = 0.0;
                        for (int c = 0; c < cols; ++c) {
                            const double gp = gr[c] * gain.value.v[static_cast<size_t>(c)];
                            const double xh = (in[c] - mean) * inv;
                            m1 += gp;
                            m2 += gp * xh;
                        }
                        m1 /= cols;
                        m2 /= cols;
                        double* dar = da.row(r);
                        for (int c = 0; c < cols; ++c) {
                            const double gp = gr[c] * gain.value.v[static_cast<size_t>(c)];
                            const double xh = (in[c] - mean) * inv;
                            dar[c] += (gp - m1 - xh * m2) * inv;
                        }
                    }
                }
                break;
            }
            case Op::kTranspose: {
                Node& a = nodes_[static_cast<size_t>(n.inputs[0])];
                if (a.needs_grad) {
                    DenseMatrix& da = grad_buf(n.inputs[0]);
                    for (int i = 0; i < g.rows; ++i)
                        for (int j = 0; j < g.cols; ++j) da.at(j, i) += g.at(i, j);
                }
                break;
            }
            case Op::kConcatCols: {
                int off = 0;
                for (int input_id : n.inputs) {
                    Node& p = nodes_[static_cast<size_t>(input_id)];
                    if (p.needs_grad) {
                        DenseMatrix& dp = grad_buf(input_id);
                        for (int r = 0; r < g.rows; ++r) {
                            const double* gr = g.row(r) + off;
                            double* dr = dp.row(r);
                            for (int c = 0; c < p.value.cols; ++c) dr[c] += gr[c];
                        }
                    }
                    off += p.value.cols;
                }
                break;
            }
            case Op::kSliceCols: {
                Node& a = nodes_[static_cast<size_t>(n.inputs[0])];
                if (a.needs_grad) {
                    DenseMatrix& da = grad_buf(n.inputs[0]);
                    for (int r = 0; r < g.rows; ++r) {
                        const double* gr = g.row(r);
                        double* dr = da.row(r) + n.c0;
                        for (int c = 0; c < g.cols; ++c) dr[c] += gr[c];
                    }
                }
                break;
            }
            case Op::kConv2d: {
                Node& x = nodes_[static_cast<size_t>(n.inputs[0])];
                Node& k = nodes_[static_cast<size_t>(n.inputs[1])];
                Node& b = nodes_[static_cast<size_t>(n.inputs[2])];
                const ConvSpec& sp = n.conv;
                const int h = sp.in_h, w = sp.in_w, kh = sp.kh, kw = sp.kw, s = sp.stride;
                const int oh = h / s, ow = w / s;
                const int ph = (kh - 1) / 2, pw = (kw - 1) / 2;
                const int c_in = x.value.rows, c_out = k.value.rows;
                DenseMatrix* dx = x.needs_grad ? &grad_buf(n.inputs[0]) : nullptr;
                DenseMatrix* dk = k.needs_grad ? &grad_buf(n.inputs[1]) : nullptr;
                DenseMatrix* db = b.needs_grad ? &grad_buf(n.inputs[2]) : nullptr;
                for (int co = 0; co < c_out; ++co) {
                    const double* gr = g.row(co);
                    const double* kr = k.value.row(co);
                    for (int oy = 0; oy < oh; ++oy) {
                        for (int ox = 0; ox < ow; ++ox) {
                            const double go = gr[oy * ow + ox];
                            if (db) db->v[static_cast<size_t>(co)] += go;
                            for (int ci = 0; ci < c_in; ++ci) {
                                const double* xr = x.value.row(ci);
                                const double* kc = kr + ci * kh * kw;
                                for (int ky = 0; ky < kh; ++ky) {
                                    const int y = oy * s + ky - ph;
                                    if (y < 0 || y >= h) continue;
                                    for (int kx = 0; kx < kw; ++kx) {
                                        const int xx = ox * s + kx - pw;
                                        if (xx < 0 || xx >= w) continue;
                                        if (dx) dx->row(ci)[y * w + xx] += go * kc[ky * kw + kx];
                                        if (dk)
                                            dk->row(co)[ci * kh * kw + ky * kw + kx] +=
                                                go * xr[y * w + xx];
                                    }
                                }
                            }
                        }
                    }
                }
                break;
            }
            case Op::kAttnMix: {
                Node& a = nodes_[static_cast<size_t>(n.inputs[0])];
                Node& v = nodes_[static_cast<size_t>(n.inputs[1])];
                if (a.needs_grad) {
                    DenseMatrix& da = grad_buf(n.inputs[0]);
                    for (int i = 0; i < g.rows; ++i) {
                        const double* gr = g.row(i);
                        double* dar = da.row(i);
                        for (int t = 0; t < v.value.rows; ++t) {
                            const double* vr = v.value.row(t);
                            double acc = 0.0;
                            for (int c = 0; c < g.cols; ++c) acc += gr[c] * vr[c];
                            dar[t] += acc;
                        }
                    }
                }
                if (v.needs_grad) {
                    DenseMatrix& dv = grad_buf(n.inputs[1]);
                    for (int i = 0; i < g.rows; ++i) {
                        const double* ar = a.value.row(i);
                        const double* gr = g.row(i);
                        for (int t = 0; t < v.value.rows; ++t) {
                            const double ait = ar[t];
                            double* dvr = dv.row(t);
                            for (int c = 0; c < g.cols; ++c) dvr[c] += ait * gr[c];
                        }
                    }
                }
                break;
            }
            case Op::kSumAll: {
                Node& a = nodes_[static_cast<size_t>(n.inputs[0])];
                if (a.needs_grad) {
                    DenseMatrix& da = grad_buf(n.inputs[0]);
                    const double go = g.v[0];
                    for (double& d : da.v) d += go;
                }
                break;
            }
        }
    }
}

}  // namespace mvar::num
