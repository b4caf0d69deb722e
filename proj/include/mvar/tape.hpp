#pragma once

#include <functional>
#include <span>

#include "mvar/dense.hpp"

namespace mvar::num {

/// Handle to a value recorded on a Tape.
struct Val {
    int id = -1;
    bool valid() const { return id >= 0; }
};

struct ConvSpec {
    int in_h = 0;
    int in_w = 0;
    int kh = 1;
    int kw = 1;
    int stride = 1;
};

/// Reverse-mode autodiff over a closed set of matrix primitives.
///
/// Every operation appends one node holding its forward result; backward()
/// replays the recorded nodes in exact reverse order, accumulating gradients
/// into per-node buffers. Leaves carry parameters (requires_grad) or constant
/// inputs. A Tape is single-use per forward/backward pass and is not shared
/// between threads; forward evaluation against a fixed parameter set has no
/// hidden state, so independent tapes may run concurrently.
///
/// Reductions that contract over the city/token axis (softmax row sums and
/// the attention-times-values product) accumulate in a canonical value-sorted
/// order, which makes the forward pass bit-exactly equivariant under
/// permutations of that axis.
class Tape {
public:
    Val leaf(DenseMatrix value, bool requires_grad);

    Val matmul(Val a, Val b);
    Val add(Val a, Val b);
    Val scale(Val a, double s);
    Val hadamard(Val a, Val b);
    /// Broadcast-add a 1 x C bias row to every row of a.
    Val add_bias_row(Val a, Val bias);
    Val gelu(Val a);
    /// Elementwise absolute value (derivative 0 at exactly 0).
    Val abs(Val a);
    /// Row-wise softmax with max-shift stabilization.
    Val softmax_rows(Val a);
    /// Per-row normalization to mean 0 / variance 1 (population variance,
    /// eps inside the square root), then per-column gain and bias.
    Val layer_norm(Val a, Val gain, Val bias, double eps);
    Val transpose(Val a);
    Val concat_cols(std::span<const Val> parts);
    Val concat_cols(Val a, Val b);
    /// Columns [c0, c1) of a.
    Val slice_cols(Val a, int c0, int c1);
    /// 2-D convolution over a C_in x (H*W) feature map with zero padding
    /// (kh-1)/2 so the pre-stride extent is preserved; odd kernel sizes only,
    /// H and W divisible by stride. kernels: C_out x (C_in*kh*kw),
    /// bias: 1 x C_out. Output: C_out x (H/stride * W/stride).
    Val conv2d(Val image, Val kernels, Val bias, const ConvSpec& spec);
    /// attn * values with canonical-order accumulation over the token axis.
    Val attn_mix(Val attn, Val values);
    Val sum_all(Val a);

    const DenseMatrix& value(Val v) const;
    /// Gradient buffer of v after backward(); zero matrix if v was not reached.
    const DenseMatrix& grad(Val v) const;
    bool requires_grad(Val v) const;

    /// Seed d(loss)/d(loss) = 1 and propagate to all reachable nodes.
    /// loss must be 1x1. visit, when given, observes node ids in replay order.
    void backward(Val loss, const std::function<void(int)>& visit = {});

    size_t node_count() const { return nodes_.size(); }

private:
    enum class Op {
        kLeaf,
        kMatmul,
        kAdd,
        kScale,
        kHadamard,
        kAddBiasRow,
        kGelu,
        kAbs,
        kSoftmaxRows,
        kLayerNorm,
        kTranspose,
        kConcatCols,
        kSliceCols,
        kConv2d,
        kAttnMix,
        kSumAll,
    };

    struct Node {
        Op op;
        std::vector<int> inputs;
        DenseMatrix value;
        DenseMatrix grad;
        bool needs_grad = false;
        double scalar = 0.0;  // scale factor / layer_norm eps
        int c0 = 0, c1 = 0;   // slice range
        ConvSpec conv;
    };

    int push(Node n);
    Node& node(Val v);
    const Node& node(Val v) const;
    DenseMatrix& grad_buf(int id);
    void check(Val v) const;

    std::vector<Node> nodes_;
    DenseMatrix zero_1x1_{1, 1, 0.0};
};

/// Exact (erf-based) GELU and its derivative.
double gelu_scalar(double x);
double gelu_grad_scalar(double x);

}  // namespace mvar::num
