#pragma once

#include <Eigen/Dense>

#include <deque>
#include <functional>
#include <limits>
#include <vector>

namespace edpose {

/// All math runs in double; row-major so row gathers and per-row kernels are
/// contiguous.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

namespace ad {

class Tape;

/// Handle to a matrix-valued node on a tape.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

/// Reverse-mode tape. Nodes are created in topological order by the forward
/// pass; backward() walks them in reverse. Gradients of interior nodes are
/// freed as soon as they have been propagated, so peak memory stays close to
/// the forward values plus a working set.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Drops all nodes and bumps the epoch counter (parameter mount caches
    /// key on the epoch).
    void clear();

    std::int64_t epoch() const { return epoch_; }
    int size() const { return static_cast<int>(nodes_.size()); }

    const Mat& val(Var v) const { return nodes_[v.id].value; }
    /// Gradient of a node after backward(). Empty if the node was never
    /// reached or its gradient was already released (interior nodes).
    const Mat& grad(Var v) const { return nodes_[v.id].grad; }

    /// Leaf that never receives gradient.
    Var constant(Mat v);
    /// Leaf that accumulates gradient and keeps it after backward().
    Var leaf(Mat v);

    /// Detach: value copy with no gradient path.
    Var detach(Var a) { return constant(val(a)); }

    // ---- elementwise ----
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var div(Var a, Var b);
    /// alpha * a + beta (elementwise affine by scalars).
    Var affine(Var a, double alpha, double beta);
    Var neg(Var a) { return affine(a, -1.0, 0.0); }
    Var scale(Var a, double s) { return affine(a, s, 0.0); }
    Var sigmoid(Var a);
    Var exp(Var a);
    Var relu(Var a);
    Var abs(Var a);
    Var softplus(Var a);
    Var square(Var a) { return mul(a, a); }
    /// Inverse sigmoid with input clamped to [eps, 1-eps]; gradient is zero
    /// in the clamped regions.
    Var logit(Var a, double eps = 1e-6);

    // ---- broadcasting ----
    /// a (L x C) + r (1 x C) per row.
    Var add_rowvec(Var a, Var r);
    /// a (L x C) * r (1 x C) per row.
    Var mul_rowvec(Var a, Var r);
    /// a (L x C) * w (L x 1) per column.
    Var rows_scale(Var a, Var w);

    // ---- matmul family ----
    Var matmul(Var a, Var b);
    /// a * b^T
    Var matmul_nt(Var a, Var b);
    /// a^T * b
    Var matmul_tn(Var a, Var b);

    // ---- reductions ----
    Var sum_all(Var a);
    Var mean_all(Var a);
    /// (L x C) -> (L x 1), summing across columns.
    Var row_sums(Var a);
    /// Rows grouped in consecutive runs of group_size are summed:
    /// (G*g x C) -> (G x C).
    Var sum_groups(Var a, int group_size);

    // ---- structure ----
    Var gather_rows(Var a, std::vector<int> idx);
    Var slice_rows(Var a, int start, int n);
    Var slice_cols(Var a, int start, int n);
    Var concat_rows(Var a, Var b);
    Var concat_cols(Var a, Var b);
    /// Each row repeated `times` consecutively: (L x C) -> (L*times x C).
    /// Row-major reinterpretation to a new shape with the same element count.
    Var reshape(Var a, int rows, int cols);

    Var repeat_interleave_rows(Var a, int times);
    /// Whole block stacked `times`: (L x C) -> (L*times x C).
    Var tile_rows(Var a, int times);

    // ---- row-wise kernels ----
    /// Row softmax. add_mask, if given, is added to the logits first and may
    /// contain -inf; such entries come out exactly 0.
    Var softmax_rows(Var a, const Mat* add_mask = nullptr);
    /// Row layernorm without affine; eps inside the sqrt.
    Var layernorm_rows(Var a, double eps = 1e-5);

    // ---- domain kernels ----
    /// Sinusoidal embedding of positions (L x P) -> (L x P*(dims_per_pos)),
    /// sin/cos pairs per frequency; differentiable in the positions.
    Var sine_embed(Var pos, int dims_per_pos, double temperature = 20.0);

    /// Fused multi-head attention over full-D projected inputs.
    /// q,k,v: (L x D); add_mask optional (L x L) of {0, -inf}. Per-head
    /// scores are scaled by 1/sqrt(D/heads). Backward recomputes the
    /// softmax, so no L x L matrices are retained on the tape.
    Var multihead_attention(Var q, Var k, Var v, int n_heads, const Mat* add_mask = nullptr);

    /// Weighted bilinear gather: values ((H*W) x C) sampled at locs (S x 2,
    /// normalized [0,1]^2, align-corners-false, zero padding), scaled by
    /// weights (S x 1) and accumulated per query: S = L*group_size rows in
    /// query-major order -> output (L x C). Differentiable in all three.
    Var deform_gather(Var values, Var locs, Var weights, int grid_h, int grid_w, int group_size);

    /// im2col for a (H*W) x C image; out ((H_out*W_out) x (C*k*k)) with zero
    /// padding. Column layout: c*k*k + ky*k + kx.
    Var im2col(Var image, int h, int w, int channels, int ksize, int stride, int pad);

    /// Backpropagate from a 1x1 root. Leaf gradients survive; interior
    /// gradients are released as soon as consumed.
    void backward(Var root);

private:
    struct Node {
        Mat value;
        Mat grad;
        std::function<void()> back;  // empty for leaves/constants
        bool needs_grad = false;
        bool keep_grad = false;  // leaves keep their gradient after backward
    };

    std::deque<Node> nodes_;
    static std::int64_t next_epoch();
    std::int64_t epoch_ = next_epoch();

    Var push(Mat value, bool needs_grad, std::function<void()> back, bool keep_grad = false);
    Mat& grad_ref(int id);
    bool needs(Var v) const { return nodes_[v.id].needs_grad; }
    void accumulate(int id, const Mat& g);

    friend struct GradAccess;
};

/// Output size of one conv spatial dim.
inline int conv_out_dim(int in, int ksize, int stride, int pad) {
    return (in + 2 * pad - ksize) / stride + 1;
}

/// Numerically safe logit; clamps to [eps, 1-eps].
Mat inverse_sigmoid(const Mat& x, double eps = 1e-6);
double inverse_sigmoid(double x, double eps = 1e-6);

/// Plain-value sinusoidal embedding (same layout as Tape::sine_embed).
Mat sine_embed_values(const Mat& pos, int dims_per_pos, double temperature = 20.0);

/// Per-head attention weight matrices for inspection/tests; mirrors the
/// fused kernel's forward exactly.
std::vector<Mat> multihead_attention_weights(const Mat& q, const Mat& k, int n_heads,
                                             const Mat* add_mask = nullptr);

}  // namespace ad
}  // namespace edpose
