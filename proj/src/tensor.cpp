#include "edpose/tensor.hpp"

#include "edpose/errors.hpp"

#include <cmath>
#include <memory>
#include <numbers>

namespace edpose::ad {

namespace {

void check_same_shape(const Mat& a, const Mat& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
    }
}

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

std::int64_t Tape::next_epoch() {
    static std::int64_t counter = 0;
    return ++counter;
}

void Tape::clear() {
    nodes_.clear();
    epoch_ = next_epoch();
}

Var Tape::push(Mat value, bool needs_grad, std::function<void()> back, bool keep_grad) {
    Node n;
    n.value = std::move(value);
    n.back = std::move(back);
    n.needs_grad = needs_grad;
    n.keep_grad = keep_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Mat& Tape::grad_ref(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

void Tape::accumulate(int id, const Mat& g) {
    if (!nodes_[id].needs_grad) return;
    grad_ref(id) += g;
}

Var Tape::constant(Mat v) { return push(std::move(v), false, {}); }

Var Tape::leaf(Mat v) { return push(std::move(v), true, {}, true); }

void Tape::backward(Var root) {
    if (!root.valid()) throw ShapeError("backward: invalid root");
    const Node& r = nodes_[root.id];
    if (r.value.rows() != 1 || r.value.cols() != 1)
        throw ShapeError("backward: root must be 1x1 scalar");
    grad_ref(root.id).setOnes();
    for (int i = root.id; i >= 0; --i) {
        Node& n = nodes_[i];
        if (n.grad.size() != 0 && n.back) n.back();
        if (!n.keep_grad) n.grad.resize(0, 0);
    }
}

// ---------------------------------------------------------------- elementwise

Var Tape::add(Var a, Var b) {
    check_same_shape(val(a), val(b), "add");
    const bool ng = needs(a) || needs(b);
    const int oi = size();
    std::function<void()> back;
    if (ng) back = [this, a, b, oi] {
        const Mat& g = nodes_[oi].grad;
        accumulate(a.id, g);
        accumulate(b.id, g);
    };
    return push(val(a) + val(b), ng, std::move(back));
}

Var Tape::sub(Var a, Var b) {
    check_same_shape(val(a), val(b), "sub");
    const bool ng = needs(a) || needs(b);
    const int oi = size();
    std::function<void()> back;
    if (ng) back = [this, a, b, oi] {
        const Mat& g = nodes_[oi].grad;
        accumulate(a.id, g);
        if (nodes_[b.id].needs_grad) grad_ref(b.id) -= g;
    };
    return push(val(a) - val(b), ng, std::move(back));
}

Var Tape::mul(Var a, Var b) {
    check_same_shape(val(a), val(b), "mul");
    const bool ng = needs(a) || needs(b);
    const int oi = size();
    std::function<void()> back;
    if (ng) back = [this, a, b, oi] {
        const Mat& g = nodes_[oi].grad;
        if (nodes_[a.id].needs_grad) grad_ref(a.id).array() += g.array() * val(b).array();
        if (nodes_[b.id].needs_grad) grad_ref(b.id).array() += g.array() * val(a).array();
    };
    return push(val(a).cwiseProduct(val(b)), ng, std::move(back));
}

Var Tape::div(Var a, Var b) {
    check_same_shape(val(a), val(b), "div");
    const bool ng = needs(a) || needs(b);
    const int oi = size();
    std::function<void()> back;
    if (ng) back = [this, a, b, oi] {
        const Mat& g = nodes_[oi].grad;
        const Mat& out = nodes_[oi].value;
        if (nodes_[a.id].needs_grad) grad_ref(a.id).array() += g.array() / val(b).array();
        if (nodes_[b.id].needs_grad)
            grad_ref(b.id).array() -= g.array() * out.array() / val(b).array();
    };
    return push(val(a).cwiseQuotient(val(b)), ng, std::move(back));
}

Var Tape::affine(Var a, double alpha, double beta) {
    const bool ng = needs(a);
    const int oi = size();
    std::function<void()> back;
    if (ng) back = [this, a, oi, alpha] {
        grad_ref(a.id) += alpha * nodes_[oi].grad;
    };
    Mat v = (val(a).array() * alpha + beta).matrix();
    return push(std::move(v), ng, std::move(back));
}

Var Tape::sigmoid(Var a) {
    Mat v = val(a).unaryExpr([](double x) { return stable_sigmoid(x); });
    const bool ng = needs(a);
    const int oi = size();
    std::function<void()> back;
    if (ng) back = [this, a, oi] {
        const Mat& out = nodes_[oi].value;
        grad_ref(a.id).array() +=
            nodes_[oi].grad.array() * out.array() * (1.0 - out.array());
    };
    return push(std::move(v), ng, std::move(back));
}

Var Tape::exp(Var a) {
    Mat v = val(a).array().exp().matrix();
    const bool ng = needs(a);
    const int oi = size();
    std::function<void()> back;
    if (ng) back = [this, a, oi] {
        grad_ref(a.id).array() += nodes_[oi].grad.array() * nodes_[oi].value.array();
    };
    return push(std::move(v), ng, std::move(back));
}

Var Tape::relu(Var a) {
    Mat v = val(a).cwiseMax(0.0);
    const bool ng = needs(a);
    const int oi = size();
    std::function<void()> back;
    if (ng) back = [this, a, oi] {
        grad_ref(a.id).array() +=
            nodes_[oi].grad.array() * (val(a).array() > 0.0).cast<double>();
    };
    return push(std::move(v), ng, std::move(back));
}

Var Tape::abs(Var a) {
    Mat v = val(a).cwiseAbs();
    const bool ng = needs(a);
    const int oi = size();
    std::function<void()> back;
    if (ng) back = [this, a, oi] {
        grad_ref(a.id).array() += nodes_[oi].grad.array() * val(a).array().sign();
    };
    return push(std::move(v), ng, std::move(back));
}

Var Tape::softplus(Var a) {
    Mat v = val(a).unaryExpr([](double x) {
        return std::log1p(std::exp(-std::fabs(x))) + std::max(x, 0.0);
    });
    const bool ng = needs(a);
    const int oi = size();
    std::function<void()> back;
    if (ng) back = [this, a, oi] {
        grad_ref(a.id).array() +=
            nodes_[oi].grad.array() *
            val(a).unaryExpr([](double x) { return stable_sigmoid(x); }).array();
    };
    return push(std::move(v), ng, std::move(back));
}

Var Tape::logit(Var a, double eps) {
    Mat v = val(a).unaryExpr([eps](double x) { return inverse_sigmoid(x, eps); });
    const bool ng = needs(a);
    const int oi = size();
    std::function<void()> back;
    if (ng) back = [this, a, oi, eps] {
        grad_ref(a.id).array() += nodes_[oi].grad.array() * val(a).unaryExpr([eps](double x) {
            if (x <= eps || x >= 1.0 - eps) return 0.0;
            return 1.0 / (x * (1.0 - x));
        }).array();
    };
    return push(std::move(v), ng, std::move(back));
}

// --------------------------------------------------------------- broadcasting

Var Tape::add_rowvec(Var a, Var r) {
    if (val(r).rows() != 1 || val(r).cols() != val(a).cols())
        throw ShapeError("add_rowvec: r must be 1 x cols(a)");
    Mat v = val(a);
    v.rowwise() += val(r).row(0);
    const bool ng = needs(a) || needs(r);
    const int oi = size();
    std::function<void()> back;
    if (ng) back = [this, a, r, oi] {
        const Mat& g = nodes_[oi].grad;
        accumulate(a.id, g);
        if (nodes_[r.id].needs_grad) grad_ref(r.id) += g.colwise().sum();
    };
    return push(std::move(v), ng, std::move(back));
}

Var Tape::mul_rowvec(Var a, Var r) {
    if (val(r).rows() != 1 || val(r).cols() != val(a).cols())
        throw ShapeError("mul_rowvec: r must be 1 x cols(a)");
    Mat v = val(a).array().rowwise() * val(r).row(0).array();
    const bool ng = needs(a) || needs(r);
    const int oi = size();
    std::function<void()> back;
    if (ng) back = [this, a, r, oi] {
        const Mat& g = nodes_[oi].grad;
        if (nodes_[a.id].needs_grad)
            grad_ref(a.id).array() += g.array().rowwise() * val(r).row(0).array();
        if (nodes_[r.id].needs_grad)
            grad_ref(r.id) += (g.cwiseProduct(val(a))).colwise().sum();
    };
    return push(std::move(v), ng, std::move(back));
}

Var Tape::rows_scale(Var a, Var w) {
    if (val(w).cols() != 1 || val(w).rows() != val(a).rows())
        throw ShapeError("rows_scale: w must be rows(a) x 1");
    Mat v = val(a).array().colwise() * val(w).col(0).array();
    const bool ng = needs(a) || needs(w);
    const int oi = size();
    std::function<void()> back;
    if (ng) back = [this, a, w, oi] {
        const Mat& g = nodes_[oi].grad;
        if (nodes_[a.id].needs_grad)
            grad_ref(a.id).array() += g.array().colwise() * val(w).col(0).array();
        if (nodes_[w.id].needs_grad)
            grad_ref(w.id) += (g.cwiseProduct(val(a))).rowwise().sum();
    };
    return push(std::move(v), ng, std::move(back));
}

// ------------------------------------------------------------------- matmul

Var Tape::matmul(Var a, Var b) {
    if (val(a).cols() != val(b).rows()) throw ShapeError("matmul: inner dims differ");
    Mat v = val(a) * val(b);
    const bool ng = needs(a) || needs(b);
    const int oi = size();
    std::function<void()> back;
    if (ng) back = [this, a, b, oi] {
        const Mat& g = nodes_[oi].grad;
        if (nodes_[a.id].needs_grad) grad_ref(a.id).noalias() += g * val(b).transpose();
        if (nodes_[b.id].needs_grad) grad_ref(b.id).noalias() += val(a).transpose() * g;
    };
    return push(std::move(v), ng, std::move(back));
}

Var Tape::matmul_nt(Var a, Var b) {
    if (val(a).cols() != val(b).cols()) throw ShapeError("matmul_nt: inner dims differ");
    Mat v = val(a) * val(b).transpose();
    const bool ng = needs(a) || needs(b);
    const int oi = size();
    std::function<void()> back;
    if (ng) back = [this, a, b, oi] {
        const Mat& g = nodes_[oi].grad;
        if (nodes_[a.id].needs_grad) grad_ref(a.id).noalias() += g * val(b);
        if (nodes_[b.id].needs_grad) grad_ref(b.id).noalias() += g.transpose() * val(a);
    };
    return push(std::move(v), ng, std::move(back));
}

Var Tape::matmul_tn(Var a, Var b) {
    if (val(a).rows() != val(b).rows()) throw ShapeError("matmul_tn: inner dims differ");
    Mat v = val(a).transpose() * val(b);
    const bool ng = needs(a) || needs(b);
    const int oi = size();
    std::function<void()> back;
    if (ng) back = [this, a, b, oi] {
        const Mat& g = nodes_[oi].grad;
        if (nodes_[a.id].needs_grad) grad_ref(a.id).noalias() += val(b) * g.transpose();
        if (nodes_[b.id].needs_grad) grad_ref(b.id).noalias() += val(a) * g;
    };
    return push(std::move(v), ng, std::move(back));
}

// --------------------------------------------------------------- reductions

Var Tape::sum_all(Var a) {
    Mat v(1, 1);
    v(0, 0) = val(a).sum();
    const bool ng = needs(a);
    const int oi = size();
    std::function<void()> back;
    if (ng) back = [this, a, oi] {
        grad_ref(a.id).array() += nodes_[oi].grad(0, 0);
    };
    return push(std::move(v), ng, std::move(back));
}

Var Tape::mean_all(Var a) {
    return scale(sum_all(a), 1.0 / static_cast<double>(val(a).size()));
}

Var Tape::row_sums(Var a) {
    Mat v = val(a).rowwise().sum();
    const bool ng = needs(a);
    const int oi = size();
    std::function<void()> back;
    if (ng) back = [this, a, oi] {
        grad_ref(a.id).array().colwise() += nodes_[oi].grad.col(0).array();
    };
    return push(std::move(v), ng, std::move(back));
}

Var Tape::sum_groups(Var a, int group_size) {
    const int rows = static_cast<int>(val(a).rows());
    if (group_size <= 0 || rows % group_size != 0)
        throw ShapeError("sum_groups: rows not divisible by group size");
    const int out_rows = rows / group_size;
    Mat v = Mat::Zero(out_rows, val(a).cols());
    for (int i = 0; i < out_rows; ++i)
        v.row(i) = val(a).middleRows(i * group_size, group_size).colwise().sum();
    const bool ng = needs(a);
    const int oi = size();
    std::function<void()> back;
    if (ng) back = [this, a, oi, group_size, out_rows] {
        if (!nodes_[a.id].needs_grad) return;
        Mat& ga = grad_ref(a.id);
        const Mat& g = nodes_[oi].grad;
        for (int i = 0; i < out_rows; ++i)
            ga.middleRows(i * group_size, group_size).rowwise() += g.row(i);
    };
    return push(std::move(v), ng, std::move(back));
}

// ---------------------------------------------------------------- structure

Var Tape::gather_rows(Var a, std::vector<int> idx) {
    const int rows = static_cast<int>(val(a).rows());
    Mat v(static_cast<Eigen::Index>(idx.size()), val(a).cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= rows) throw ShapeError("gather_rows: index out of range");
        v.row(static_cast<Eigen::Index>(i)) = val(a).row(idx[i]);
    }
    const bool ng = needs(a);
    const int oi = size();
    std::function<void()> back;
    if (ng) {
        auto ids = std::make_shared<std::vector<int>>(std::move(idx));
        back = [this, a, oi, ids] {
            if (!nodes_[a.id].needs_grad) return;
            Mat& ga = grad_ref(a.id);
            const Mat& g = nodes_[oi].grad;
            for (std::size_t i = 0; i < ids->size(); ++i)
                ga.row((*ids)[i]) += g.row(static_cast<Eigen::Index>(i));
        };
    }
    return push(std::move(v), ng, std::move(back));
}

Var Tape::slice_rows(Var a, int start, int n) {
    if (start < 0 || n < 0 || start + n > val(a).rows())
        throw ShapeError("slice_rows: range out of bounds");
    Mat v = val(a).middleRows(start, n);
    const bool ng = needs(a);
    const int oi = size();
    std::function<void()> back;
    if (ng) back = [this, a, oi, start, n] {
        if (nodes_[a.id].needs_grad)
            grad_ref(a.id).middleRows(start, n) += nodes_[oi].grad;
    };
    return push(std::move(v), ng, std::move(back));
}

Var Tape::slice_cols(Var a, int start, int n) {
    if (start < 0 || n < 0 || start + n > val(a).cols())
        throw ShapeError("slice_cols: range out of bounds");
    Mat v = val(a).middleCols(start, n);
    const bool ng = needs(a);
    const int oi = size();
    std::function<void()> back;
    if (ng) back = [this, a, oi, start, n] {
        if (nodes_[a.id].needs_grad)
            grad_ref(a.id).middleCols(start, n) += nodes_[oi].grad;
    };
    return push(std::move(v), ng, std::move(back));
}

Var Tape::concat_rows(Var a, Var b) {
    if (val(a).cols() != val(b).cols()) throw ShapeError("concat_rows: col mismatch");
    Mat v(val(a).rows() + val(b).rows(), val(a).cols());
    v.topRows(val(a).rows()) = val(a);
    v.bottomRows(val(b).rows()) = val(b);
    const bool ng = needs(a) || needs(b);
    const int oi = size();
    const int ra = static_cast<int>(val(a).rows());
    const int rb = static_cast<int>(val(b).rows());
    std::function<void()> back;
    if (ng) back = [this, a, b, oi, ra, rb] {
        const Mat& g = nodes_[oi].grad;
        if (nodes_[a.id].needs_grad) grad_ref(a.id) += g.topRows(ra);
        if (nodes_[b.id].needs_grad) grad_ref(b.id) += g.bottomRows(rb);
    };
    return push(std::move(v), ng, std::move(back));
}

Var Tape::concat_cols(Var a, Var b) {
    if (val(a).rows() != val(b).rows()) throw ShapeError("concat_cols: row mismatch");
    Mat v(val(a).rows(), val(a).cols() + val(b).cols());
    v.leftCols(val(a).cols()) = val(a);
    v.rightCols(val(b).cols()) = val(b);
    const bool ng = needs(a) || needs(b);
    const int oi = size();
    const int ca = static_cast<int>(val(a).cols());
    const int cb = static_cast<int>(val(b).cols());
    std::function<void()> back;
    if (ng) back = [this, a, b, oi, ca, cb] {
        const Mat& g = nodes_[oi].grad;
        if (nodes_[a.id].needs_grad) grad_ref(a.id) += g.leftCols(ca);
        if (nodes_[b.id].needs_grad) grad_ref(b.id) += g.rightCols(cb);
    };
    return push(std::move(v), ng, std::move(back));
}

Var Tape::reshape(Var a, int rows, int cols) {
    const Mat& x = val(a);
    if (static_cast<Eigen::Index>(rows) * cols != x.size())
        throw ShapeError("reshape: element count mismatch");
    Mat v = Eigen::Map<const Mat>(x.data(), rows, cols);
    const bool ng = needs(a);
    const int oi = size();
    std::function<void()> back;
    if (ng) back = [this, a, oi] {
        if (!nodes_[a.id].needs_grad) return;
        Mat& ga = grad_ref(a.id);
        const Mat& g = nodes_[oi].grad;
        ga += Eigen::Map<const Mat>(g.data(), ga.rows(), ga.cols());
    };
    return push(std::move(v), ng, std::move(back));
}

Var Tape::repeat_interleave_rows(Var a, int times) {
    if (times <= 0) throw ShapeError("repeat_interleave_rows: times must be positive");
    const int rows = static_cast<int>(val(a).rows());
    Mat v(static_cast<Eigen::Index>(rows) * times, val(a).cols());
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < times; ++j) v.row(i * times + j) = val(a).row(i);
    const bool ng = needs(a);
    const int oi = size();
    std::function<void()> back;
    if (ng) back = [this, a, oi, times, rows] {
        if (!nodes_[a.id].needs_grad) return;
        Mat& ga = grad_ref(a.id);
        const Mat& g = nodes_[oi].grad;
        for (int i = 0; i < rows; ++i)
            ga.row(i) += g.middleRows(i * times, times).colwise().sum();
    };
    return push(std::move(v), ng, std::move(back));
}

Var Tape::tile_rows(Var a, int times) {
    if (times <= 0) throw ShapeError("tile_rows: times must be positive");
    const int rows = static_cast<int>(val(a).rows());
    Mat v(static_cast<Eigen::Index>(rows) * times, val(a).cols());
    for (int j = 0; j < times; ++j) v.middleRows(j * rows, rows) = val(a);
    const bool ng = needs(a);
    const int oi = size();
    std::function<void()> back;
    if (ng) back = [this, a, oi, times, rows] {
        if (!nodes_[a.id].needs_grad) return;
        Mat& ga = grad_ref(a.id);
        const Mat& g = nodes_[oi].grad;
        for (int j = 0; j < times; ++j) ga += g.middleRows(j * rows, rows);
    };
    return push(std::move(v), ng, std::move(back));
}

// ------------------------------------------------------------ row kernels

Var Tape::softmax_rows(Var a, const Mat* add_mask) {
    const Mat& x = val(a);
    if (add_mask && (add_mask->rows() != x.rows() || add_mask->cols() != x.cols()))
        throw ShapeError("softmax_rows: mask shape mismatch");
    const Eigen::Index rows = x.rows(), cols = x.cols();
    Mat v(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        double m = kNegInf;
        for (Eigen::Index c = 0; c < cols; ++c) {
            const double e = x(r, c) + (add_mask ? (*add_mask)(r, c) : 0.0);
            if (e > m) m = e;
        }
        if (m == kNegInf) throw DomainError("softmax_rows: row fully masked");
        double s = 0.0;
        for (Eigen::Index c = 0; c < cols; ++c) {
            const double e = x(r, c) + (add_mask ? (*add_mask)(r, c) : 0.0);
            const double ev = (e == kNegInf) ? 0.0 : std::exp(e - m);
            v(r, c) = ev;
            s += ev;
        }
        v.row(r) /= s;
    }
    const bool ng = needs(a);
    const int oi = size();
    std::function<void()> back;
    if (ng) back = [this, a, oi] {
        const Mat& out = nodes_[oi].value;
        const Mat& g = nodes_[oi].grad;
        Mat dot = (g.cwiseProduct(out)).rowwise().sum();
        Mat ga = out.cwiseProduct(g - dot.replicate(1, out.cols()));
        accumulate(a.id, ga);
    };
    return push(std::move(v), ng, std::move(back));
}

Var Tape::layernorm_rows(Var a, double eps) {
    const Mat& x = val(a);
    const Eigen::Index rows = x.rows(), cols = x.cols();
    Mat v(rows, cols);
    auto inv = std::make_shared<std::vector<double>>(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const double mu = x.row(r).mean();
        const double var = (x.row(r).array() - mu).square().mean();
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv)[r] = is;
        v.row(r) = ((x.row(r).array() - mu) * is).matrix();
    }
    const bool ng = needs(a);
    const int oi = size();
    std::function<void()> back;
    if (ng) back = [this, a, oi, inv] {
        const Mat& xhat = nodes_[oi].value;
        const Mat& g = nodes_[oi].grad;
        const Eigen::Index rows = xhat.rows(), cols = xhat.cols();
        Mat ga(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r) {
            const double gm = g.row(r).mean();
            const double gx = (g.row(r).cwiseProduct(xhat.row(r))).mean();
            ga.row(r) = ((g.row(r).array() - gm - xhat.row(r).array() * gx) * (*inv)[r]).matrix();
        }
        accumulate(a.id, ga);
    };
    return push(std::move(v), ng, std::move(back));
}

// ---------------------------------------------------------- domain kernels

namespace {

/// Frequency table: dims_per_pos/2 angular frequencies, DETR-style spacing.
std::vector<double> sine_freqs(int dims_per_pos, double temperature) {
    const int nf = dims_per_pos / 2;
    std::vector<double> w(nf);
    for (int f = 0; f < nf; ++f)
        w[f] = 2.0 * std::numbers::pi / std::pow(temperature, (2.0 * f) / dims_per_pos);
    return w;
}

}  // namespace

Mat sine_embed_values(const Mat& pos, int dims_per_pos, double temperature) {
    if (dims_per_pos % 2 != 0) throw ShapeError("sine_embed: dims per position must be even");
    const auto w = sine_freqs(dims_per_pos, temperature);
    const Eigen::Index rows = pos.rows(), P = pos.cols();
    Mat out(rows, P * dims_per_pos);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index j = 0; j < P; ++j) {
            const double u = pos(r, j);
            for (std::size_t f = 0; f < w.size(); ++f) {
                out(r, j * dims_per_pos + 2 * f) = std::sin(u * w[f]);
                out(r, j * dims_per_pos + 2 * f + 1) = std::cos(u * w[f]);
            }
        }
    return out;
}

Var Tape::sine_embed(Var pos, int dims_per_pos, double temperature) {
    Mat v = sine_embed_values(val(pos), dims_per_pos, temperature);
    const bool ng = needs(pos);
    const int oi = size();
    std::function<void()> back;
    if (ng) back = [this, pos, oi, dims_per_pos, temperature] {
        if (!nodes_[pos.id].needs_grad) return;
        const auto w = sine_freqs(dims_per_pos, temperature);
        const Mat& out = nodes_[oi].value;
        const Mat& g = nodes_[oi].grad;
        Mat& gp = grad_ref(pos.id);
        const Eigen::Index rows = gp.rows(), P = gp.cols();
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index j = 0; j < P; ++j) {
                double acc = 0.0;
                for (std::size_t f = 0; f < w.size(); ++f) {
                    const double s = out(r, j * dims_per_pos + 2 * f);
                    const double c = out(r, j * dims_per_pos + 2 * f + 1);
                    acc += w[f] * (c * g(r, j * dims_per_pos + 2 * f) -
                                   s * g(r, j * dims_per_pos + 2 * f + 1));
                }
                gp(r, j) += acc;
            }
    };
    return push(std::move(v), ng, std::move(back));
}

namespace {

/// One attention head forward; returns softmax(S) with S = scale*Q*K^T + mask.
Mat head_softmax(const Mat& qh, const Mat& kh, double scl, const Mat* mask) {
    Mat s = (qh * kh.transpose()) * scl;
    const Eigen::Index L = s.rows();
    for (Eigen::Index r = 0; r < L; ++r) {
        double m = kNegInf;
        for (Eigen::Index c = 0; c < s.cols(); ++c) {
            const double e = s(r, c) + (mask ? (*mask)(r, c) : 0.0);
            if (e > m) m = e;
        }
        if (m == kNegInf) throw DomainError("attention: row fully masked");
        double sum = 0.0;
        for (Eigen::Index c = 0; c < s.cols(); ++c) {
            const double e = s(r, c) + (mask ? (*mask)(r, c) : 0.0);
            const double ev = (e == kNegInf) ? 0.0 : std::exp(e - m);
            s(r, c) = ev;
            sum += ev;
        }
        s.row(r) /= sum;
    }
    return s;
}

}  // namespace

std::vector<Mat> multihead_attention_weights(const Mat& q, const Mat& k, int n_heads,
                                             const Mat* add_mask) {
    const int d = static_cast<int>(q.cols());
    if (d % n_heads != 0) throw ShapeError("attention: dim not divisible by heads");
    const int dh = d / n_heads;
    const double scl = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Mat> out;
    out.reserve(n_heads);
    for (int h = 0; h < n_heads; ++h)
        out.push_back(head_softmax(q.middleCols(h * dh, dh), k.middleCols(h * dh, dh), scl,
                                   add_mask));
    return out;
}

Var Tape::multihead_attention(Var q, Var k, Var v, int n_heads, const Mat* add_mask) {
    const Mat& Q = val(q);
    const Mat& K = val(k);
    const Mat& V = val(v);
    const int D = static_cast<int>(Q.cols());
    if (D % n_heads != 0) throw ShapeError("attention: dim not divisible by heads");
    if (K.cols() != D || V.cols() != D || K.rows() != V.rows())
        throw ShapeError("attention: q/k/v shape mismatch");
    if (add_mask && (add_mask->rows() != Q.rows() || add_mask->cols() != K.rows()))
        throw ShapeError("attention: mask shape mismatch");
    const int dh = D / n_heads;
    const double scl = 1.0 / std::sqrt(static_cast<double>(dh));

    Mat out(Q.rows(), D);
    for (int h = 0; h < n_heads; ++h) {
        const Mat A = head_softmax(Q.middleCols(h * dh, dh), K.middleCols(h * dh, dh), scl,
                                   add_mask);
        out.middleCols(h * dh, dh).noalias() = A * V.middleCols(h * dh, dh);
    }

    const bool ng = needs(q) || needs(k) || needs(v);
    const int oi = size();
    std::function<void()> back;
    // The caller's mask may not outlive this call, so the closure owns a copy.
    std::shared_ptr<const Mat> mask_copy =
        add_mask ? std::make_shared<const Mat>(*add_mask) : nullptr;
    if (ng) back = [this, q, k, v, oi, n_heads, dh, scl, mask_copy] {
        // Recompute each head's softmax instead of storing L x L matrices.
        const Mat& Q = val(q);
        const Mat& K = val(k);
        const Mat& V = val(v);
        const Mat& g = nodes_[oi].grad;
        for (int h = 0; h < n_heads; ++h) {
            const Mat qh = Q.middleCols(h * dh, dh);
            const Mat kh = K.middleCols(h * dh, dh);
            const Mat vh = V.middleCols(h * dh, dh);
            const Mat A = head_softmax(qh, kh, scl, mask_copy.get());
            const Mat go = g.middleCols(h * dh, dh);
            if (nodes_[v.id].needs_grad)
                grad_ref(v.id).middleCols(h * dh, dh).noalias() += A.transpose() * go;
            if (nodes_[q.id].needs_grad || nodes_[k.id].needs_grad) {
                Mat dA = go * vh.transpose();
                Mat dot = (dA.cwiseProduct(A)).rowwise().sum();
                Mat dS = A.cwiseProduct(dA - dot.replicate(1, A.cols()));
                if (nodes_[q.id].needs_grad)
                    grad_ref(q.id).middleCols(h * dh, dh).noalias() += scl * (dS * kh);
                if (nodes_[k.id].needs_grad)
                    grad_ref(k.id).middleCols(h * dh, dh).noalias() +=
                        scl * (dS.transpose() * qh);
            }
        }
    };
    return push(std::move(out), ng, std::move(back));
}

namespace {

struct BilinearCell {
    int idx[4];      // -1 = outside (zero padding)
    double coef[4];  // c00, c10, c01, c11
    double fx, fy;
    bool any() const { return idx[0] >= 0 || idx[1] >= 0 || idx[2] >= 0 || idx[3] >= 0; }
};

BilinearCell bilinear_cell(double xn, double yn, int grid_h, int grid_w) {
    BilinearCell c{};
    const double px = xn * grid_w - 0.5;
    const double py = yn * grid_h - 0.5;
    const int x0 = static_cast<int>(std::floor(px));
    const int y0 = static_cast<int>(std::floor(py));
    c.fx = px - x0;
    c.fy = py - y0;
    const int xs[2] = {x0, x0 + 1};
    const int ys[2] = {y0, y0 + 1};
    const double wx[2] = {1.0 - c.fx, c.fx};
    const double wy[2] = {1.0 - c.fy, c.fy};
    int t = 0;
    for (int j = 0; j < 2; ++j)
        for (int i = 0; i < 2; ++i, ++t) {
            const bool in = xs[i] >= 0 && xs[i] < grid_w && ys[j] >= 0 && ys[j] < grid_h;
            c.idx[t] = in ? ys[j] * grid_w + xs[i] : -1;
            c.coef[t] = wx[i] * wy[j];
        }
    return c;
}

}  // namespace

Var Tape::deform_gather(Var values, Var locs, Var weights, int grid_h, int grid_w,
                        int group_size) {
    const Mat& V = val(values);
    const Mat& L = val(locs);
    const Mat& W = val(weights);
    if (V.rows() != static_cast<Eigen::Index>(grid_h) * grid_w)
        throw ShapeError("deform_gather: values rows != grid_h*grid_w");
    if (L.cols() != 2 || W.cols() != 1 || L.rows() != W.rows())
        throw ShapeError("deform_gather: locs must be Sx2, weights Sx1");
    const int S = static_cast<int>(L.rows());
    if (group_size <= 0 || S % group_size != 0)
        throw ShapeError("deform_gather: samples not divisible by group size");
    const int n_out = S / group_size;
    const int C = static_cast<int>(V.cols());

    Mat out = Mat::Zero(n_out, C);
    for (int s = 0; s < S; ++s) {
        const auto cell = bilinear_cell(L(s, 0), L(s, 1), grid_h, grid_w);
        if (!cell.any()) continue;
        const double ws = W(s, 0);
        auto row = out.row(s / group_size);
        for (int t = 0; t < 4; ++t)
            if (cell.idx[t] >= 0) row += (ws * cell.coef[t]) * V.row(cell.idx[t]);
    }

    const bool ng = needs(values) || needs(locs) || needs(weights);
    const int oi = size();
    std::function<void()> back;
    if (ng) back = [this, values, locs, weights, oi, grid_h, grid_w, group_size] {
        const Mat& V = val(values);
        const Mat& L = val(locs);
        const Mat& W = val(weights);
        const Mat& g = nodes_[oi].grad;
        const int S = static_cast<int>(L.rows());
        const bool need_v = nodes_[values.id].needs_grad;
        const bool need_l = nodes_[locs.id].needs_grad;
        const bool need_w = nodes_[weights.id].needs_grad;
        Mat* gv = need_v ? &grad_ref(values.id) : nullptr;
        Mat* gl = need_l ? &grad_ref(locs.id) : nullptr;
        Mat* gw = need_w ? &grad_ref(weights.id) : nullptr;
        for (int s = 0; s < S; ++s) {
            const auto cell = bilinear_cell(L(s, 0), L(s, 1), grid_h, grid_w);
            if (!cell.any()) continue;
            const double ws = W(s, 0);
            const auto go = g.row(s / group_size);
            if (need_w || need_l) {
                // d coef / d fx per corner, then chain to normalized coords.
                const double dcx[4] = {-(1.0 - cell.fy), (1.0 - cell.fy), -cell.fy, cell.fy};
                const double dcy[4] = {-(1.0 - cell.fx), -cell.fx, (1.0 - cell.fx), cell.fx};
                double sampled_dot = 0.0, ddx = 0.0, ddy = 0.0;
                for (int t = 0; t < 4; ++t) {
                    if (cell.idx[t] < 0) continue;
                    const double rowdot = go.dot(V.row(cell.idx[t]));
                    sampled_dot += cell.coef[t] * rowdot;
                    ddx += dcx[t] * rowdot;
                    ddy += dcy[t] * rowdot;
                }
                if (need_w) (*gw)(s, 0) += sampled_dot;
                if (need_l) {
                    (*gl)(s, 0) += ws * ddx * grid_w;
                    (*gl)(s, 1) += ws * ddy * grid_h;
                }
            }
            if (need_v)
                for (int t = 0; t < 4; ++t)
                    if (cell.idx[t] >= 0) gv->row(cell.idx[t]) += (ws * cell.coef[t]) * go;
        }
    };
    return push(std::move(out), ng, std::move(back));
}

Var Tape::im2col(Var image, int h, int w, int channels, int ksize, int stride, int pad) {
    const Mat& X = val(image);
    if (X.rows() != static_cast<Eigen::Index>(h) * w || X.cols() != channels)
        throw ShapeError("im2col: image must be (h*w) x channels");
    const int ho = conv_out_dim(h, ksize, stride, pad);
    const int wo = conv_out_dim(w, ksize, stride, pad);
    if (ho <= 0 || wo <= 0) throw ShapeError("im2col: kernel does not fit input");
    const int kk = ksize * ksize;

    auto index = std::make_shared<std::vector<int>>(static_cast<std::size_t>(ho) * wo * kk);
    for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox)
            for (int ky = 0; ky < ksize; ++ky)
                for (int kx = 0; kx < ksize; ++kx) {
                    const int iy = oy * stride - pad + ky;
                    const int ix = ox * stride - pad + kx;
                    const bool in = iy >= 0 && iy < h && ix >= 0 && ix < w;
                    (*index)[(static_cast<std::size_t>(oy) * wo + ox) * kk + ky * ksize + kx] =
                        in ? iy * w + ix : -1;
                }

    Mat v = Mat::Zero(static_cast<Eigen::Index>(ho) * wo, static_cast<Eigen::Index>(channels) * kk);
    for (Eigen::Index r = 0; r < v.rows(); ++r)
        for (int t = 0; t < kk; ++t) {
            const int src = (*index)[r * kk + t];
            if (src < 0) continue;
            for (int c = 0; c < channels; ++c) v(r, c * kk + t) = X(src, c);
        }

    const bool ng = needs(image);
    const int oi = size();
    std::function<void()> back;
    if (ng) back = [this, image, oi, index, channels, kk] {
        if (!nodes_[image.id].needs_grad) return;
        Mat& gi = grad_ref(image.id);
        const Mat& g = nodes_[oi].grad;
        for (Eigen::Index r = 0; r < g.rows(); ++r)
            for (int t = 0; t < kk; ++t) {
                const int src = (*index)[r * kk + t];
                if (src < 0) continue;
                for (int c = 0; c < channels; ++c) gi(src, c) += g(r, c * kk + t);
            }
    };
    return push(std::move(v), ng, std::move(back));
}

// -------------------------------------------------------------------- misc

Mat inverse_sigmoid(const Mat& x, double eps) {
    return x.unaryExpr([eps](double v) { return inverse_sigmoid(v, eps); });
}

double inverse_sigmoid(double x, double eps) {
    const double c = std::min(std::max(x, eps), 1.0 - eps);
    return std::log(c / (1.0 - c));
}

}  // namespace edpose::ad
