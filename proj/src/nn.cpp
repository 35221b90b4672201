#include "edpose/nn.hpp"

#include "edpose/errors.hpp"

#include <cmath>

namespace edpose::nn {

Mat xavier_uniform(int rows, int cols, Rng& rng) {
    const double limit = std::sqrt(6.0 / (rows + cols));
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-limit, limit);
    return m;
}

Linear::Linear(const std::string& name, int in, int out, Rng& rng, double bias_init)
    : weight_(name + ".weight", xavier_uniform(in, out, rng)),
      bias_(name + ".bias", Mat::Constant(1, out, bias_init)) {}

ad::Var Linear::forward(ad::Tape& t, ad::Var x) {
    return t.add_rowvec(t.matmul(x, weight_.mount(t)), bias_.mount(t));
}

void Linear::collect(std::vector<Parameter*>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
}

Mlp::Mlp(const std::string& name, const std::vector<int>& dims, Rng& rng,
         double head_bias_init) {
    if (dims.size() < 2) throw ShapeError("mlp: need at least input and output dims");
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        const bool last = i + 2 == dims.size();
        layers_.emplace_back(name + ".l" + std::to_string(i), dims[i], dims[i + 1], rng,
                             last ? head_bias_init : 0.0);
    }
}

ad::Var Mlp::forward(ad::Tape& t, ad::Var x) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        x = layers_[i].forward(t, x);
        if (i + 1 < layers_.size()) x = t.relu(x);
    }
    return x;
}

void Mlp::collect(std::vector<Parameter*>& out) {
    for (auto& l : layers_) l.collect(out);
}

LayerNorm::LayerNorm(const std::string& name, int dim)
    : gain_(name + ".gain", Mat::Ones(1, dim)), shift_(name + ".shift", Mat::Zero(1, dim)) {}

ad::Var LayerNorm::forward(ad::Tape& t, ad::Var x) {
    return t.add_rowvec(t.mul_rowvec(t.layernorm_rows(x), gain_.mount(t)), shift_.mount(t));
}

void LayerNorm::collect(std::vector<Parameter*>& out) {
    out.push_back(&gain_);
    out.push_back(&shift_);
}

bool decays(const Parameter& p) {
    const std::string& n = p.name();
    for (const char* suffix : {".bias", ".gain", ".shift"}) {
        const std::string s(suffix);
        if (n.size() >= s.size() && n.compare(n.size() - s.size(), s.size(), s) == 0)
            return false;
    }
    return true;
}

double AdamW::step(std::vector<Parameter*>& params, const ad::Tape& t) {
    std::vector<Mat> grads;
    grads.reserve(params.size());
    double sq = 0.0;
    for (Parameter* p : params) {
        grads.push_back(p->grad_on(t));
        sq += grads.back().squaredNorm();
    }
    const double norm = std::sqrt(sq);
    const double scale = (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / (norm + 1e-12) : 1.0;

    ++steps_taken;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(steps_taken));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(steps_taken));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter& p = *params[i];
        Mat g = grads[i] * scale;
        if (p.moment1().size() == 0) {
            p.moment1() = Mat::Zero(g.rows(), g.cols());
            p.moment2() = Mat::Zero(g.rows(), g.cols());
        }
        p.moment1() = beta1 * p.moment1() + (1.0 - beta1) * g;
        p.moment2() = beta2 * p.moment2() + (1.0 - beta2) * g.cwiseProduct(g);
        const Mat mhat = p.moment1() / bc1;
        const Mat vhat = p.moment2() / bc2;
        Mat update = mhat.array() / (vhat.array().sqrt() + eps);
        if (decays(p)) update.array() += weight_decay * p.value().array();
        p.value() -= lr * update;
    }
    return norm;
}

}  // namespace edpose::nn
