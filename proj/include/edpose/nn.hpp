#pragma once

#include "edpose/rng.hpp"
#include "edpose/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace edpose::nn {

/// A named trainable matrix plus its optimizer state. Mounting places the
/// current value on a tape as a leaf; repeated mounts within the same tape
/// epoch return the same node so shared modules accumulate into one gradient.
class Parameter {
  public:
    Parameter() = default;
    Parameter(std::string name, Mat value)
        : name_(std::move(name)), value_(std::move(value)) {}

    const std::string& name() const { return name_; }
    Mat& value() { return value_; }
    const Mat& value() const { return value_; }
    Mat& moment1() { return m_; }
    Mat& moment2() { return v_; }

    ad::Var mount(ad::Tape& t) {
        // Epochs are globally unique, so they identify the tape instance too.
        if (mounted_epoch_ == t.epoch() && mounted_.valid()) return mounted_;
        mounted_ = t.leaf(value_);
        mounted_epoch_ = t.epoch();
        return mounted_;
    }

    /// Gradient accumulated on the tape this epoch; zeros when unused. Only
    /// the most recent mount is tracked, so read gradients before mounting
    /// the parameter anywhere else.
    Mat grad_on(const ad::Tape& t) const {
        if (mounted_epoch_ == t.epoch() && mounted_.valid()) {
            const Mat& g = t.grad(mounted_);
            if (g.size() != 0) return g;
        }
        return Mat::Zero(value_.rows(), value_.cols());
    }

  private:
    std::string name_;
    Mat value_;
    Mat m_, v_;
    ad::Var mounted_{};
    std::int64_t mounted_epoch_ = -1;
};

Mat xavier_uniform(int rows, int cols, Rng& rng);

class Linear {
  public:
    Linear() = default;
    Linear(const std::string& name, int in, int out, Rng& rng, double bias_init = 0.0);
    ad::Var forward(ad::Tape& t, ad::Var x);
    void collect(std::vector<Parameter*>& out);
    Parameter& weight() { return weight_; }
    Parameter& bias() { return bias_; }

  private:
    Parameter weight_;  // in x out
    Parameter bias_;    // 1 x out
};

/// Hidden layers with relu, linear head.
class Mlp {
  public:
    Mlp() = default;
    Mlp(const std::string& name, const std::vector<int>& dims, Rng& rng,
        double head_bias_init = 0.0);
    ad::Var forward(ad::Tape& t, ad::Var x);
    void collect(std::vector<Parameter*>& out);
    Linear& layer(int i) { return layers_[static_cast<std::size_t>(i)]; }

  private:
    std::vector<Linear> layers_;
};

class LayerNorm {
  public:
    LayerNorm() = default;
    LayerNorm(const std::string& name, int dim);
    ad::Var forward(ad::Tape& t, ad::Var x);
    void collect(std::vector<Parameter*>& out);

  private:
    Parameter gain_;
    Parameter shift_;
};

/// Decoupled weight decay; decay is skipped for parameters whose name ends
/// with ".bias", ".gain" or ".shift".
struct AdamW {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
    double clip_norm = 0.1;
    std::int64_t steps_taken = 0;

    /// One update from the gradients accumulated on the tape. Returns the
    /// pre-clip global gradient norm.
    double step(std::vector<Parameter*>& params, const ad::Tape& t);
};

bool decays(const Parameter& p);

}  // namespace edpose::nn
