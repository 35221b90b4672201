#pragma once

#include "edpose/nn.hpp"
#include "edpose/tensor.hpp"

#include <string>
#include <vector>

namespace edpose {

struct LevelShape {
    int h = 0;
    int w = 0;
};

struct DeformableAttnConfig {
    int n_heads = 8;
    int n_points = 4;
    int n_levels = 3;
};

struct EncoderConfig {
    int dim = 256;          // model width D, divisible by 8
    int base_channels = 20; // backbone stage widths are multiples of this
    int n_levels = 3;       // pyramid levels at strides 8/16/32(/64)
    int n_heads = 8;
    int n_points = 4;
    int layers = 2;         // encoder depth E
    int ffn_dim = 1024;
};

/// Flattened multi-scale token field shared by the encoder and both decoders.
struct EncodedTokens {
    ad::Var tokens;                  // T x D
    ad::Var pos_embed;               // T x D: sine embedding plus level embedding
    Mat positions;                   // T x 4 reference boxes (constant)
    std::vector<LevelShape> levels;
    std::vector<int> level_start;
    int total() const { return level_start.empty() ? 0 : level_start.back() + levels.back().h * levels.back().w; }
};

/// 3x3 convolution (stride s, pad 1) over a flattened (h*w) x c image.
class Conv2d {
  public:
    Conv2d() = default;
    Conv2d(const std::string& name, int in_ch, int out_ch, int stride, Rng& rng);
    ad::Var forward(ad::Tape& t, ad::Var x, LevelShape in, LevelShape* out);
    void collect(std::vector<nn::Parameter*>& out);
    int stride() const { return stride_; }

  private:
    nn::Parameter weight_;  // (in_ch*9) x out_ch
    nn::Parameter bias_;    // 1 x out_ch
    int in_ch_ = 0;
    int stride_ = 1;
};

/// Small strided stack producing n_levels maps at strides 8/16/32(/64),
/// each projected to D channels and channel-normalized.
class ConvBackbone {
  public:
    ConvBackbone() = default;
    ConvBackbone(const std::string& name, const EncoderConfig& cfg, Rng& rng);

    struct LevelTokens {
        ad::Var tokens;  // (h*w) x D
        LevelShape shape;
    };
    std::vector<LevelTokens> forward(ad::Tape& t, const Mat& image, int h, int w);
    void collect(std::vector<nn::Parameter*>& out);
    int total_stride() const;

  private:
    std::vector<Conv2d> convs_;
    std::vector<int> tap_after_;  // conv index whose output feeds each level
    std::vector<nn::Linear> projections_;
    std::vector<nn::LayerNorm> norms_;
    EncoderConfig cfg_;
};

/// Sparse attention over the token field: each query emits n_heads*n_points
/// sampling offsets per level around its reference box, a jointly
/// softmax-normalized weight per sample, and receives the convex combination
/// of bilinearly interpolated value-projected tokens.
class DeformableAttention {
  public:
    DeformableAttention() = default;
    DeformableAttention(const std::string& name, int dim, const DeformableAttnConfig& cfg,
                        Rng& rng);

    /// queries: L x D (position encodings already added by the caller);
    /// ref_boxes: L x 4 (cx, cy, w, h) on the tape.
    ad::Var forward(ad::Tape& t, ad::Var queries, ad::Var ref_boxes, const EncodedTokens& mem);
    void collect(std::vector<nn::Parameter*>& out);

    nn::Linear& value_projection() { return value_proj_; }
    nn::Linear& offset_head() { return offset_head_; }
    nn::Linear& weight_head() { return weight_head_; }

  private:
    nn::Linear value_proj_;
    nn::Linear offset_head_;  // D -> n_levels*n_heads*n_points*2
    nn::Linear weight_head_;  // D -> n_levels*n_heads*n_points
    DeformableAttnConfig cfg_;
    int dim_ = 0;
};

class EncoderLayer {
  public:
    EncoderLayer() = default;
    EncoderLayer(const std::string& name, const EncoderConfig& cfg, Rng& rng);
    ad::Var forward(ad::Tape& t, ad::Var tokens, const EncodedTokens& mem);
    void collect(std::vector<nn::Parameter*>& out);

  private:
    DeformableAttention attn_;
    nn::Linear attn_out_;
    nn::LayerNorm norm1_;
    nn::Linear ffn1_, ffn2_;
    nn::LayerNorm norm2_;
};

/// Backbone + tokenization + E deformable self-attention layers.
class Encoder {
  public:
    Encoder() = default;
    Encoder(const std::string& name, const EncoderConfig& cfg, Rng& rng);

    EncodedTokens encode(ad::Tape& t, const Mat& image, int h, int w);
    void collect(std::vector<nn::Parameter*>& out);
    const EncoderConfig& config() const { return cfg_; }

    /// Normalized token reference boxes: cell centers with level-scaled sizes.
    static Mat token_positions(const std::vector<LevelShape>& levels);

  private:
    ConvBackbone backbone_;
    nn::Parameter level_embed_;  // n_levels x D
    std::vector<EncoderLayer> layers_;
    EncoderConfig cfg_;
};

}  // namespace edpose
