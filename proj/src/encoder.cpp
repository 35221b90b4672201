#include "edpose/encoder.hpp"

#include "edpose/errors.hpp"

#include <cmath>

namespace edpose {

Conv2d::Conv2d(const std::string& name, int in_ch, int out_ch, int stride, Rng& rng)
    : weight_(name + ".weight", nn::xavier_uniform(in_ch * 9, out_ch, rng)),
      bias_(name + ".bias", Mat::Zero(1, out_ch)),
      in_ch_(in_ch),
      stride_(stride) {}

ad::Var Conv2d::forward(ad::Tape& t, ad::Var x, LevelShape in, LevelShape* out) {
    ad::Var cols = t.im2col(x, in.h, in.w, in_ch_, 3, stride_, 1);
    if (out) *out = {ad::conv_out_dim(in.h, 3, stride_, 1), ad::conv_out_dim(in.w, 3, stride_, 1)};
    return t.add_rowvec(t.matmul(cols, weight_.mount(t)), bias_.mount(t));
}

void Conv2d::collect(std::vector<nn::Parameter*>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
}

ConvBackbone::ConvBackbone(const std::string& name, const EncoderConfig& cfg, Rng& rng)
    : cfg_(cfg) {
    if (cfg.n_levels < 1 || cfg.n_levels > 4)
        throw ConfigError("backbone: n_levels must be in [1,4]");
    const int c = cfg.base_channels;
    // Strides 2,4,8 reach the first tap; each further conv halves again.
    std::vector<int> widths{c, 2 * c, 3 * c};
    for (int l = 1; l < cfg.n_levels; ++l) widths.push_back((3 + l) * c);
    int in = 3;
    for (std::size_t i = 0; i < widths.size(); ++i) {
        convs_.emplace_back(name + ".conv" + std::to_string(i), in, widths[i], 2, rng);
        in = widths[i];
    }
    for (int l = 0; l < cfg.n_levels; ++l) {
        const int tap = 2 + l;
        tap_after_.push_back(tap);
        projections_.emplace_back(name + ".proj" + std::to_string(l),
                                  widths[static_cast<std::size_t>(tap)], cfg.dim, rng);
        norms_.emplace_back(name + ".norm" + std::to_string(l), cfg.dim);
    }
}

int ConvBackbone::total_stride() const { return 1 << static_cast<int>(convs_.size()); }

std::vector<ConvBackbone::LevelTokens> ConvBackbone::forward(ad::Tape& t, const Mat& image,
                                                             int h, int w) {
    if (h < 32 || w < 32) throw ShapeError("backbone: image sides must be at least 32");
    const int stride = total_stride();
    if (h % stride != 0 || w % stride != 0)
        throw ShapeError("backbone: image sides must be divisible by " + std::to_string(stride));
    if (image.rows() != static_cast<Eigen::Index>(h) * w || image.cols() != 3)
        throw ShapeError("backbone: image must be (h*w) x 3");

    std::vector<LevelTokens> out;
    ad::Var x = t.constant(image);
    LevelShape shape{h, w};
    std::size_t next_tap = 0;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
        x = t.relu(convs_[i].forward(t, x, shape, &shape));
        if (next_tap < tap_after_.size() &&
            static_cast<int>(i) == tap_after_[next_tap]) {
            ad::Var proj = projections_[next_tap].forward(t, x);
            out.push_back({norms_[next_tap].forward(t, proj), shape});
            ++next_tap;
        }
    }
    return out;
}

void ConvBackbone::collect(std::vector<nn::Parameter*>& out) {
    for (auto& c : convs_) c.collect(out);
    for (auto& p : projections_) p.collect(out);
    for (auto& n : norms_) n.collect(out);
}

DeformableAttention::DeformableAttention(const std::string& name, int dim,
                                         const DeformableAttnConfig& cfg, Rng& rng)
    : value_proj_(name + ".value", dim, dim, rng),
      offset_head_(name + ".offset", dim, cfg.n_levels * cfg.n_heads * cfg.n_points * 2, rng),
      weight_head_(name + ".weight_logits", dim, cfg.n_levels * cfg.n_heads * cfg.n_points, rng),
      cfg_(cfg),
      dim_(dim) {
    // Small initial offsets and near-uniform initial weights stabilize the
    // first training steps.
    offset_head_.weight().value() *= 0.1;
    weight_head_.weight().value() *= 0.1;
}

ad::Var DeformableAttention::forward(ad::Tape& t, ad::Var queries, ad::Var ref_boxes,
                                     const EncodedTokens& mem) {
    const int L = static_cast<int>(t.val(queries).rows());
    if (t.val(ref_boxes).rows() != L) throw ShapeError("deformable: query/ref count mismatch");
    if (static_cast<int>(mem.levels.size()) != cfg_.n_levels)
        throw ShapeError("deformable: level count mismatch");
    const int hp = cfg_.n_heads * cfg_.n_points;

    ad::Var values = value_proj_.forward(t, mem.tokens);
    ad::Var offsets = offset_head_.forward(t, queries);
    ad::Var weights = t.softmax_rows(weight_head_.forward(t, queries));

    ad::Var center = t.repeat_interleave_rows(t.slice_cols(ref_boxes, 0, 2), hp);
    ad::Var half_wh = t.repeat_interleave_rows(t.scale(t.slice_cols(ref_boxes, 2, 2), 0.5), hp);

    ad::Var out{};
    for (int l = 0; l < cfg_.n_levels; ++l) {
        ad::Var off_l = t.reshape(t.slice_cols(offsets, l * hp * 2, hp * 2), L * hp, 2);
        ad::Var w_l = t.reshape(t.slice_cols(weights, l * hp, hp), L * hp, 1);
        ad::Var locs = t.add(center, t.mul(off_l, half_wh));
        const LevelShape& shape = mem.levels[static_cast<std::size_t>(l)];
        ad::Var values_l =
            t.slice_rows(values, mem.level_start[static_cast<std::size_t>(l)], shape.h * shape.w);
        ad::Var sampled = t.deform_gather(values_l, locs, w_l, shape.h, shape.w, hp);
        out = out.valid() ? t.add(out, sampled) : sampled;
    }
    return out;
}

void DeformableAttention::collect(std::vector<nn::Parameter*>& out) {
    value_proj_.collect(out);
    offset_head_.collect(out);
    weight_head_.collect(out);
}

EncoderLayer::EncoderLayer(const std::string& name, const EncoderConfig& cfg, Rng& rng)
    : attn_(name + ".attn", cfg.dim, {cfg.n_heads, cfg.n_points, cfg.n_levels}, rng),
      attn_out_(name + ".attn_out", cfg.dim, cfg.dim, rng),
      norm1_(name + ".norm1", cfg.dim),
      ffn1_(name + ".ffn1", cfg.dim, cfg.ffn_dim, rng),
      ffn2_(name + ".ffn2", cfg.ffn_dim, cfg.dim, rng),
      norm2_(name + ".norm2", cfg.dim) {}

ad::Var EncoderLayer::forward(ad::Tape& t, ad::Var tokens, const EncodedTokens& mem) {
    ad::Var q = t.add(tokens, mem.pos_embed);
    EncodedTokens cur = mem;
    cur.tokens = tokens;
    ad::Var attended = attn_out_.forward(t, attn_.forward(t, q, t.constant(mem.positions), cur));
    ad::Var x = norm1_.forward(t, t.add(tokens, attended));
    ad::Var ff = ffn2_.forward(t, t.relu(ffn1_.forward(t, x)));
    return norm2_.forward(t, t.add(x, ff));
}

void EncoderLayer::collect(std::vector<nn::Parameter*>& out) {
    attn_.collect(out);
    attn_out_.collect(out);
    norm1_.collect(out);
    ffn1_.collect(out);
    ffn2_.collect(out);
    norm2_.collect(out);
}

Encoder::Encoder(const std::string& name, const EncoderConfig& cfg, Rng& rng)
    : backbone_(name + ".backbone", cfg, rng),
      level_embed_(name + ".level_embed", nn::xavier_uniform(cfg.n_levels, cfg.dim, rng)),
      cfg_(cfg) {
    if (cfg.dim % 8 != 0) throw ConfigError("encoder: dim must be divisible by 8");
    for (int i = 0; i < cfg.layers; ++i)
        layers_.emplace_back(name + ".layer" + std::to_string(i), cfg, rng);
}

Mat Encoder::token_positions(const std::vector<LevelShape>& levels) {
    int total = 0;
    for (const auto& s : levels) total += s.h * s.w;
    Mat pos(total, 4);
    int row = 0;
    for (std::size_t l = 0; l < levels.size(); ++l) {
        const double size = 0.05 * std::pow(2.0, static_cast<double>(l));
        for (int y = 0; y < levels[l].h; ++y)
            for (int x = 0; x < levels[l].w; ++x, ++row) {
                pos(row, 0) = (x + 0.5) / levels[l].w;
                pos(row, 1) = (y + 0.5) / levels[l].h;
                pos(row, 2) = size;
                pos(row, 3) = size;
            }
    }
    return pos;
}

EncodedTokens Encoder::encode(ad::Tape& t, const Mat& image, int h, int w) {
    auto level_tokens = backbone_.forward(t, image, h, w);

    EncodedTokens mem;
    int start = 0;
    for (const auto& lt : level_tokens) {
        mem.levels.push_back(lt.shape);
        mem.level_start.push_back(start);
        start += lt.shape.h * lt.shape.w;
        mem.tokens = mem.tokens.valid() ? t.concat_rows(mem.tokens, lt.tokens) : lt.tokens;
    }
    mem.positions = token_positions(mem.levels);

    std::vector<int> rows(static_cast<std::size_t>(start));
    int r = 0;
    for (std::size_t l = 0; l < mem.levels.size(); ++l)
        for (int i = 0; i < mem.levels[l].h * mem.levels[l].w; ++i)
            rows[static_cast<std::size_t>(r++)] = static_cast<int>(l);
    ad::Var sine = t.constant(ad::sine_embed_values(mem.positions, cfg_.dim / 4));
    mem.pos_embed = t.add(sine, t.gather_rows(level_embed_.mount(t), rows));

    for (auto& layer : layers_) mem.tokens = layer.forward(t, mem.tokens, mem);
    return mem;
}

void Encoder::collect(std::vector<nn::Parameter*>& out) {
    backbone_.collect(out);
    out.push_back(&level_embed_);
    for (auto& l : layers_) l.collect(out);
}

}  // namespace edpose
