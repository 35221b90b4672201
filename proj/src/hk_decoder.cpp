#include "edpose/hk_decoder.hpp"

#include "edpose/errors.hpp"

namespace edpose {

int InteractionMask::count_allowed() const {
    int n = 0;
    for (int i = 0; i < additive.rows(); ++i)
        for (int j = 0; j < additive.cols(); ++j)
            if (additive(i, j) == 0.0) ++n;
    return n;
}

InteractionMask build_interaction_mask(int m, int k, MaskStrategy strategy) {
    if (m < 1 || k < 1) throw ConfigError("interaction mask needs m, k >= 1");
    const int n = m + m * k;
    HKQueryBatch layout;
    layout.m = m;
    layout.k = k;
    InteractionMask mask;
    mask.additive = Mat::Constant(n, n, kNegInf);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const bool hi = layout.is_human_row(i);
            const bool hj = layout.is_human_row(j);
            const bool same = layout.instance_of(i) == layout.instance_of(j);
            bool ok = false;
            switch (strategy) {
                case MaskStrategy::Full:
                    ok = true;
                    break;
                case MaskStrategy::Ours:
                    ok = (hi && hj) || same;
                    break;
                case MaskStrategy::NoHK:
                    ok = (hi && hj) || (same && hi == hj);
                    break;
                case MaskStrategy::NoHH:
                    ok = (hi && hj) ? i == j : same;
                    break;
            }
            if (ok) mask.additive(i, j) = 0.0;
        }
    }
    return mask;
}

QueryExpansion::QueryExpansion(const std::string& name, int dim, int n_keypoints, Rng& rng)
    : k_(n_keypoints),
      table_(name + ".table", nn::xavier_uniform(n_keypoints, dim, rng)),
      size_weights_(name + ".size_weights", Mat::Zero(n_keypoints, 2)),
      center_head_(name + ".center", {dim, dim, 2 * n_keypoints}, rng),
      size_head_(name + ".size", {dim, dim, 2}, rng) {
    if (n_keypoints < 1) throw ConfigError("query expansion needs at least one keypoint");
}

HKQueryBatch QueryExpansion::expand(ad::Tape& t, const QueryBatch& humans, SizeInit strategy) {
    const int m = humans.size;
    ad::Var hpos = t.detach(humans.position);

    ad::Var kp_content = t.add(t.repeat_interleave_rows(humans.content, k_),
                               t.tile_rows(table_.mount(t), m));

    ad::Var offsets = t.reshape(center_head_.forward(t, humans.content), m * k_, 2);
    ad::Var hcenter = t.repeat_interleave_rows(t.slice_cols(hpos, 0, 2), k_);
    ad::Var centers = t.sigmoid(t.add(t.logit(hcenter), offsets));

    ad::Var hwh = t.repeat_interleave_rows(t.slice_cols(hpos, 2, 2), k_);
    ad::Var kwh;
    switch (strategy) {
        case SizeInit::None:
            kwh = t.constant(Mat::Constant(m * k_, 2, 1e-4));
            break;
        case SizeInit::Min:
            kwh = t.scale(hwh, 0.01);
            break;
        case SizeInit::Max:
            kwh = hwh;
            break;
        case SizeInit::Ffn:
            kwh = t.mul(t.repeat_interleave_rows(
                            t.sigmoid(size_head_.forward(t, humans.content)), k_),
                        hwh);
            break;
        case SizeInit::Learned:
            kwh = t.mul(t.tile_rows(t.sigmoid(size_weights_.mount(t)), m), hwh);
            break;
    }

    HKQueryBatch out;
    out.m = m;
    out.k = k_;
    out.content = t.concat_rows(humans.content, kp_content);
    out.position = t.concat_rows(hpos, t.concat_cols(centers, kwh));
    return out;
}

void QueryExpansion::collect(std::vector<nn::Parameter*>& out) {
    out.push_back(&table_);
    out.push_back(&size_weights_);
    center_head_.collect(out);
    size_head_.collect(out);
}

InteractiveAttention::InteractiveAttention(const std::string& name, int dim, int n_heads,
                                           Rng& rng)
    : dim_(dim),
      n_heads_(n_heads),
      q_(name + ".q", dim, dim, rng),
      k_(name + ".k", dim, dim, rng),
      v_(name + ".v", dim, dim, rng),
      out_(name + ".out", dim, dim, rng) {
    if (dim % n_heads != 0) throw ConfigError("attention dim must split across heads");
}

ad::Var InteractiveAttention::forward(ad::Tape& t, ad::Var content, ad::Var position,
                                      const InteractionMask& mask) {
    if (mask.additive.rows() != t.val(content).rows())
        throw ShapeError("interaction mask does not match query count");
    ad::Var pe = t.sine_embed(position, dim_ / 4);
    ad::Var qk = t.add(content, pe);
    ad::Var att = t.multihead_attention(q_.forward(t, qk), k_.forward(t, qk),
                                        v_.forward(t, content), n_heads_, &mask.additive);
    return out_.forward(t, att);
}

void InteractiveAttention::collect(std::vector<nn::Parameter*>& out) {
    q_.collect(out);
    k_.collect(out);
    v_.collect(out);
    out_.collect(out);
}

HKDecoderLayer::HKDecoderLayer(const std::string& name, const HKDecoderConfig& cfg, Rng& rng)
    : cfg_(cfg),
      self_(name + ".self", cfg.dim, cfg.n_heads, rng),
      norm1_(name + ".norm1", cfg.dim),
      cross_(name + ".cross", cfg.dim, {cfg.n_heads, cfg.n_points, cfg.n_levels}, rng),
      cross_out_(name + ".cross_out", cfg.dim, cfg.dim, rng),
      norm2_(name + ".norm2", cfg.dim),
      ffn1_(name + ".ffn1", cfg.dim, cfg.ffn_dim, rng),
      ffn2_(name + ".ffn2", cfg.ffn_dim, cfg.dim, rng),
      norm3_(name + ".norm3", cfg.dim),
      delta_(name + ".delta", {cfg.dim, cfg.dim, 4}, rng) {
    if (cfg.dim % 4 != 0) throw ConfigError("decoder dim must be divisible by 4");
    if (cfg.dim % cfg.n_heads != 0) throw ConfigError("decoder dim must split across heads");
}

HKQueryBatch HKDecoderLayer::forward(ad::Tape& t, const HKQueryBatch& q,
                                     const InteractionMask& mask, const EncodedTokens& mem) {
    ad::Var x1 = norm1_.forward(t, t.add(q.content, self_.forward(t, q.content, q.position, mask)));
    ad::Var pe = t.sine_embed(q.position, cfg_.dim / 4);
    ad::Var sampled = cross_.forward(t, t.add(x1, pe), q.position, mem);
    ad::Var x2 = norm2_.forward(t, t.add(x1, cross_out_.forward(t, sampled)));
    ad::Var ff = ffn2_.forward(t, t.relu(ffn1_.forward(t, x2)));
    ad::Var x3 = norm3_.forward(t, t.add(x2, ff));
    ad::Var pos = t.sigmoid(t.add(t.logit(q.position), delta_.forward(t, x3)));
    HKQueryBatch out = q;
    out.content = x3;
    out.position = pos;
    return out;
}

void HKDecoderLayer::collect(std::vector<nn::Parameter*>& out) {
    self_.collect(out);
    norm1_.collect(out);
    cross_.collect(out);
    cross_out_.collect(out);
    norm2_.collect(out);
    ffn1_.collect(out);
    ffn2_.collect(out);
    norm3_.collect(out);
    delta_.collect(out);
}

HKDecoder::HKDecoder(const std::string& name, const HKDecoderConfig& cfg, int n_keypoints,
                     Rng& rng)
    : cfg_(cfg), expansion_(name + ".expand", cfg.dim, n_keypoints, rng) {
    layers_.reserve(static_cast<std::size_t>(cfg.layers));
    for (int l = 0; l < cfg.layers; ++l)
        layers_.emplace_back(name + ".layer" + std::to_string(l), cfg, rng);
}

HKQueryBatch HKDecoder::expand(ad::Tape& t, const QueryBatch& humans, SizeInit strategy) {
    return expansion_.expand(t, humans, strategy);
}

std::pair<HKQueryBatch, HKDetections> HKDecoder::run(ad::Tape& t, HKQueryBatch q,
                                                     MaskStrategy strategy,
                                                     const EncodedTokens& mem,
                                                     nn::Linear& class_head) {
    const InteractionMask mask = build_interaction_mask(q.m, q.k, strategy);
    HKDetections det;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        q = layers_[l].forward(t, q, mask, mem);
        ad::Var humans = t.slice_rows(q.content, 0, q.m);
        det.logits.push_back(class_head.forward(t, humans));
        det.human_boxes.push_back(t.slice_rows(q.position, 0, q.m));
        det.keypoint_boxes.push_back(t.slice_rows(q.position, q.m, q.m * q.k));
        if (l + 1 < layers_.size()) q.position = t.detach(q.position);
    }
    return {q, det};
}

void HKDecoder::collect(std::vector<nn::Parameter*>& out) {
    expansion_.collect(out);
    for (auto& l : layers_) l.collect(out);
}

PoseOutputs predict_keypoints(ad::Tape& t, const HKQueryBatch& q, nn::Linear& class_head) {
    PoseOutputs out;
    out.m = q.m;
    out.k = q.k;
    ad::Var humans = t.slice_rows(q.content, 0, q.m);
    out.scores = class_head.forward(t, humans);
    out.human_boxes = t.slice_rows(q.position, 0, q.m);
    out.keypoint_boxes = t.slice_rows(q.position, q.m, q.m * q.k);
    out.keypoints = t.slice_cols(out.keypoint_boxes, 0, 2);
    return out;
}

}  // namespace edpose
