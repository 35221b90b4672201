#include "edpose/human_decoder.hpp"

#include "edpose/errors.hpp"

#include <algorithm>
#include <numeric>

namespace edpose {

std::vector<int> top_indices(const Mat& scores, int n) {
    if (scores.cols() != 1) throw ShapeError("top_indices: scores must be a column");
    if (n > scores.rows()) throw ConfigError("top_indices: asked for more rows than scored");
    std::vector<int> idx(static_cast<std::size_t>(scores.rows()));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return scores(a, 0) > scores(b, 0); });
    idx.resize(static_cast<std::size_t>(n));
    return idx;
}

HumanDecoderLayer::HumanDecoderLayer(const std::string& name, const HumanDecoderConfig& cfg,
                                     Rng& rng)
    : cfg_(cfg),
      sa_q_(name + ".sa_q", cfg.dim, cfg.dim, rng),
      sa_k_(name + ".sa_k", cfg.dim, cfg.dim, rng),
      sa_v_(name + ".sa_v", cfg.dim, cfg.dim, rng),
      sa_out_(name + ".sa_out", cfg.dim, cfg.dim, rng),
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

QueryBatch HumanDecoderLayer::forward(ad::Tape& t, const QueryBatch& q,
                                      const EncodedTokens& mem) {
    ad::Var pe = t.sine_embed(q.position, cfg_.dim / 4);
    ad::Var qk = t.add(q.content, pe);
    ad::Var attended = t.multihead_attention(sa_q_.forward(t, qk), sa_k_.forward(t, qk),
                                             sa_v_.forward(t, q.content), cfg_.n_heads);
    ad::Var x1 = norm1_.forward(t, t.add(q.content, sa_out_.forward(t, attended)));
    ad::Var sampled = cross_.forward(t, t.add(x1, pe), q.position, mem);
    ad::Var x2 = norm2_.forward(t, t.add(x1, cross_out_.forward(t, sampled)));
    ad::Var ff = ffn2_.forward(t, t.relu(ffn1_.forward(t, x2)));
    ad::Var x3 = norm3_.forward(t, t.add(x2, ff));
    ad::Var pos = t.sigmoid(t.add(t.logit(q.position), delta_.forward(t, x3)));
    return {x3, pos, q.size};
}

void HumanDecoderLayer::collect(std::vector<nn::Parameter*>& out) {
    sa_q_.collect(out);
    sa_k_.collect(out);
    sa_v_.collect(out);
    sa_out_.collect(out);
    norm1_.collect(out);
    cross_.collect(out);
    cross_out_.collect(out);
    norm2_.collect(out);
    ffn1_.collect(out);
    ffn2_.collect(out);
    norm3_.collect(out);
    delta_.collect(out);
}

HumanDecoder::HumanDecoder(const std::string& name, const HumanDecoderConfig& cfg, Rng& rng)
    : cfg_(cfg), proposal_(name + ".proposal", {cfg.dim, cfg.dim, 4}, rng) {
    layers_.reserve(static_cast<std::size_t>(cfg.layers));
    for (int l = 0; l < cfg.layers; ++l)
        layers_.emplace_back(name + ".layer" + std::to_string(l), cfg, rng);
}

QueryBatch HumanDecoder::coarse_query_select(ad::Tape& t, const EncodedTokens& mem, int n,
                                             nn::Linear& class_head) {
    if (n > mem.total()) throw ConfigError("coarse selection exceeds token count");
    ad::Var scores = class_head.forward(t, mem.tokens);
    std::vector<int> idx = top_indices(t.val(scores), n);
    ad::Var content = t.gather_rows(mem.tokens, idx);
    Mat ref(n, 4);
    for (int i = 0; i < n; ++i) ref.row(i) = mem.positions.row(idx[static_cast<std::size_t>(i)]);
    ad::Var pos =
        t.sigmoid(t.add(t.constant(ad::inverse_sigmoid(ref)), proposal_.forward(t, content)));
    return {content, pos, n};
}

std::pair<QueryBatch, HumanDetections> HumanDecoder::run(ad::Tape& t, QueryBatch q,
                                                         const EncodedTokens& mem,
                                                         nn::Linear& class_head) {
    HumanDetections det;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        q = layers_[l].forward(t, q, mem);
        det.logits.push_back(class_head.forward(t, q.content));
        det.boxes.push_back(q.position);
        if (l + 1 < layers_.size()) q.position = t.detach(q.position);
    }
    return {q, det};
}

QueryBatch HumanDecoder::fine_query_select(ad::Tape& t, const QueryBatch& q,
                                           const Mat& final_logits, int m) {
    if (m > q.size) throw ConfigError("fine selection exceeds candidate count");
    std::vector<int> idx = top_indices(final_logits, m);
    return {t.gather_rows(q.content, idx), t.gather_rows(q.position, idx), m};
}

void HumanDecoder::collect(std::vector<nn::Parameter*>& out) {
    proposal_.collect(out);
    for (auto& l : layers_) l.collect(out);
}

}  // namespace edpose
