#pragma once

#include "edpose/encoder.hpp"
#include "edpose/nn.hpp"

#include <string>
#include <utility>
#include <vector>

namespace edpose {

/// Paired per-query state. Content rows and position rows always refer to the
/// same candidate; every selection gathers both with one index list.
struct QueryBatch {
    ad::Var content;   // L x D
    ad::Var position;  // L x 4 boxes (cx, cy, w, h) in (0,1)
    int size = 0;
};

/// Per-layer classification logits and boxes, one entry per decoder layer.
struct HumanDetections {
    std::vector<ad::Var> logits;  // each L x 1
    std::vector<ad::Var> boxes;   // each L x 4
};

struct HumanDecoderConfig {
    int dim = 256;
    int n_heads = 8;
    int n_points = 4;
    int n_levels = 3;
    int ffn_dim = 1024;
    int layers = 2;
};

/// Indices of the n largest scores, descending; ties keep the lower index.
std::vector<int> top_indices(const Mat& scores, int n);

/// Self-attention over candidates, deformable cross-attention into the token
/// field, feed-forward, then a box update in inverse-sigmoid space.
class HumanDecoderLayer {
  public:
    HumanDecoderLayer(const std::string& name, const HumanDecoderConfig& cfg, Rng& rng);

    QueryBatch forward(ad::Tape& t, const QueryBatch& q, const EncodedTokens& mem);
    void collect(std::vector<nn::Parameter*>& out);
    nn::Mlp& delta_head() { return delta_; }

  private:
    HumanDecoderConfig cfg_;
    nn::Linear sa_q_, sa_k_, sa_v_, sa_out_;
    nn::LayerNorm norm1_;
    DeformableAttention cross_;
    nn::Linear cross_out_;
    nn::LayerNorm norm2_;
    nn::Linear ffn1_, ffn2_;
    nn::LayerNorm norm3_;
    nn::Mlp delta_;
};

/// Candidate selection and the box-refining decoder stack. The classification
/// head is shared with coarse scoring and later stages, so the caller owns it
/// and passes it in.
class HumanDecoder {
  public:
    HumanDecoder(const std::string& name, const HumanDecoderConfig& cfg, Rng& rng);

    /// Scores all tokens with class_head, keeps the top n, and turns each kept
    /// token's grid cell into a box proposal via a learned offset head.
    QueryBatch coarse_query_select(ad::Tape& t, const EncodedTokens& mem, int n,
                                   nn::Linear& class_head);

    /// Runs the layer stack. Boxes and logits are recorded at every layer;
    /// positions are detached between layers so each refinement trains
    /// against its own supervision.
    std::pair<QueryBatch, HumanDetections> run(ad::Tape& t, QueryBatch q,
                                               const EncodedTokens& mem, nn::Linear& class_head);

    /// Keeps the top m rows by final-layer logit, content and position paired.
    static QueryBatch fine_query_select(ad::Tape& t, const QueryBatch& q, const Mat& final_logits,
                                        int m);

    HumanDecoderLayer& layer(int i) { return layers_[static_cast<std::size_t>(i)]; }
    nn::Mlp& proposal_head() { return proposal_; }
    void collect(std::vector<nn::Parameter*>& out);

  private:
    HumanDecoderConfig cfg_;
    nn::Mlp proposal_;
    std::vector<HumanDecoderLayer> layers_;
};

}  // namespace edpose
