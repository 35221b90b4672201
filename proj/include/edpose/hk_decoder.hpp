#pragma once

#include "edpose/human_decoder.hpp"

#include <string>
#include <utility>
#include <vector>

namespace edpose {

/// How keypoint boxes get their initial width/height from the owning human
/// box. None keeps an epsilon-size box so the sampler degenerates to a point.
enum class SizeInit { None, Min, Max, Ffn, Learned };

/// Which query pairs may attend to each other. Ours keeps human-human plus
/// within-instance pairs; Full allows everything; NoHK and NoHH drop one rule.
enum class MaskStrategy { Ours, Full, NoHK, NoHH };

/// Joint human + keypoint query state. Rows 0..M-1 are humans; row
/// M + m*K + k is keypoint k of instance m.
struct HKQueryBatch {
    ad::Var content;   // (M + M*K) x D
    ad::Var position;  // (M + M*K) x 4
    int m = 0;
    int k = 0;

    int rows() const { return m + m * k; }
    int human_row(int mi) const { return mi; }
    int keypoint_row(int mi, int ki) const { return m + mi * k + ki; }
    bool is_human_row(int r) const { return r < m; }
    int instance_of(int r) const { return r < m ? r : (r - m) / k; }
};

/// Additive attention mask: 0 where interaction is allowed, -inf elsewhere.
struct InteractionMask {
    Mat additive;
    bool allowed(int i, int j) const { return additive(i, j) == 0.0; }
    int count_allowed() const;
};

InteractionMask build_interaction_mask(int m, int k, MaskStrategy strategy);

/// Per-layer supervision targets from the joint decoder.
struct HKDetections {
    std::vector<ad::Var> logits;          // each M x 1
    std::vector<ad::Var> human_boxes;     // each M x 4
    std::vector<ad::Var> keypoint_boxes;  // each (M*K) x 4, instance-major
};

/// Final per-instance outputs. Keypoints are the centers of the refined
/// keypoint boxes, laid out instance-major.
struct PoseOutputs {
    ad::Var scores;          // M x 1 logits
    ad::Var human_boxes;     // M x 4
    ad::Var keypoints;       // (M*K) x 2
    ad::Var keypoint_boxes;  // (M*K) x 4
    int m = 0;
    int k = 0;
};

/// Turns M selected human queries into M*(1+K) joint queries: keypoint
/// content is human content plus a learned per-keypoint embedding, keypoint
/// centers come from a regressed offset, sizes from the chosen strategy.
class QueryExpansion {
  public:
    QueryExpansion(const std::string& name, int dim, int n_keypoints, Rng& rng);

    HKQueryBatch expand(ad::Tape& t, const QueryBatch& humans, SizeInit strategy);
    void collect(std::vector<nn::Parameter*>& out);

    nn::Parameter& table() { return table_; }
    nn::Parameter& size_weights() { return size_weights_; }
    nn::Mlp& center_head() { return center_head_; }
    nn::Mlp& size_head() { return size_head_; }
    int n_keypoints() const { return k_; }

  private:
    int k_;
    nn::Parameter table_;         // K x D
    nn::Parameter size_weights_;  // K x 2, sigmoid-bounded when applied
    nn::Mlp center_head_;         // D -> D -> 2K center offsets
    nn::Mlp size_head_;           // D -> D -> 2 size fractions
};

/// Masked self-attention over the joint query set.
class InteractiveAttention {
  public:
    InteractiveAttention(const std::string& name, int dim, int n_heads, Rng& rng);
    ad::Var forward(ad::Tape& t, ad::Var content, ad::Var position, const InteractionMask& mask);
    void collect(std::vector<nn::Parameter*>& out);

  private:
    int dim_, n_heads_;
    nn::Linear q_, k_, v_, out_;
};

struct HKDecoderConfig {
    int dim = 256;
    int n_heads = 8;
    int n_points = 4;
    int n_levels = 3;
    int ffn_dim = 1024;
    int layers = 4;
};

class HKDecoderLayer {
  public:
    HKDecoderLayer(const std::string& name, const HKDecoderConfig& cfg, Rng& rng);
    HKQueryBatch forward(ad::Tape& t, const HKQueryBatch& q, const InteractionMask& mask,
                         const EncodedTokens& mem);
    void collect(std::vector<nn::Parameter*>& out);
    nn::Mlp& delta_head() { return delta_; }

  private:
    HKDecoderConfig cfg_;
    InteractiveAttention self_;
    nn::LayerNorm norm1_;
    DeformableAttention cross_;
    nn::Linear cross_out_;
    nn::LayerNorm norm2_;
    nn::Linear ffn1_, ffn2_;
    nn::LayerNorm norm3_;
    nn::Mlp delta_;
};

class HKDecoder {
  public:
    HKDecoder(const std::string& name, const HKDecoderConfig& cfg, int n_keypoints, Rng& rng);

    /// Expansion detaches the human boxes: keypoint placement trains through
    /// its own heads, not by dragging the human box around.
    HKQueryBatch expand(ad::Tape& t, const QueryBatch& humans, SizeInit strategy);

    std::pair<HKQueryBatch, HKDetections> run(ad::Tape& t, HKQueryBatch q, MaskStrategy strategy,
                                              const EncodedTokens& mem, nn::Linear& class_head);

    QueryExpansion& expansion() { return expansion_; }
    HKDecoderLayer& layer(int i) { return layers_[static_cast<std::size_t>(i)]; }
    int n_layers() const { return static_cast<int>(layers_.size()); }
    void collect(std::vector<nn::Parameter*>& out);

  private:
    HKDecoderConfig cfg_;
    QueryExpansion expansion_;
    std::vector<HKDecoderLayer> layers_;
};

/// Reads final-layer queries back out as per-instance detections.
PoseOutputs predict_keypoints(ad::Tape& t, const HKQueryBatch& q, nn::Linear& class_head);

}  // namespace edpose
