#pragma once

#include "edpose/encoder.hpp"
#include "edpose/hk_decoder.hpp"
#include "edpose/human_decoder.hpp"
#include "edpose/matching_losses.hpp"

#include <string>
#include <vector>

namespace edpose {

struct ModelConfig {
    int dim = 256;
    int n_keypoints = 17;
    int n_coarse = 900;  // queries kept after the coarse selection
    int n_fine = 100;    // human queries expanded into keypoint queries
    int encoder_layers = 2;
    int human_layers = 2;
    int hk_layers = 4;
    int n_heads = 8;
    int n_points = 4;
    int n_levels = 3;
    int ffn_dim = 1024;
    int base_channels = 20;
    SizeInit size_init = SizeInit::Ffn;
    MaskStrategy mask = MaskStrategy::Ours;
};

/// Everything one forward pass produces: per-layer detections from both
/// decoder stacks (for deep supervision) plus the final poses.
struct ModelOutputs {
    HumanDetections human_layers;
    HKDetections hk_layers;
    PoseOutputs pose;
};

/// One decoded instance, in normalized image coordinates.
struct InstancePrediction {
    double score = 0.0;  // sigmoid of the class logit
    BoxXYWH box;
    KeypointSet keypoints;  // visibility all 2
    std::vector<BoxXYWH> keypoint_boxes;
};

/// The full detector: conv backbone and encoder, a human box decoder over the
/// selected coarse queries, and a joint decoder over the human queries
/// expanded with one query per keypoint. A single class head scores encoder
/// tokens, human queries, and the final poses alike.
class PoseModel {
public:
    PoseModel(const ModelConfig& cfg, Rng& rng);

    /// image is (h*w) x 3 row-major RGB in [0, 1]; sides must suit the
    /// backbone. Throws ConfigError when the image yields fewer encoder
    /// tokens than n_coarse.
    ModelOutputs forward(ad::Tape& t, const Mat& image, int h, int w);

    std::vector<nn::Parameter*> parameters();

    const ModelConfig& config() const { return cfg_; }
    nn::Linear& class_head() { return class_head_; }
    Encoder& encoder() { return encoder_; }
    HumanDecoder& human_decoder() { return human_; }
    HKDecoder& hk_decoder() { return hk_; }

private:
    ModelConfig cfg_;
    Encoder encoder_;
    nn::Linear class_head_;
    HumanDecoder human_;
    HKDecoder hk_;
};

/// Reads the final poses off the tape as plain instances, keeping those with
/// score >= threshold in prediction order.
std::vector<InstancePrediction> read_predictions(ad::Tape& t, const PoseOutputs& pose,
                                                 double score_threshold);

}  // namespace edpose
