#include "edpose/model.hpp"

#include "edpose/errors.hpp"

#include <cmath>

namespace edpose {
namespace {

void check_model_config(const ModelConfig& c) {
    if (c.dim <= 0 || c.dim % c.n_heads != 0)
        throw ConfigError("dim must be a positive multiple of n_heads");
    if (c.n_keypoints <= 0) throw ConfigError("n_keypoints must be positive");
    if (c.n_coarse <= 0 || c.n_fine <= 0) throw ConfigError("query counts must be positive");
    if (c.n_fine > c.n_coarse) throw ConfigError("n_fine exceeds n_coarse");
    if (c.encoder_layers <= 0 || c.human_layers <= 0 || c.hk_layers <= 0)
        throw ConfigError("layer counts must be positive");
}

EncoderConfig encoder_config(const ModelConfig& c) {
    EncoderConfig e;
    e.dim = c.dim;
    e.base_channels = c.base_channels;
    e.n_levels = c.n_levels;
    e.n_heads = c.n_heads;
    e.n_points = c.n_points;
    e.layers = c.encoder_layers;
    e.ffn_dim = c.ffn_dim;
    return e;
}

HumanDecoderConfig human_config(const ModelConfig& c) {
    HumanDecoderConfig h;
    h.dim = c.dim;
    h.n_heads = c.n_heads;
    h.n_points = c.n_points;
    h.n_levels = c.n_levels;
    h.ffn_dim = c.ffn_dim;
    h.layers = c.human_layers;
    return h;
}

HKDecoderConfig hk_config(const ModelConfig& c) {
    HKDecoderConfig h;
    h.dim = c.dim;
    h.n_heads = c.n_heads;
    h.n_points = c.n_points;
    h.n_levels = c.n_levels;
    h.ffn_dim = c.ffn_dim;
    h.layers = c.hk_layers;
    return h;
}

}  // namespace

PoseModel::PoseModel(const ModelConfig& cfg, Rng& rng)
    : cfg_((check_model_config(cfg), cfg)),
      encoder_("encoder", encoder_config(cfg), rng),
      // Bias set so initial foreground probability is low, keeping the
      // negative focal term from swamping early updates.
      class_head_("class_head", cfg.dim, 1, rng, -4.0),
      human_("human", human_config(cfg), rng),
      hk_("hk", hk_config(cfg), cfg.n_keypoints, rng) {}

ModelOutputs PoseModel::forward(ad::Tape& t, const Mat& image, int h, int w) {
    EncodedTokens mem = encoder_.encode(t, image, h, w);
    if (mem.total() < cfg_.n_coarse)
        throw ConfigError("n_coarse " + std::to_string(cfg_.n_coarse) + " exceeds the " +
                          std::to_string(mem.total()) + " encoder tokens of a " +
                          std::to_string(h) + "x" + std::to_string(w) + " image");

    QueryBatch coarse = human_.coarse_query_select(t, mem, cfg_.n_coarse, class_head_);
    auto [refined, human_dets] = human_.run(t, coarse, mem, class_head_);
    QueryBatch fine =
        HumanDecoder::fine_query_select(t, refined, t.val(human_dets.logits.back()), cfg_.n_fine);

    HKQueryBatch joint = hk_.expand(t, fine, cfg_.size_init);
    auto [final_q, hk_dets] = hk_.run(t, joint, cfg_.mask, mem, class_head_);

    ModelOutputs out;
    out.human_layers = std::move(human_dets);
    out.hk_layers = std::move(hk_dets);
    out.pose = predict_keypoints(t, final_q, class_head_);
    return out;
}

std::vector<nn::Parameter*> PoseModel::parameters() {
    std::vector<nn::Parameter*> out;
    encoder_.collect(out);
    class_head_.collect(out);
    human_.collect(out);
    hk_.collect(out);
    return out;
}

std::vector<InstancePrediction> read_predictions(ad::Tape& t, const PoseOutputs& pose,
                                                 double score_threshold) {
    const Mat& logits = t.val(pose.scores);
    const Mat& human_boxes = t.val(pose.human_boxes);
    const Mat& keypoints = t.val(pose.keypoints);
    const Mat& keypoint_boxes = t.val(pose.keypoint_boxes);

    std::vector<InstancePrediction> out;
    for (int mi = 0; mi < pose.m; ++mi) {
        double score = 1.0 / (1.0 + std::exp(-logits(mi, 0)));
        if (score < score_threshold) continue;

        InstancePrediction inst;
        inst.score = score;
        inst.box = {human_boxes(mi, 0), human_boxes(mi, 1), human_boxes(mi, 2),
                    human_boxes(mi, 3)};
        inst.keypoints.points = Mat(pose.k, 2);
        inst.keypoints.visibility.assign(static_cast<std::size_t>(pose.k), 2);
        inst.keypoint_boxes.reserve(static_cast<std::size_t>(pose.k));
        for (int ki = 0; ki < pose.k; ++ki) {
            int row = mi * pose.k + ki;
            inst.keypoints.points(ki, 0) = keypoints(row, 0);
            inst.keypoints.points(ki, 1) = keypoints(row, 1);
            inst.keypoint_boxes.push_back({keypoint_boxes(row, 0), keypoint_boxes(row, 1),
                                           keypoint_boxes(row, 2), keypoint_boxes(row, 3)});
        }
        out.push_back(std::move(inst));
    }
    return out;
}

}  // namespace edpose
