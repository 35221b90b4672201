#pragma once

#include "edpose/checkpoint.hpp"
#include "edpose/data.hpp"
#include "edpose/eval.hpp"
#include "edpose/model.hpp"

#include <string>
#include <vector>

namespace edpose {

struct TrainOptions {
    bool deterministic = false;
};

struct TrainArtifacts {
    std::string metrics_path;
    std::string val_metrics_path;
    std::string best_checkpoint;
    std::string last_checkpoint;
    std::string curve_path;
    double best_ap = -1.0;  // stays -1 when no validation eval ran
    std::int64_t steps = 0;
};

/// Full training loop: per-step JSON-lines metrics, periodic validation,
/// best/last checkpoints, and a loss-curve SVG, all under out_dir.
TrainArtifacts train_run(const RunConfig& cfg, const std::string& out_dir,
                         const TrainOptions& opts = {});

/// Evaluates a checkpoint on the dataset in its own config, or on the
/// dataset of data_override when given. Writes eval.json under out_dir.
EvalResult eval_run(const std::string& checkpoint_path, const std::string& out_dir,
                    DatasetSpec::Split split, const RunConfig* data_override = nullptr);

struct InferArtifacts {
    std::string json_path;
    std::string overlay_path;  // empty unless rendered
    int n_instances = 0;
};

/// Runs a checkpoint on one image file: writes predictions.json and, when
/// render is set, an overlay image with human and keypoint boxes drawn in.
InferArtifacts infer_run(const std::string& checkpoint_path, const std::string& image_path,
                         const std::string& out_dir, double score_threshold, bool render);

/// Trains every ablation variant (interaction mask, keypoint-box size
/// initialization, fine query count) from the base config and writes a
/// comparison JSON with each variant's loss trajectory. Returns its path.
std::string ablate_run(const RunConfig& base, const std::string& out_dir,
                       const TrainOptions& opts = {});

/// Builds the split described by the config's data section. Synthetic
/// datasets are cached under $EDPOSE_CACHE_DIR when it is set.
std::vector<ImageSample> build_dataset(const RunConfig& cfg, DatasetSpec::Split split);

/// Forward pass on every sample, poses read back as scored instances.
EvalResult evaluate_model(PoseModel& model, const std::vector<ImageSample>& samples,
                          const std::vector<double>& oks_constants);

/// Keypoint falloff constants for a config's dataset: the standard 17-point
/// table when evaluating 17-point annotation files, uniform otherwise.
std::vector<double> eval_constants(const RunConfig& cfg);

}  // namespace edpose
