#pragma once

#include "edpose/matching_losses.hpp"
#include "edpose/model.hpp"

#include <string>

namespace edpose {

/// One full run: model shape, optimizer schedule, dataset, and loss weights.
/// Mirrors the sectioned key = value config text one to one.
struct RunConfig {
    ModelConfig model;

    struct Optimization {
        double lr = 1e-4;
        double weight_decay = 1e-4;
        int decay_epoch = 55;  // 1-based epoch whose start multiplies lr by decay_factor
        double decay_factor = 0.1;
        int epochs = 60;
        int batch_size = 16;
        std::uint64_t seed = 0;
        std::int64_t max_steps = -1;  // stop after this many steps when >= 0
        int eval_period = 0;          // steps between val evals; 0 = end of each epoch
        double clip_norm = 0.1;
    } optimization;

    struct Data {
        std::string source = "synthetic";  // or "coco_json"
        std::string path;
        std::string val_path;
        std::uint64_t seed = 7;
        int n_images = 64;
        int n_val = 16;
        int people_min = 1;
        int people_max = 3;
        int image_size = 128;
        bool augment = true;
    } data;

    struct Loss {
        LossWeights weights;
        bool human_det_supervision = true;
    } loss;
};

/// Parses sectioned key = value text ([model], [optimization], [data],
/// [loss]; # starts a comment). Unknown sections, unknown keys, and
/// unparsable values raise ConfigError naming the offender.
RunConfig parse_run_config(const std::string& text);

RunConfig load_run_config(const std::string& path);

/// Emits text that parses back to an identical config; doubles keep full
/// precision.
std::string serialize_run_config(const RunConfig& cfg);

const char* to_string(SizeInit s);
const char* to_string(MaskStrategy m);
SizeInit size_init_from_string(const std::string& s);
MaskStrategy mask_strategy_from_string(const std::string& s);

}  // namespace edpose
