#pragma once

#include "edpose/config.hpp"
#include "edpose/nn.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace edpose {

/// Everything needed to resume or evaluate a run: the config it was built
/// from, progress counters, the data-order rng, and every parameter with its
/// optimizer moments.
struct Checkpoint {
    struct ParamBlob {
        Mat value;
        Mat moment1;  // empty until the optimizer has touched the parameter
        Mat moment2;
    };

    RunConfig config;
    std::int64_t epoch = 0;
    std::int64_t step = 0;
    std::int64_t optimizer_steps = 0;
    std::string rng_state;
    std::map<std::string, ParamBlob> params;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

/// Snapshots the model's parameters (and moments) into the blob map.
void capture_parameters(Checkpoint& ck, std::vector<nn::Parameter*> params);

/// Writes blobs back into the model's parameters by name. Missing or
/// shape-mismatched names raise SchemaError.
void restore_parameters(const Checkpoint& ck, std::vector<nn::Parameter*> params);

}  // namespace edpose
