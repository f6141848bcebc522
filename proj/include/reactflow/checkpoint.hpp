// Versioned binary checkpoints: a kind tag, a config JSON blob, named
// parameter tensors, and optional trainer state (optimizer moments, step
// counts, rng words) so interrupted runs resume exactly.
#pragma once

#include <map>
#include <string>
#include <vector>

#include "reactflow/autodiff.hpp"

namespace reactflow {

struct Checkpoint {
    std::string kind;         // "vae" | "offline" | "online" | "embedder"
    std::string config_json;  // serialized config, consumer-defined schema
    ParameterStore params;

    bool has_trainer_state = false;
    int64_t iteration = 0;
    int64_t opt_steps = 0;
    std::map<std::string, Tensor> opt_m;
    std::map<std::string, Tensor> opt_v;
    std::vector<uint64_t> rng_state;
};

// Atomic write: the file appears complete or not at all.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

uint64_t file_hash(const std::string& path);

}  // namespace reactflow
