// Synthetic actor-reactor sequence datasets. Reactor responses are
// deterministic functions of the actor track and the label (plus optional
// jitter), so rollout drift can be measured against an exact reference.
#pragma once

#include <string>
#include <vector>

#include "reactflow/sequence.hpp"
#include "reactflow/vae.hpp"

namespace reactflow {

struct DatasetConfig {
    int64_t n_pairs = 5000;
    int64_t length = 64;   // frames per sequence
    int64_t n_labels = 3;
    double jitter = 0.01;  // reactor position noise
    uint64_t seed = 0;
    void validate() const;
};

struct MotionPair {
    MotionSequence actor;
    MotionSequence reactor;
    int64_t label = 0;
};

enum class Split : uint8_t { train = 0, test = 1 };

struct Dataset {
    std::vector<MotionPair> pairs;
    Split split = Split::train;
    DatasetConfig config;
    uint64_t content_hash() const;
};

// Channels are (px, py, vx, vy) with v the one-frame position difference
// (zero at frame 0).
Tensor positions_to_frames(const Tensor& pos);
Tensor frames_to_positions(const Tensor& frames);

// Label responses on position tracks, jitter-free:
//   0: mirrored pursuit, r[t] = -a[max(0, t - 4)]
//   1: orbit, r[t] = a[t] + R (cos wt, sin wt)
//   2: evasion, r[t] = a[t] + d * a[t] / (|a[t]| + eps)
// Labels past 2 cycle through the rules with a scaled response.
Tensor analytic_reactor_positions(const Tensor& actor_pos, int64_t label);
MotionSequence analytic_reactor(const MotionSequence& actor, int64_t label);

Dataset make_toy_dataset(const DatasetConfig& cfg, Split split);

struct TokenizedPair {
    LatentSequence actor;
    LatentSequence reactor;
    int64_t label = 0;
};

// Posterior means, no sampling, so tokenization is deterministic.
TokenizedPair tokenize(const MotionVae& vae, const ParameterStore& vae_params, const MotionPair& pair);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);
void export_jsonl(const Dataset& ds, const std::string& path);

}  // namespace reactflow
