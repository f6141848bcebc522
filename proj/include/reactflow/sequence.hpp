// Core sequence records shared by the compressor, datasets, and samplers.
#pragma once

#include <cstdint>

#include "reactflow/tensor.hpp"

namespace reactflow {

enum class Role : int64_t { actor = 0, reactor = 1 };

// Raw trajectory, frames x channels.
struct MotionSequence {
    Tensor frames;
    Role role = Role::actor;
    double fps = 30.0;

    int64_t length() const { return frames.rank() == 2 ? frames.dim(0) : 0; }
    int64_t channels() const { return frames.rank() == 2 ? frames.dim(1) : 0; }
    void validate() const;
};

// Compressed token sequence, one token per downsample_factor frames.
// original_frames records the pre-padding length so decoding can trim.
struct LatentSequence {
    Tensor tokens;
    Role role = Role::actor;
    int64_t original_frames = 0;

    int64_t size() const { return tokens.rank() == 2 ? tokens.dim(0) : 0; }
};

}  // namespace reactflow
