// Optimizer, rollout-depth schedule, and the training strategies for the
// offline and online generators.
#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "reactflow/autodiff.hpp"
#include "reactflow/flowfield.hpp"
#include "reactflow/models.hpp"
#include "reactflow/vae.hpp"

namespace reactflow {

struct TrainConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    int batch_size = 64;
    int max_iterations = 1000;
    uint64_t seed = 0;
    CfgParams cfg;
    TimestepSamplerConfig sampler;
    void validate() const;
};

// Decoupled weight decay Adam. Moments keyed like the store; step count is
// part of the state so bias correction survives checkpointing.
class AdamW {
public:
    AdamW() = default;
    explicit AdamW(const TrainConfig& cfg) : cfg_(cfg) {}

    void step(ParameterStore& params, const GradMap& grads);
    int64_t steps_taken() const { return t_; }

    const TrainConfig& config() const { return cfg_; }

    // state access for checkpointing
    std::map<std::string, Tensor>& moment1() { return m_; }
    std::map<std::string, Tensor>& moment2() { return v_; }
    void set_steps(int64_t t) { t_ = t; }

private:
    TrainConfig cfg_;
    std::map<std::string, Tensor> m_;
    std::map<std::string, Tensor> v_;
    int64_t t_ = 0;
};

struct BsceSchedule {
    int k_max = 8;
    double ramp_fraction = 0.5;  // reach k_max after this fraction of training
};

// 1 at iteration 0, then a linear ramp to k_max over the first
// ramp_fraction of training; nondecreasing and clamped to [1, k_max].
int scheduled_k(int iteration, const BsceSchedule& schedule, int max_iterations);

// Progressive-rollout mixing fraction: same ramp shape, 0 at iteration 0.
double rollout_mix_fraction(int iteration, double ramp_fraction, int max_iterations);

// ---------------------------------------------------------------------------
// Online training strategies over pre-tokenized sequences. Each batch item
// rolls out independently under its own derived rng stream (seed, iteration,
// item index), so items are order-independent and the degenerate-setting
// equivalences between strategies hold bit for bit.

enum class Strategy { bsce, gte, rollout };
enum class Objective { meanflow, rectflow };

struct OnlineTrainItem {
    Tensor actor_tokens;    // [n, L]
    Tensor reactor_tokens;  // [n, L]
    int64_t label = 0;
};

struct OnlineStepStats {
    double loss = 0.0;
    int k = 1;                            // rollout depth in effect
    uint64_t history_generation_calls = 0;  // predictor calls spent producing history tokens
    uint64_t history_tokens_generated = 0;
    double wall_ms = 0.0;
};

struct OnlineTrainOptions {
    Objective objective = Objective::meanflow;
    int rf_steps = 10;  // sampler steps for the instantaneous-field baseline
    BsceSchedule schedule;
    double mix_ramp_fraction = 0.5;  // rollout strategy ramp
};

// One optimizer update. The context buffer is filled per strategy:
//   bsce    — both history streams generated, positions 1..K rolled out
//   gte     — ground-truth history, one random position below min(K, n)
//   rollout — ground-truth actor history, reactor history mixed by coin
OnlineStepStats online_train_step(const OnlineModel& model, ParameterStore& params, AdamW& opt,
                                  const std::vector<OnlineTrainItem>& batch, Strategy strategy,
                                  int iteration, const OnlineTrainOptions& options,
                                  const TrainConfig& cfg);

OnlineStepStats bsce_train_step(const OnlineModel& model, ParameterStore& params, AdamW& opt,
                                const std::vector<OnlineTrainItem>& batch, int iteration,
                                const OnlineTrainOptions& options, const TrainConfig& cfg);
OnlineStepStats gte_train_step(const OnlineModel& model, ParameterStore& params, AdamW& opt,
                               const std::vector<OnlineTrainItem>& batch, int iteration,
                               const OnlineTrainOptions& options, const TrainConfig& cfg);
OnlineStepStats rollout_train_step(const OnlineModel& model, ParameterStore& params, AdamW& opt,
                                   const std::vector<OnlineTrainItem>& batch, int iteration,
                                   const OnlineTrainOptions& options, const TrainConfig& cfg);

// Offline trainer: one (r, t) pair per item over the whole token sequence,
// conditions dropped to null with p_drop, guided target when omega > 1.
struct OfflineStepStats {
    double loss = 0.0;
    double wall_ms = 0.0;
};
OfflineStepStats remflow_train_step(const OfflineFlowModel& model, ParameterStore& params, AdamW& opt,
                                    const std::vector<OnlineTrainItem>& batch, int iteration,
                                    Objective objective, const TrainConfig& cfg);

// Compressor trainer, one update over a batch of sequences.
double vae_train_step(const MotionVae& vae, ParameterStore& params, AdamW& opt,
                      const std::vector<const MotionSequence*>& batch, Rng& rng);

}  // namespace reactflow
