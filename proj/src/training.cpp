#include "reactflow/training.hpp"

#include <algorithm>
#include <cmath>

namespace reactflow {

void TrainConfig::validate() const {
    RF_REQUIRE(lr > 0.0, "train config: lr must be positive");
    RF_REQUIRE(batch_size >= 1, "train config: batch_size must be >= 1");
    RF_REQUIRE(max_iterations >= 1, "train config: max_iterations must be >= 1");
    sampler.validate();
}

void AdamW::step(ParameterStore& params, const GradMap& grads) {
    RF_REQUIRE(grads.size() == params.size(), "adamw: gradient map does not match parameter store");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& [name, p] : params.entries()) {
        auto git = grads.find(name);
        RF_REQUIRE(git != grads.end(), "adamw: missing gradient for " + name);
        const Tensor& g = git->second;
        RF_REQUIRE(g.same_shape(p), "adamw: gradient shape mismatch for " + name);
        Tensor& m = m_.emplace(name, Tensor(p.shape())).first->second;
        Tensor& v = v_.emplace(name, Tensor(p.shape())).first->second;
        for (int64_t i = 0; i < p.numel(); ++i) {
            m.at(i) = cfg_.beta1 * m.at(i) + (1.0 - cfg_.beta1) * g.at(i);
            v.at(i) = cfg_.beta2 * v.at(i) + (1.0 - cfg_.beta2) * g.at(i) * g.at(i);
            const double mhat = m.at(i) / bc1;
            const double vhat = v.at(i) / bc2;
            p.at(i) -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p.at(i));
        }
    }
}

int scheduled_k(int iteration, const BsceSchedule& schedule, int max_iterations) {
    RF_REQUIRE(iteration >= 0 && iteration <= max_iterations, "scheduled_k: iteration out of range");
    RF_REQUIRE(schedule.k_max >= 1, "scheduled_k: k_max must be >= 1");
    const double ramp_end = schedule.ramp_fraction * static_cast<double>(max_iterations);
    double frac = ramp_end > 0.0 ? static_cast<double>(iteration) / ramp_end : 1.0;
    frac = std::clamp(frac, 0.0, 1.0);
    const int k = 1 + static_cast<int>(std::floor(frac * static_cast<double>(schedule.k_max - 1)));
    return std::clamp(k, 1, schedule.k_max);
}

}  // namespace reactflow
