#include "reactflow/flowfield.hpp"

#include <algorithm>
#include <cmath>

namespace reactflow {

PathSample PathSample::make(Tensor x, Tensor eps, double t) {
    RF_REQUIRE(x.same_shape(eps), "path sample: x / eps shape mismatch");
    RF_REQUIRE(t >= 0.0 && t <= 1.0, "path sample: t outside [0,1]");
    PathSample s;
    s.z_t = interpolate(x, eps, t);
    s.v = conditional_velocity(x, eps);
    s.x = std::move(x);
    s.eps = std::move(eps);
    s.t = t;
    return s;
}

void TimestepSamplerConfig::validate() const {
    RF_REQUIRE(sigma > 0.0, "timestep sampler: sigma must be positive");
    RF_REQUIRE(p_instant >= 0.0 && p_instant <= 1.0, "timestep sampler: p_instant outside [0,1]");
}

double logit_normal(double mu, double sigma, double normal_draw) {
    const double x = mu + sigma * normal_draw;
    return 1.0 / (1.0 + std::exp(-x));
}

TimestepPair sample_timestep_pair(const TimestepSamplerConfig& cfg, Rng& rng) {
    cfg.validate();
    if (rng.uniform01() <= cfg.p_instant) {
        const double tau = logit_normal(cfg.mu, cfg.sigma, rng.normal());
        return {tau, tau};
    }
    const double a = logit_normal(cfg.mu, cfg.sigma, rng.normal());
    const double b = logit_normal(cfg.mu, cfg.sigma, rng.normal());
    return {std::min(a, b), std::max(a, b)};
}

Tensor interpolate(const Tensor& x, const Tensor& eps, double t) {
    RF_REQUIRE(x.same_shape(eps), "interpolate: shape mismatch");
    Tensor z(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) z.at(i) = (1.0 - t) * x.at(i) + t * eps.at(i);
    return z;
}

Tensor conditional_velocity(const Tensor& x, const Tensor& eps) {
    RF_REQUIRE(x.same_shape(eps), "conditional_velocity: shape mismatch");
    return sub(eps, x);
}

Tensor meanflow_target(const VelocityField& field, const Tensor& z_t, TimestepPair pair,
                       const Tensor& v) {
    auto [u, du] = field.jvp(z_t, pair.r, pair.t, v, 0.0, 1.0);
    (void)u;
    if (pair.t == pair.r) return v;  // the (t - r) factor vanishes exactly
    return sub(v, scale(du, pair.t - pair.r));
}

Tensor cfg_target(const VelocityField& cond_field, const VelocityField& null_field, const Tensor& z_t,
                  TimestepPair pair, const Tensor& v, const CfgParams& cfg) {
    Tensor u_null = null_field.eval(z_t, pair.t, pair.t);
    Tensor v_tilde = add(scale(v, cfg.omega), scale(u_null, 1.0 - cfg.omega));
    auto [u, du] = cond_field.jvp(z_t, pair.r, pair.t, v_tilde, 0.0, 1.0);
    (void)u;
    if (pair.t == pair.r) return v_tilde;
    return sub(v_tilde, scale(du, pair.t - pair.r));
}

Value prediction_mse(const VelocityField& field, TapeCtx& ctx, const Tensor& z_t, TimestepPair pair,
                     const Tensor& u_tgt) {
    Value u_pred = field.build(ctx, z_t, pair.r, pair.t);
    Value diff = sub(u_pred, stop_gradient(ctx.constant(u_tgt)));
    return mean_all_v(mul(diff, diff));
}

Value meanflow_loss(const VelocityField& field, TapeCtx& ctx, const std::vector<PathSample>& batch,
                    const std::vector<TimestepPair>& pairs,
                    const std::vector<Tensor>* precomputed_targets) {
    RF_REQUIRE(!batch.empty(), "meanflow_loss: empty batch");
    RF_REQUIRE(batch.size() == pairs.size(), "meanflow_loss: batch/pair count mismatch");
    Value total;
    for (size_t i = 0; i < batch.size(); ++i) {
        Tensor u_tgt = precomputed_targets ? (*precomputed_targets)[i]
                                           : meanflow_target(field, batch[i].z_t, pairs[i], batch[i].v);
        Value li = prediction_mse(field, ctx, batch[i].z_t, pairs[i], u_tgt);
        RF_REQUIRE(std::isfinite(ctx.tape.val(li).item()),
                   "meanflow_loss: non-finite loss at batch index " + std::to_string(i));
        total = total.ok() ? add(total, li) : li;
    }
    return scale(total, 1.0 / static_cast<double>(batch.size()));
}

Tensor single_step_sample(const VelocityField& field, const Tensor& eps) {
    return sub(eps, field.eval(eps, 0.0, 1.0));
}

Tensor multi_step_euler_sample(const VelocityField& field, const Tensor& eps, int n_steps) {
    RF_REQUIRE(n_steps >= 1, "euler sampler: n_steps must be >= 1");
    Tensor z = eps;
    for (int k = 0; k < n_steps; ++k) {
        const double t_hi = 1.0 - static_cast<double>(k) / n_steps;
        const double t_lo = 1.0 - static_cast<double>(k + 1) / n_steps;
        Tensor u = field.eval(z, t_hi, t_hi);
        z = sub(z, scale(u, t_hi - t_lo));
    }
    return z;
}

double analytic_gaussian_velocity(double z, double t, double data_mean, double data_std) {
    RF_REQUIRE(data_std > 0.0, "analytic velocity: data_std must be positive");
    RF_REQUIRE(t >= 0.0 && t <= 1.0, "analytic velocity: t outside [0,1]");
    const double a = 1.0 - t;
    const double b = t;
    const double var = a * a * data_std * data_std + b * b;
    if (var == 0.0) {
        RF_REQUIRE(z == a * data_mean, "analytic velocity: degenerate interpolant, z off its mean");
        return -data_mean;
    }
    return (b - a * data_std * data_std) * (z - a * data_mean) / var - data_mean;
}

Tensor analytic_gaussian_velocity(const Tensor& z, double t, double data_mean, double data_std) {
    Tensor out(z.shape());
    for (int64_t i = 0; i < z.numel(); ++i)
        out.at(i) = analytic_gaussian_velocity(z.at(i), t, data_mean, data_std);
    return out;
}

Tensor AnalyticGaussianField::do_eval(const Tensor& z, double r, double t) const {
    RF_REQUIRE(r == t, "analytic field models the instantaneous velocity only (r must equal t)");
    return analytic_gaussian_velocity(z, t, mean_, std_);
}

std::pair<Tensor, Tensor> AnalyticGaussianField::do_jvp(const Tensor&, double, double, const Tensor&,
                                                        double, double) const {
    fail("analytic field: jvp not supported");
}

Value AnalyticGaussianField::do_build(TapeCtx&, const Tensor&, double, double) const {
    fail("analytic field: tape mode not supported");
}

}  // namespace reactflow
