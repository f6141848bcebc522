// Average-velocity flow matching: interpolation paths, timestep sampling,
// JVP-based regression targets with trained-in guidance, and the one-step /
// multi-step samplers.
//
// Path convention throughout: t = 1 is standard normal noise, t = 0 is data,
// z_t = (1 - t) x + t eps, instantaneous velocity v = eps - x. One-step
// generation is z0 = eps - u(eps, 0, 1).
#pragma once

#include <utility>
#include <vector>

#include "reactflow/autodiff.hpp"
#include "reactflow/tensor.hpp"

namespace reactflow {

struct TimestepPair {
    double r = 0.0;
    double t = 1.0;
};

struct PathSample {
    Tensor x;
    Tensor eps;
    double t = 0.0;
    Tensor z_t;
    Tensor v;
    static PathSample make(Tensor x, Tensor eps, double t);
};

struct TimestepSamplerConfig {
    double mu = 0.0;
    double sigma = 1.0;
    double p_instant = 0.25;
    void validate() const;
};

struct CfgParams {
    double omega = 1.0;   // guidance strength; 1 disables the blend
    double p_drop = 0.1;  // probability of swapping conditions for null tokens in training
};

// A velocity model bound to fixed conditioning, exposed as a function of
// (z, r, t) in the three evaluation modes. Every call in any mode counts as
// one model evaluation; the counters back the single-step latency checks.
class VelocityField {
public:
    virtual ~VelocityField() = default;

    Tensor eval(const Tensor& z, double r, double t) const {
        ++calls_;
        return do_eval(z, r, t);
    }
    std::pair<Tensor, Tensor> jvp(const Tensor& z, double r, double t, const Tensor& dz, double dr,
                                  double dt) const {
        ++calls_;
        return do_jvp(z, r, t, dz, dr, dt);
    }
    Value build(TapeCtx& ctx, const Tensor& z, double r, double t) const {
        ++calls_;
        return do_build(ctx, z, r, t);
    }

    size_t calls() const { return calls_; }
    void reset_calls() const { calls_ = 0; }

protected:
    virtual Tensor do_eval(const Tensor& z, double r, double t) const = 0;
    virtual std::pair<Tensor, Tensor> do_jvp(const Tensor& z, double r, double t, const Tensor& dz,
                                             double dr, double dt) const = 0;
    virtual Value do_build(TapeCtx& ctx, const Tensor& z, double r, double t) const = 0;

private:
    mutable size_t calls_ = 0;
};

double logit_normal(double mu, double sigma, double normal_draw);

// Draws r <= t from a logit-normal; with probability p_instant collapses to
// the instantaneous case r = t (single draw).
TimestepPair sample_timestep_pair(const TimestepSamplerConfig& cfg, Rng& rng);

Tensor interpolate(const Tensor& x, const Tensor& eps, double t);
Tensor conditional_velocity(const Tensor& x, const Tensor& eps);

// u_tgt = v - (t - r) * (v . dz_u + dt_u), computed with one forward-mode
// pass along tangent (v, 0, 1). The result is a plain tensor that never
// joins a tape, which is the stop-gradient guarantee in this design: the
// target branch cannot leak gradients because it is never differentiable.
Tensor meanflow_target(const VelocityField& field, const Tensor& z_t, TimestepPair pair, const Tensor& v);

// Guided variant: v is first blended with the null-conditioned field at
// (t, t) into v~ = omega v + (1 - omega) u_null, then the same structure
// applies with tangent (v~, 0, 1).
Tensor cfg_target(const VelocityField& cond_field, const VelocityField& null_field, const Tensor& z_t,
                  TimestepPair pair, const Tensor& v, const CfgParams& cfg);

// Squared-error regression of the live prediction branch against a frozen
// target; gradient flows only through `field.build`.
Value prediction_mse(const VelocityField& field, TapeCtx& ctx, const Tensor& z_t, TimestepPair pair,
                     const Tensor& u_tgt);

// Batch loss over path samples; throws with the offending index if an
// element's loss is non-finite. Targets may be supplied precomputed; when
// absent they are recomputed per element (the two paths must agree exactly).
Value meanflow_loss(const VelocityField& field, TapeCtx& ctx, const std::vector<PathSample>& batch,
                    const std::vector<TimestepPair>& pairs,
                    const std::vector<Tensor>* precomputed_targets = nullptr);

Tensor single_step_sample(const VelocityField& field, const Tensor& eps);

// Euler integration of the instantaneous field u(z, t, t) from t = 1 down
// to t = 0. At n_steps = 1 this is eps - u(eps, 1, 1), which differs from
// the one-step rule eps - u(eps, 0, 1) unless the field is time-constant.
Tensor multi_step_euler_sample(const VelocityField& field, const Tensor& eps, int n_steps);

// Closed-form marginal velocity E[eps - x | z_t = z] for scalar data
// x ~ N(m, s^2), eps ~ N(0, 1) on the linear path. Derivation by joint
// Gaussian conditioning with a = 1 - t, b = t:
//   z = a x + b eps, Var(z) = a^2 s^2 + b^2,
//   E[x | z] = m + a s^2 (z - a m) / Var(z),
//   E[eps | z] = b (z - a m) / Var(z),
//   v*(z, t) = (b - a s^2)(z - a m) / Var(z) - m.
// Checks: t=1 gives z - m (posterior over x is the prior); t=0 gives -z + 0
// for m=0 (z is x exactly and E[eps] = 0); v*(0, t) = 0 for m=0 by symmetry.
double analytic_gaussian_velocity(double z, double t, double data_mean, double data_std);
Tensor analytic_gaussian_velocity(const Tensor& z, double t, double data_mean, double data_std);

// Oracle field wrapping the closed form; eval-only.
class AnalyticGaussianField : public VelocityField {
public:
    AnalyticGaussianField(double mean, double stddev) : mean_(mean), std_(stddev) {}

protected:
    Tensor do_eval(const Tensor& z, double r, double t) const override;
    std::pair<Tensor, Tensor> do_jvp(const Tensor&, double, double, const Tensor&, double,
                                     double) const override;
    Value do_build(TapeCtx&, const Tensor&, double, double) const override;

private:
    double mean_;
    double std_;
};

}  // namespace reactflow
