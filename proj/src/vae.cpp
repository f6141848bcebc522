#include "reactflow/vae.hpp"

#include <cmath>

namespace reactflow {

void MotionSequence::validate() const {
    RF_REQUIRE(frames.rank() == 2 && frames.dim(0) > 0, "motion sequence: empty or malformed frames");
    RF_REQUIRE(frames.all_finite(), "motion sequence: non-finite values");
}

void VaeConfig::validate() const {
    RF_REQUIRE(channels >= 1 && hidden >= 1 && latent_dim >= 1, "vae config: sizes must be >= 1");
    RF_REQUIRE(n_down_blocks >= 1 && layers_per_block >= 0, "vae config: block counts invalid");
    RF_REQUIRE(downsample_factor == (int64_t{1} << n_down_blocks),
               "vae config: downsample_factor must equal 2^n_down_blocks");
    RF_REQUIRE(kl_weight >= 0.0 && vel_weight >= 0.0, "vae config: negative loss weight");
}

VaeConfig VaeConfig::desk() { return VaeConfig{}; }

VaeConfig VaeConfig::paper() {
    VaeConfig c;
    c.hidden = 256;
    c.layers_per_block = 3;
    return c;
}

MotionVae::MotionVae(VaeConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void MotionVae::init_params(ParameterStore& s, Rng& rng) const {
    auto init = [&](const std::string& prefix, int64_t in, int64_t out) {
        Tensor w = rng.normal_tensor({in, out});
        w.scale_(1.0 / std::sqrt(static_cast<double>(in)));
        s.create(prefix + ".w", std::move(w));
        s.create(prefix + ".b", Tensor({out}));
    };
    Tensor role = rng.normal_tensor({2, cfg_.hidden});
    role.scale_(0.02);
    s.create("vae.role_table", std::move(role));

    init("vae.enc.in", cfg_.channels, cfg_.hidden);
    for (int b = 0; b < cfg_.n_down_blocks; ++b) {
        const std::string bp = "vae.enc.b" + std::to_string(b);
        init(bp + ".down", 4 * cfg_.hidden, cfg_.hidden);
        for (int j = 0; j < cfg_.layers_per_block; ++j)
            init(bp + ".conv" + std::to_string(j), 3 * cfg_.hidden, cfg_.hidden);
    }
    init("vae.enc.mean", cfg_.hidden, cfg_.latent_dim);
    init("vae.enc.logvar", cfg_.hidden, cfg_.latent_dim);

    init("vae.dec.in", cfg_.latent_dim, cfg_.hidden);
    for (int b = 0; b < cfg_.n_down_blocks; ++b) {
        const std::string bp = "vae.dec.b" + std::to_string(b);
        init(bp + ".up", 3 * cfg_.hidden, cfg_.hidden);
        for (int j = 0; j < cfg_.layers_per_block; ++j)
            init(bp + ".conv" + std::to_string(j), 3 * cfg_.hidden, cfg_.hidden);
    }
    init("vae.dec.out", cfg_.hidden, cfg_.channels);
}

Tensor MotionVae::pad_frames(const Tensor& frames) const {
    const int64_t T = frames.dim(0);
    const int64_t padded = ((T + cfg_.downsample_factor - 1) / cfg_.downsample_factor) *
                           cfg_.downsample_factor;
    if (padded == T) return frames;
    return concat(frames, Tensor({padded - T, frames.dim(1)}), 0);
}

std::pair<LatentSequence, LatentSequence> MotionVae::encode(const ParameterStore& store,
                                                            const MotionSequence& x) const {
    x.validate();
    RF_REQUIRE(x.channels() == cfg_.channels, "vae encode: channel count mismatch");
    Tensor padded = pad_frames(x.frames);
    EvalCtx ctx(store);
    auto [mean, logvar] = encode_fwd(ctx, padded, x.role);
    LatentSequence m{std::move(mean), x.role, x.length()};
    LatentSequence lv{std::move(logvar), x.role, x.length()};
    return {std::move(m), std::move(lv)};
}

LatentSequence MotionVae::reparameterize(const LatentSequence& mean, const LatentSequence& logvar,
                                         Rng& rng) const {
    RF_REQUIRE(mean.tokens.same_shape(logvar.tokens), "reparameterize: shape mismatch");
    Tensor out(mean.tokens.shape());
    for (int64_t i = 0; i < out.numel(); ++i)
        out.at(i) = mean.tokens.at(i) + std::exp(0.5 * logvar.tokens.at(i)) * rng.normal();
    return LatentSequence{std::move(out), mean.role, mean.original_frames};
}

MotionSequence MotionVae::decode(const ParameterStore& store, const LatentSequence& z) const {
    RF_REQUIRE(z.tokens.rank() == 2 && z.tokens.dim(1) == cfg_.latent_dim, "vae decode: bad token shape");
    EvalCtx ctx(store);
    Tensor frames = decode_fwd(ctx, z.tokens, z.size(), z.role);
    const int64_t keep = z.original_frames > 0 ? z.original_frames : frames.dim(0);
    RF_REQUIRE(keep <= frames.dim(0), "vae decode: recorded length exceeds decoded frames");
    MotionSequence out;
    out.frames = slice(frames, 0, 0, keep);
    out.role = z.role;
    return out;
}

Value MotionVae::loss(TapeCtx& ctx, const MotionSequence& x, Rng& rng) const {
    x.validate();
    Tensor padded = pad_frames(x.frames);
    auto [mean, logvar] = encode_fwd(ctx, padded, x.role);

    // z = mean + exp(logvar / 2) * eta
    const Shape zshape = ctx.tape.val(mean).shape();
    Value eta = ctx.constant(rng.normal_tensor(zshape));
    Value z = add(mean, mul(exp_t(scale(logvar, 0.5)), eta));

    Value recon_frames = decode_fwd(ctx, z, zshape[0], x.role);
    Value target = ctx.constant(padded);
    Value diff = sub(recon_frames, target);
    Value recon = mean_all_v(mul(diff, diff));

    // closed-form diagonal KL: per entry 0.5 (mu^2 + e^lv - 1 - lv)
    Value kl_terms = sub(add(mul(mean, mean), exp_t(logvar)), add_scalar(logvar, 1.0));
    Value kl = scale(mean_all_v(kl_terms), 0.5);

    const int64_t T = padded.dim(0);
    Value dpred = sub(slice(recon_frames, 0, 1, T - 1), slice(recon_frames, 0, 0, T - 1));
    Value dtrue = ctx.constant(sub(slice(padded, 0, 1, T - 1), slice(padded, 0, 0, T - 1)));
    Value dv = sub(dpred, dtrue);
    Value vel = mean_all_v(mul(dv, dv));

    Value total = add(recon, add(scale(kl, cfg_.kl_weight), scale(vel, cfg_.vel_weight)));
    RF_REQUIRE(std::isfinite(ctx.tape.val(total).item()), "vae loss: non-finite value");
    return total;
}

}  // namespace reactflow
