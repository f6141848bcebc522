#include <cmath>

#include "doctest.h"
#include "reactflow/training.hpp"
#include "reactflow/vae.hpp"

using namespace reactflow;

namespace {

VaeConfig tiny_vae() {
    VaeConfig cfg;
    cfg.channels = 3;
    cfg.hidden = 24;
    cfg.latent_dim = 6;
    cfg.layers_per_block = 1;
    return cfg;
}

MotionSequence smooth_sequence(int64_t T, int64_t D, Rng& rng, Role role = Role::actor) {
    MotionSequence m;
    m.frames = Tensor({T, D});
    for (int64_t c = 0; c < D; ++c) {
        const double a = rng.normal(), f = 0.05 + 0.1 * std::abs(rng.normal()), p = rng.normal();
        for (int64_t t = 0; t < T; ++t) m.frames.at2(t, c) = a * std::sin(f * static_cast<double>(t) + p);
    }
    m.role = role;
    return m;
}

}  // namespace

TEST_CASE("vae config invariants") {
    VaeConfig bad = tiny_vae();
    bad.downsample_factor = 8;  // != 2^2
    CHECK_THROWS_AS(bad.validate(), Error);
    CHECK_NOTHROW(VaeConfig::desk().validate());
    CHECK(VaeConfig::paper().hidden == 256);
    CHECK(VaeConfig::paper().layers_per_block == 3);
}

TEST_CASE("encode/decode shapes and padding") {
    VaeConfig cfg = tiny_vae();
    MotionVae vae(cfg);
    ParameterStore store;
    Rng rng(1);
    vae.init_params(store, rng);

    Rng drng(2);
    MotionSequence x = smooth_sequence(64, cfg.channels, drng);
    auto [mean, logvar] = vae.encode(store, x);
    CHECK(mean.size() == 16);  // 64 frames, one token per 4
    CHECK(mean.tokens.dim(1) == cfg.latent_dim);
    CHECK(logvar.tokens.same_shape(mean.tokens));

    MotionSequence back = vae.decode(store, mean);
    CHECK(back.length() == 64);
    CHECK(back.channels() == cfg.channels);

    // non-multiple length: zero-pad then trim to the original
    MotionSequence odd = smooth_sequence(61, cfg.channels, drng);
    auto [m2, lv2] = vae.encode(store, odd);
    CHECK(m2.size() == 16);  // ceil(61 / 4)
    CHECK(vae.decode(store, m2).length() == 61);

    MotionSequence empty;
    empty.frames = Tensor({0, cfg.channels});
    CHECK_THROWS_AS(vae.encode(store, empty), Error);
}

TEST_CASE("encoder causality: future frames cannot move past tokens") {
    VaeConfig cfg = tiny_vae();
    MotionVae vae(cfg);
    ParameterStore store;
    Rng rng(3);
    vae.init_params(store, rng);

    Rng drng(4);
    MotionSequence x = smooth_sequence(48, cfg.channels, drng);
    auto [mean, logvar] = vae.encode(store, x);

    Rng prng(5);
    for (int trial = 0; trial < 8; ++trial) {
        const int64_t tok = prng.uniform_int(11);  // receptive field ends at 4 tok + 3
        MotionSequence pert = x;
        for (int64_t f = 4 * (tok + 1); f < 48; ++f)
            for (int64_t c = 0; c < cfg.channels; ++c) pert.frames.at2(f, c) += prng.normal();
        auto [mp, lp] = vae.encode(store, pert);
        CHECK(max_abs_diff(slice(mean.tokens, 0, 0, tok + 1), slice(mp.tokens, 0, 0, tok + 1)) == 0.0);
        CHECK(max_abs_diff(slice(logvar.tokens, 0, 0, tok + 1), slice(lp.tokens, 0, 0, tok + 1)) ==
              0.0);
    }
}

TEST_CASE("reparameterize: determinism, variance, collapsed logvar") {
    VaeConfig cfg = tiny_vae();
    MotionVae vae(cfg);
    LatentSequence mean{Tensor({100, cfg.latent_dim}), Role::actor, 400};
    LatentSequence logvar{Tensor({100, cfg.latent_dim}), Role::actor, 400};

    Rng r1(9), r2(9);
    LatentSequence a = vae.reparameterize(mean, logvar, r1);
    LatentSequence b = vae.reparameterize(mean, logvar, r2);
    CHECK(max_abs_diff(a.tokens, b.tokens) == 0.0);

    // zero mean, zero logvar -> samples follow N(0,1)
    double s = 0, s2 = 0;
    const int64_t n = a.tokens.numel() * 17;
    Rng r3(10);
    for (int rep = 0; rep < 17; ++rep) {
        LatentSequence smp = vae.reparameterize(mean, logvar, r3);
        for (int64_t i = 0; i < smp.tokens.numel(); ++i) {
            s += smp.tokens.at(i);
            s2 += smp.tokens.at(i) * smp.tokens.at(i);
        }
    }
    const double mu = s / static_cast<double>(n);
    const double sd = std::sqrt(s2 / static_cast<double>(n) - mu * mu);
    CHECK(std::abs(sd - 1.0) < 0.03);

    // logvar -30 collapses to the mean
    LatentSequence tight{Tensor::full({4, cfg.latent_dim}, -30.0), Role::actor, 16};
    LatentSequence mu2{Tensor::full({4, cfg.latent_dim}, 0.7), Role::actor, 16};
    Rng r4(11);
    LatentSequence c = vae.reparameterize(mu2, tight, r4);
    CHECK(max_abs_diff(c.tokens, mu2.tokens) < 1e-6);
}

TEST_CASE("loss terms: closed-form kl anchors and velocity zero") {
    VaeConfig cfg = tiny_vae();
    // KL per entry: 0.5 (mu^2 + e^lv - 1 - lv)
    auto kl1 = [](double mu, double lv) {
        return 0.5 * (mu * mu + std::exp(lv) - 1.0 - lv);
    };
    CHECK(kl1(0.0, 0.0) == 0.0);
    CHECK(kl1(1.0, 0.0) == doctest::Approx(0.5));
    // KL nonnegative over a sweep
    for (double mu = -2; mu <= 2; mu += 0.25)
        for (double lv = -3; lv <= 3; lv += 0.5) CHECK(kl1(mu, lv) >= -1e-12);

    // constant sequence reconstructed as constant has zero velocity loss
    Tensor c1 = Tensor::full({8, 2}, 3.0);
    Tensor d = sub(slice(c1, 0, 1, 7), slice(c1, 0, 0, 7));
    CHECK(sum_all(mul(d, d)) == 0.0);
    (void)cfg;
}

TEST_CASE("finite outputs for latents in [-5, 5]") {
    VaeConfig cfg = tiny_vae();
    MotionVae vae(cfg);
    ParameterStore store;
    Rng rng(12);
    vae.init_params(store, rng);
    Rng zr(13);
    for (int trial = 0; trial < 4; ++trial) {
        Tensor z({8, cfg.latent_dim});
        for (int64_t i = 0; i < z.numel(); ++i) z.at(i) = 10.0 * (zr.uniform01() - 0.5);
        LatentSequence ls{z, Role::reactor, 32};
        MotionSequence out = vae.decode(store, ls);
        CHECK(out.frames.all_finite());
    }
}

TEST_CASE("overfit one sequence: reconstruction below 1e-4") {
    VaeConfig cfg = tiny_vae();
    cfg.kl_weight = 0.0;  // pure reconstruction for the overfit probe
    cfg.vel_weight = 0.1;
    MotionVae vae(cfg);
    ParameterStore store;
    Rng rng(21);
    vae.init_params(store, rng);

    Rng drng(22);
    MotionSequence x = smooth_sequence(32, cfg.channels, drng);

    TrainConfig tc;
    tc.lr = 2e-3;
    AdamW opt(tc);
    Rng lrng(23);
    std::vector<double> losses;
    for (int it = 0; it < 900; ++it) {
        Tape tape;
        TapeCtx ctx(tape, store);
        Value l = vae.loss(ctx, x, lrng);
        losses.push_back(tape.val(l).item());
        GradMap g = backward(l, ctx);
        opt.step(store, g);
    }

    // the first 200 steps trend downward on a 20-step moving average
    auto avg = [&](int lo) {
        double s = 0;
        for (int i = lo; i < lo + 20; ++i) s += losses[static_cast<size_t>(i)];
        return s / 20;
    };
    CHECK(avg(180) < avg(0));
    CHECK(avg(100) < avg(0));

    auto [mean, logvar] = vae.encode(store, x);
    MotionSequence rec = vae.decode(store, mean);
    double mse = 0;
    for (int64_t i = 0; i < x.frames.numel(); ++i) {
        const double d = rec.frames.at(i) - x.frames.at(i);
        mse += d * d;
    }
    mse /= static_cast<double>(x.frames.numel());
    CHECK(mse < 1e-4);
}
