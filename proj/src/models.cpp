#include "reactflow/models.hpp"

#include <cmath>

namespace reactflow {

void ModelConfig::validate() const {
    RF_REQUIRE(hidden > 0 && n_layers > 0 && n_heads > 0 && mlp_layers > 0,
               "model config: sizes must be positive");
    RF_REQUIRE(hidden % n_heads == 0, "model config: hidden must be divisible by n_heads");
    RF_REQUIRE(n_labels >= 1, "model config: n_labels must be >= 1");
    RF_REQUIRE(max_tokens >= 1 && latent_dim >= 1, "model config: token sizes must be >= 1");
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::paper() {
    ModelConfig c;
    c.hidden = 512;
    c.n_layers = 7;
    c.n_heads = 8;
    c.mlp_layers = 5;
    return c;
}

void ContextBuffer::append(Tensor a, Tensor b) {
    RF_REQUIRE(static_cast<int64_t>(entries.size()) + 1 < capacity,
               "context buffer: capacity exceeded");
    RF_REQUIRE(a.same_shape(b), "context buffer: pair shape mismatch");
    entries.emplace_back(std::move(a), std::move(b));
}

Tensor ContextBuffer::stacked(int64_t latent_dim) const {
    Tensor out({static_cast<int64_t>(entries.size()), 2 * latent_dim});
    for (size_t i = 0; i < entries.size(); ++i) {
        const auto& [a, b] = entries[i];
        RF_REQUIRE(a.numel() == latent_dim && b.numel() == latent_dim,
                   "context buffer: entry width does not match latent_dim");
        for (int64_t c = 0; c < latent_dim; ++c) {
            out.at2(static_cast<int64_t>(i), c) = a.at(c);
            out.at2(static_cast<int64_t>(i), latent_dim + c) = b.at(c);
        }
    }
    return out;
}

Tensor sinusoid_position_table(int64_t max_len, int64_t dim) {
    Tensor pe({max_len, dim});
    for (int64_t p = 0; p < max_len; ++p) {
        for (int64_t i = 0; i < dim / 2; ++i) {
            const double freq =
                std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
            pe.at2(p, 2 * i) = std::sin(static_cast<double>(p) * freq);
            if (2 * i + 1 < dim) pe.at2(p, 2 * i + 1) = std::cos(static_cast<double>(p) * freq);
        }
    }
    return pe;
}

Tensor causal_mask(int64_t n) {
    Tensor m({n, n});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = i + 1; j < n; ++j) m.at2(i, j) = -1e9;
    return m;
}

namespace detail {

SinBank make_sin_bank(int64_t dim) {
    SinBank bank{Tensor({dim}), Tensor({dim})};
    const int64_t half = dim / 2;
    for (int64_t k = 0; k < half; ++k) {
        const double freq =
            1000.0 * std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(half));
        bank.omega.at(k) = freq;
        bank.phi.at(k) = 0.0;
        bank.omega.at(half + k) = freq;
        bank.phi.at(half + k) = 1.5707963267948966;  // cosine half
    }
    return bank;
}

void init_affine(ParameterStore& s, const std::string& prefix, int64_t in, int64_t out, Rng& rng,
                 bool zero) {
    Tensor w({in, out});
    if (!zero) {
        w = rng.normal_tensor({in, out});
        w.scale_(1.0 / std::sqrt(static_cast<double>(in)));
    }
    s.create(prefix + ".w", std::move(w));
    s.create(prefix + ".b", Tensor({out}));
}

void init_skip_merge(ParameterStore& s, const std::string& prefix, int64_t hidden) {
    // starts as a pass-through of the residual stream, ignoring the skip
    Tensor w({2 * hidden, hidden});
    for (int64_t i = 0; i < hidden; ++i) w.at2(i, i) = 1.0;
    s.create(prefix + ".w", std::move(w));
    s.create(prefix + ".b", Tensor({hidden}));
}

static void init_dit_stack(ParameterStore& s, const std::string& prefix, const ModelConfig& cfg,
                           Rng& rng) {
    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string p = prefix + ".layer" + std::to_string(l);
        init_affine(s, p + ".ada", cfg.hidden, 6 * cfg.hidden, rng, /*zero=*/true);
        init_affine(s, p + ".attn.q", cfg.hidden, cfg.hidden, rng);
        init_affine(s, p + ".attn.k", cfg.hidden, cfg.hidden, rng);
        init_affine(s, p + ".attn.v", cfg.hidden, cfg.hidden, rng);
        init_affine(s, p + ".attn.o", cfg.hidden, cfg.hidden, rng);
        init_affine(s, p + ".fc1", cfg.hidden, 2 * cfg.hidden, rng);
        init_affine(s, p + ".fc2", 2 * cfg.hidden, cfg.hidden, rng);
        if (cfg.use_skip && l >= (cfg.n_layers + 1) / 2)
            init_skip_merge(s, prefix + ".skip" + std::to_string(l), cfg.hidden);
    }
}

static void init_time_mlp(ParameterStore& s, const std::string& prefix, int64_t hidden, Rng& rng) {
    init_affine(s, prefix + ".p1", hidden, hidden, rng);
    init_affine(s, prefix + ".p2", hidden, hidden, rng);
}

static Tensor small_normal(const Shape& shape, Rng& rng) {
    Tensor t = rng.normal_tensor(shape);
    t.scale_(0.02);
    return t;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// OfflineFlowModel

OfflineFlowModel::OfflineFlowModel(ModelConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    pos_ = sinusoid_position_table(cfg_.max_tokens, cfg_.hidden);
    bank_ = detail::make_sin_bank(cfg_.hidden);
}

void OfflineFlowModel::init_params(ParameterStore& s, Rng& rng) const {
    detail::init_affine(s, "off.in", 2 * cfg_.latent_dim, cfg_.hidden, rng);
    s.create("off.null_actor", detail::small_normal({1, cfg_.latent_dim}, rng));
    s.create("off.label_table", detail::small_normal({cfg_.n_labels + 1, cfg_.hidden}, rng));
    detail::init_time_mlp(s, "off.time_r", cfg_.hidden, rng);
    detail::init_time_mlp(s, "off.time_t", cfg_.hidden, rng);
    detail::init_dit_stack(s, "off", cfg_, rng);
    detail::init_affine(s, "off.final.ada", cfg_.hidden, 2 * cfg_.hidden, rng, /*zero=*/true);
    detail::init_affine(s, "off.final.out", cfg_.hidden, cfg_.latent_dim, rng, /*zero=*/true);
}

Tensor OfflineFlowModel::forward_eval(const ParameterStore& store, const Tensor& actor_tokens,
                                      const Tensor& z, double r, double t,
                                      const Condition& cond) const {
    EvalCtx ctx(store);
    return fwd(ctx, actor_tokens, z, Tensor::scalar(r), Tensor::scalar(t), cond);
}

Tensor OfflineField::do_eval(const Tensor& z, double r, double t) const {
    return model_.forward_eval(store_, actor_, z, r, t, cond_);
}

std::pair<Tensor, Tensor> OfflineField::do_jvp(const Tensor& z, double r, double t, const Tensor& dz,
                                               double dr, double dt) const {
    DualCtx ctx(store_);
    Dual out = model_.fwd(ctx, actor_, Dual{z, dz}, Dual{Tensor::scalar(r), Tensor::scalar(dr)},
                          Dual{Tensor::scalar(t), Tensor::scalar(dt)}, cond_);
    return {std::move(out.v), std::move(out.d)};
}

Value OfflineField::do_build(TapeCtx& ctx, const Tensor& z, double r, double t) const {
    return model_.fwd(ctx, actor_, ctx.constant(z), ctx.constant(Tensor::scalar(r)),
                      ctx.constant(Tensor::scalar(t)), cond_);
}

// ---------------------------------------------------------------------------
// ContextEncoder

ContextEncoder::ContextEncoder(ModelConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    pos_ = sinusoid_position_table(cfg_.max_tokens, cfg_.hidden);
}

void ContextEncoder::init_params(ParameterStore& s, Rng& rng) const {
    detail::init_affine(s, "enc.in", 2 * cfg_.latent_dim, cfg_.hidden, rng);
    s.create("enc.sos", detail::small_normal({1, cfg_.hidden}, rng));
    s.create("enc.null_entry", detail::small_normal({1, cfg_.hidden}, rng));
    s.create("enc.label_table", detail::small_normal({cfg_.n_labels + 1, cfg_.hidden}, rng));
    detail::init_dit_stack(s, "enc", cfg_, rng);
}

Tensor ContextEncoder::forward_eval(const ParameterStore& store, const ContextBuffer& buffer,
                                    const Condition& cond) const {
    EvalCtx ctx(store);
    return fwd(ctx, buffer, cond);
}

ContextEncoder::Cache ContextEncoder::make_cache(const ParameterStore& store,
                                                 const Condition& cond) const {
    Cache cache;
    cache.cond = cond;
    const int64_t label_row = cond.null_label ? cfg_.n_labels : cond.label;
    RF_REQUIRE(label_row >= 0 && label_row <= cfg_.n_labels, "context encoder: label out of range");
    cache.cond_act = gelu(gather_rows(store.at("enc.label_table"), {label_row}));
    cache.k.assign(static_cast<size_t>(cfg_.n_layers), Tensor({0, cfg_.hidden}));
    cache.v.assign(static_cast<size_t>(cfg_.n_layers), Tensor({0, cfg_.hidden}));
    return cache;
}

Tensor ContextEncoder::incremental_encode(const ParameterStore& store, Cache& cache,
                                          const ContextBuffer& buffer, int64_t pair_index) const {
    ++calls_;
    const int64_t pos = cache.len;
    RF_REQUIRE(pos + 1 <= cfg_.max_tokens, "context encoder: buffer overflow beyond max_tokens");
    if (pos == 0) {
        RF_REQUIRE(pair_index < 0, "context encoder: position 0 is reserved for the start token");
    } else {
        RF_REQUIRE(pair_index == pos - 1,
                   "context encoder: cache/buffer length mismatch (expected pair " +
                       std::to_string(pos - 1) + ", got " + std::to_string(pair_index) + ")");
        RF_REQUIRE(pair_index < static_cast<int64_t>(buffer.entries.size()),
                   "context encoder: cache/buffer length mismatch (missing pair)");
    }

    EvalCtx ctx(store);
    Tensor row;
    if (pair_index < 0) {
        row = store.at("enc.sos");
    } else if (cache.cond.null_history) {
        row = store.at("enc.null_entry");
    } else {
        const auto& [a, b] = buffer.entries[static_cast<size_t>(pair_index)];
        Tensor entry({1, 2 * cfg_.latent_dim});
        for (int64_t c = 0; c < cfg_.latent_dim; ++c) {
            entry.at(c) = a.at(c);
            entry.at(cfg_.latent_dim + c) = b.at(c);
        }
        row = detail::affine_p(ctx, entry, "enc.in");
    }
    if (cfg_.use_positions) row = add(row, slice(pos_, 0, pos, 1));

    const int64_t hd = cfg_.hidden / cfg_.n_heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(hd));
    cache.last_step_ops = 0;

    std::vector<Tensor> saved;
    for (int l = 0; l < cfg_.n_layers; ++l) {
        const std::string p = "enc.layer" + std::to_string(l);
        if (cfg_.use_skip && l >= (cfg_.n_layers + 1) / 2) {
            const int mirror = cfg_.n_layers - 1 - l;
            row = detail::affine_p(ctx, concat(row, saved[static_cast<size_t>(mirror)], 1),
                                   "enc.skip" + std::to_string(l));
        }
        Tensor ada = detail::affine_p(ctx, cache.cond_act, p + ".ada");
        auto modslice = [&](int64_t i) { return slice(ada, 1, i * cfg_.hidden, cfg_.hidden); };

        Tensor attn_in = detail::modulated_layer_norm(ctx, row, modslice(0), modslice(1));
        Tensor q = detail::affine_p(ctx, attn_in, p + ".attn.q");
        Tensor knew = detail::affine_p(ctx, attn_in, p + ".attn.k");
        Tensor vnew = detail::affine_p(ctx, attn_in, p + ".attn.v");
        Tensor& K = cache.k[static_cast<size_t>(l)];
        Tensor& V = cache.v[static_cast<size_t>(l)];
        K = concat(K, knew, 0);
        V = concat(V, vnew, 0);

        Tensor heads({1, cfg_.hidden});
        for (int head = 0; head < cfg_.n_heads; ++head) {
            Tensor qh = slice(q, 1, head * hd, hd);
            Tensor kh = slice(K, 1, head * hd, hd);
            Tensor vh = slice(V, 1, head * hd, hd);
            Tensor scores = scale(matmul(qh, transpose2d(kh)), sc);
            Tensor w = softmax_rows(scores);
            Tensor oh = matmul(w, vh);
            for (int64_t c = 0; c < hd; ++c) heads.at(head * hd + c) = oh.at(c);
            cache.last_step_ops += static_cast<uint64_t>(scores.numel());
        }
        Tensor attn_out = detail::affine_p(ctx, heads, p + ".attn.o");
        row = add(row, mul(attn_out, modslice(2)));

        Tensor mlp_in = detail::modulated_layer_norm(ctx, row, modslice(3), modslice(4));
        Tensor mlp_out =
            detail::affine_p(ctx, gelu(detail::affine_p(ctx, mlp_in, p + ".fc1")), p + ".fc2");
        row = add(row, mul(mlp_out, modslice(5)));

        if (cfg_.use_skip && l < cfg_.n_layers / 2) saved.push_back(row);
    }
    cache.len = pos + 1;
    return layer_norm(row);
}

// ---------------------------------------------------------------------------
// VelocityMlp

VelocityMlp::VelocityMlp(ModelConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    bank_ = detail::make_sin_bank(cfg_.hidden);
}

void VelocityMlp::init_params(ParameterStore& s, Rng& rng) const {
    detail::init_affine(s, "mlp.in", 2 * cfg_.latent_dim, cfg_.hidden, rng);
    s.create("mlp.null_sibling", detail::small_normal({1, cfg_.latent_dim}, rng));
    s.create("mlp.role_table", detail::small_normal({2, cfg_.hidden}, rng));
    detail::init_time_mlp(s, "mlp.time_r", cfg_.hidden, rng);
    detail::init_time_mlp(s, "mlp.time_t", cfg_.hidden, rng);
    for (int l = 0; l < cfg_.mlp_layers; ++l) {
        const std::string p = "mlp.layer" + std::to_string(l);
        detail::init_affine(s, p + ".ada", cfg_.hidden, 3 * cfg_.hidden, rng, /*zero=*/true);
        detail::init_affine(s, p + ".fc1", cfg_.hidden, 2 * cfg_.hidden, rng);
        detail::init_affine(s, p + ".fc2", 2 * cfg_.hidden, cfg_.hidden, rng);
    }
    detail::init_affine(s, "mlp.final.ada", cfg_.hidden, 2 * cfg_.hidden, rng, /*zero=*/true);
    detail::init_affine(s, "mlp.final.out", cfg_.hidden, cfg_.latent_dim, rng, /*zero=*/true);
}

Tensor VelocityMlp::forward_eval(const ParameterStore& store, const Tensor& z, const Tensor* sibling,
                                 Role role, double r, double t, const Tensor& context) const {
    EvalCtx ctx(store);
    return fwd(ctx, z, sibling, role, Tensor::scalar(r), Tensor::scalar(t), context);
}

Tensor PredictorField::do_eval(const Tensor& z, double r, double t) const {
    return model_.forward_eval(store_, z, sibling_ ? &*sibling_ : nullptr, role_, r, t, context_);
}

std::pair<Tensor, Tensor> PredictorField::do_jvp(const Tensor& z, double r, double t, const Tensor& dz,
                                                 double dr, double dt) const {
    DualCtx ctx(store_);
    Dual out = model_.fwd(ctx, Dual{z, dz}, sibling_ ? &*sibling_ : nullptr, role_,
                          Dual{Tensor::scalar(r), Tensor::scalar(dr)},
                          Dual{Tensor::scalar(t), Tensor::scalar(dt)}, Dual::constant(context_));
    return {std::move(out.v), std::move(out.d)};
}

Value PredictorField::do_build(TapeCtx& ctx, const Tensor& z, double r, double t) const {
    Value cval;
    if (context_value_) {
        RF_REQUIRE(context_value_->tape == &ctx.tape, "predictor field: context from a different tape");
        cval = *context_value_;
    } else {
        cval = ctx.constant(context_);
    }
    return model_.fwd(ctx, ctx.constant(z), sibling_ ? &*sibling_ : nullptr, role_,
                      ctx.constant(Tensor::scalar(r)), ctx.constant(Tensor::scalar(t)), cval);
}

// ---------------------------------------------------------------------------
// ToyVelocityModel

void ToyVelocityModel::init_params(ParameterStore& s, Rng& rng) const {
    int64_t in = dim_ + 2;
    for (int l = 0; l < layers_; ++l) {
        const int64_t out = (l + 1 == layers_) ? dim_ : hidden_;
        detail::init_affine(s, "toy.l" + std::to_string(l), in, out, rng, /*zero=*/(l + 1 == layers_));
        in = out;
    }
}

Tensor ToyField::do_eval(const Tensor& z, double r, double t) const {
    EvalCtx ctx(store_);
    return model_.fwd(ctx, z, Tensor::scalar(r), Tensor::scalar(t), z.dim(0));
}

std::pair<Tensor, Tensor> ToyField::do_jvp(const Tensor& z, double r, double t, const Tensor& dz,
                                           double dr, double dt) const {
    DualCtx ctx(store_);
    Dual out = model_.fwd(ctx, Dual{z, dz}, Dual{Tensor::scalar(r), Tensor::scalar(dr)},
                          Dual{Tensor::scalar(t), Tensor::scalar(dt)}, z.dim(0));
    return {std::move(out.v), std::move(out.d)};
}

Value ToyField::do_build(TapeCtx& ctx, const Tensor& z, double r, double t) const {
    return model_.fwd(ctx, ctx.constant(z), ctx.constant(Tensor::scalar(r)),
                      ctx.constant(Tensor::scalar(t)), z.dim(0));
}

}  // namespace reactflow
