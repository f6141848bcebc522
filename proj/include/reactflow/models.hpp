// Generator architectures: the offline full-attention velocity transformer,
// the online causal context encoder, and the per-token velocity mlp the
// encoder conditions. All forwards are written once against a Ctx template
// and run in eval / tape / dual mode.
#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "reactflow/autodiff.hpp"
#include "reactflow/flowfield.hpp"
#include "reactflow/sequence.hpp"
#include "reactflow/tensor.hpp"

namespace reactflow {

struct ModelConfig {
    int64_t hidden = 128;
    int n_layers = 4;
    int n_heads = 4;
    int mlp_layers = 3;       // velocity predictor depth (hidden blocks)
    bool use_skip = true;     // mirrored long skips in the transformer stack
    bool use_positions = true;
    int64_t n_labels = 3;
    int64_t max_tokens = 128;
    int64_t latent_dim = 8;   // token feature width
    void validate() const;

    static ModelConfig desk();
    static ModelConfig paper();  // 512 wide, 7 layers, 8 heads, 5-layer predictor
};

struct Condition {
    int64_t label = 0;
    bool null_label = false;
    // Nulls the contextual conditioning: generated history for the online
    // model, the actor token stream for the offline one.
    bool null_history = false;

    static Condition null_all() { return Condition{0, true, true}; }
};

// Ordered rollout history. Position 0 is always the learned start token;
// entries hold generated or ground-truth (actor, reactor) token pairs.
struct ContextBuffer {
    std::vector<std::pair<Tensor, Tensor>> entries;
    int64_t capacity = 128;

    void append(Tensor a, Tensor b);
    int64_t positions() const { return static_cast<int64_t>(entries.size()) + 1; }
    // [n, 2L] feature-axis concatenation of the pairs
    Tensor stacked(int64_t latent_dim) const;
};

Tensor sinusoid_position_table(int64_t max_len, int64_t dim);
Tensor causal_mask(int64_t n);  // 0 on/below diagonal, -1e9 above

namespace detail {

// frequency/phase banks for scalar timestep embeddings
struct SinBank {
    Tensor omega;
    Tensor phi;
};
SinBank make_sin_bank(int64_t dim);

void init_affine(ParameterStore& s, const std::string& prefix, int64_t in, int64_t out, Rng& rng,
                 bool zero = false);
void init_skip_merge(ParameterStore& s, const std::string& prefix, int64_t hidden);

template <class Ctx>
typename Ctx::T affine_p(Ctx& ctx, const typename Ctx::T& x, const std::string& prefix) {
    return affine(x, ctx.param(prefix + ".w"), ctx.param(prefix + ".b"));
}

// sinusoid bank + 2-layer projection of a scalar into the hidden width
template <class Ctx>
typename Ctx::T time_embed(Ctx& ctx, const typename Ctx::T& s, const SinBank& bank,
                           const std::string& prefix) {
    auto e = reshape(sinusoid(s, bank.omega, bank.phi), Shape{1, bank.omega.numel()});
    return affine_p(ctx, gelu(affine_p(ctx, e, prefix + ".p1")), prefix + ".p2");
}

// ln(h) * (1 + scale) + shift
template <class Ctx>
typename Ctx::T modulated_layer_norm(Ctx&, const typename Ctx::T& h, const typename Ctx::T& sc,
                                     const typename Ctx::T& sh) {
    return add(mul(layer_norm(h), add_scalar(sc, 1.0)), sh);
}

template <class Ctx>
typename Ctx::T multihead_attention(Ctx& ctx, const typename Ctx::T& h, const std::string& prefix,
                                    int64_t hidden, int n_heads, const Tensor* mask) {
    auto q = affine_p(ctx, h, prefix + ".q");
    auto k = affine_p(ctx, h, prefix + ".k");
    auto v = affine_p(ctx, h, prefix + ".v");
    const int64_t hd = hidden / n_heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(hd));
    typename Ctx::T heads;
    bool first = true;
    for (int head = 0; head < n_heads; ++head) {
        auto qh = slice(q, 1, head * hd, hd);
        auto kh = slice(k, 1, head * hd, hd);
        auto vh = slice(v, 1, head * hd, hd);
        auto scores = scale(matmul(qh, transpose2d(kh)), sc);
        if (mask) scores = add(scores, ctx.constant(*mask));
        auto oh = matmul(softmax_rows(scores), vh);
        heads = first ? oh : concat(heads, oh, 1);
        first = false;
    }
    return affine_p(ctx, heads, prefix + ".o");
}

// Pre-norm transformer block with conditioning through the normalization:
// both sub-blocks are modulated by (scale, shift) and merged through a
// zero-initialized gate, so a fresh model is the identity map.
template <class Ctx>
typename Ctx::T dit_block(Ctx& ctx, typename Ctx::T h, const typename Ctx::T& cond_act,
                          const std::string& prefix, int64_t hidden, int n_heads, const Tensor* mask) {
    auto ada = affine_p(ctx, cond_act, prefix + ".ada");
    auto s1 = slice(ada, 1, 0, hidden);
    auto b1 = slice(ada, 1, hidden, hidden);
    auto g1 = slice(ada, 1, 2 * hidden, hidden);
    auto s2 = slice(ada, 1, 3 * hidden, hidden);
    auto b2 = slice(ada, 1, 4 * hidden, hidden);
    auto g2 = slice(ada, 1, 5 * hidden, hidden);

    auto attn_in = modulated_layer_norm(ctx, h, s1, b1);
    auto attn_out = multihead_attention(ctx, attn_in, prefix + ".attn", hidden, n_heads, mask);
    h = add(h, mul(attn_out, g1));

    auto mlp_in = modulated_layer_norm(ctx, h, s2, b2);
    auto mlp_out = affine_p(ctx, gelu(affine_p(ctx, mlp_in, prefix + ".fc1")), prefix + ".fc2");
    return add(h, mul(mlp_out, g2));
}

template <class Ctx>
typename Ctx::T transformer_stack(Ctx& ctx, typename Ctx::T h, const typename Ctx::T& cond_act,
                                  const std::string& prefix, const ModelConfig& cfg,
                                  const Tensor* mask) {
    std::vector<typename Ctx::T> saved;
    const int n = cfg.n_layers;
    for (int l = 0; l < n; ++l) {
        if (cfg.use_skip && l >= (n + 1) / 2) {
            const int mirror = n - 1 - l;
            h = affine_p(ctx, concat(h, saved[static_cast<size_t>(mirror)], 1),
                         prefix + ".skip" + std::to_string(l));
        }
        h = dit_block(ctx, h, cond_act, prefix + ".layer" + std::to_string(l), cfg.hidden, cfg.n_heads,
                      mask);
        if (cfg.use_skip && l < n / 2) saved.push_back(h);
    }
    return h;
}

// rows of a [1,C] parameter repeated n times
template <class Ctx>
typename Ctx::T repeat_row(Ctx& ctx, const std::string& name, int64_t n) {
    return gather_rows(ctx.param(name), std::vector<int64_t>(static_cast<size_t>(n), 0));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Offline generator: actor tokens and interpolated reactor tokens are fused
// per position, the (label, r, t) condition enters every layer through the
// normalization, attention is unmasked, and the output is one average
// velocity per token.
class OfflineFlowModel {
public:
    explicit OfflineFlowModel(ModelConfig cfg);

    void init_params(ParameterStore& store, Rng& rng) const;

    template <class Ctx>
    typename Ctx::T fwd(Ctx& ctx, const Tensor& actor_tokens, const typename Ctx::T& z,
                        const typename Ctx::T& r, const typename Ctx::T& t,
                        const Condition& cond) const {
        ++calls_;
        const int64_t m = actor_tokens.dim(0);
        RF_REQUIRE(m <= cfg_.max_tokens, "offline model: sequence exceeds max_tokens");

        typename Ctx::T a = cond.null_history ? detail::repeat_row(ctx, "off.null_actor", m)
                                              : ctx.constant(actor_tokens);
        auto h = detail::affine_p(ctx, concat(a, z, 1), "off.in");
        if (cfg_.use_positions) h = add(h, ctx.constant(slice(pos_, 0, 0, m)));

        const int64_t label_row = cond.null_label ? cfg_.n_labels : cond.label;
        RF_REQUIRE(label_row >= 0 && label_row <= cfg_.n_labels, "offline model: label out of range");
        auto cond_vec = gather_rows(ctx.param("off.label_table"), {label_row});
        cond_vec = add(cond_vec, detail::time_embed(ctx, r, bank_, "off.time_r"));
        cond_vec = add(cond_vec, detail::time_embed(ctx, t, bank_, "off.time_t"));
        auto cond_act = gelu(cond_vec);

        h = detail::transformer_stack(ctx, h, cond_act, "off", cfg_, nullptr);

        auto ada = detail::affine_p(ctx, cond_act, "off.final.ada");
        auto hf = detail::modulated_layer_norm(ctx, h, slice(ada, 1, 0, cfg_.hidden),
                                               slice(ada, 1, cfg_.hidden, cfg_.hidden));
        return detail::affine_p(ctx, hf, "off.final.out");
    }

    Tensor forward_eval(const ParameterStore& store, const Tensor& actor_tokens, const Tensor& z,
                        double r, double t, const Condition& cond) const;

    const ModelConfig& config() const { return cfg_; }
    size_t calls() const { return calls_; }
    void reset_calls() const { calls_ = 0; }

private:
    ModelConfig cfg_;
    Tensor pos_;
    detail::SinBank bank_;
    mutable size_t calls_ = 0;
};

// Field adapter: the offline model as a function of the noisy reactor
// tokens with actor and condition held fixed.
class OfflineField : public VelocityField {
public:
    OfflineField(const OfflineFlowModel& model, const ParameterStore& store, Tensor actor_tokens,
                 Condition cond)
        : model_(model), store_(store), actor_(std::move(actor_tokens)), cond_(cond) {}

protected:
    Tensor do_eval(const Tensor& z, double r, double t) const override;
    std::pair<Tensor, Tensor> do_jvp(const Tensor& z, double r, double t, const Tensor& dz, double dr,
                                     double dt) const override;
    Value do_build(TapeCtx& ctx, const Tensor& z, double r, double t) const override;

private:
    const OfflineFlowModel& model_;
    const ParameterStore& store_;
    Tensor actor_;
    Condition cond_;
};

// ---------------------------------------------------------------------------
// Online context encoder: history pairs behind a start token, causal
// attention, label conditioning through the normalization. Output is one
// context vector per position; vector i sees only positions <= i.
class ContextEncoder {
public:
    explicit ContextEncoder(ModelConfig cfg);

    void init_params(ParameterStore& store, Rng& rng) const;

    template <class Ctx>
    typename Ctx::T fwd(Ctx& ctx, const ContextBuffer& buffer, const Condition& cond) const {
        ++calls_;
        const int64_t n = static_cast<int64_t>(buffer.entries.size());
        RF_REQUIRE(n + 1 <= cfg_.max_tokens, "context encoder: buffer overflow beyond max_tokens");

        typename Ctx::T tok;
        bool have_tok = n > 0;
        if (cond.null_history) {
            if (n > 0) tok = detail::repeat_row(ctx, "enc.null_entry", n);
        } else if (n > 0) {
            tok = detail::affine_p(ctx, ctx.constant(buffer.stacked(cfg_.latent_dim)), "enc.in");
        }
        auto h = have_tok ? concat(ctx.param("enc.sos"), tok, 0)
                          : typename Ctx::T(ctx.param("enc.sos"));
        if (cfg_.use_positions) h = add(h, ctx.constant(slice(pos_, 0, 0, n + 1)));

        const int64_t label_row = cond.null_label ? cfg_.n_labels : cond.label;
        RF_REQUIRE(label_row >= 0 && label_row <= cfg_.n_labels, "context encoder: label out of range");
        auto cond_act = gelu(gather_rows(ctx.param("enc.label_table"), {label_row}));

        Tensor mask = causal_mask(n + 1);
        h = detail::transformer_stack(ctx, h, cond_act, "enc", cfg_, &mask);
        return layer_norm(h);
    }

    Tensor forward_eval(const ParameterStore& store, const ContextBuffer& buffer,
                        const Condition& cond) const;

    // Incremental decoding state: per-layer key/value rows for every encoded
    // position plus the fixed condition activation. One cache belongs to
    // exactly one rollout.
    struct Cache {
        int64_t len = 0;  // encoded positions, sos included
        Tensor cond_act;
        std::vector<Tensor> k, v;  // per layer, [len, hidden]
        uint64_t last_step_ops = 0;
        Condition cond;
    };

    Cache make_cache(const ParameterStore& store, const Condition& cond) const;
    // Encodes the next position given the pair index it corresponds to
    // (pair_index < 0 encodes the start token) and returns its context
    // vector. Cost is linear in the current cache length.
    Tensor incremental_encode(const ParameterStore& store, Cache& cache, const ContextBuffer& buffer,
                              int64_t pair_index) const;

    const ModelConfig& config() const { return cfg_; }
    size_t calls() const { return calls_; }
    void reset_calls() const { calls_ = 0; }

private:
    ModelConfig cfg_;
    Tensor pos_;
    mutable size_t calls_ = 0;
};

// ---------------------------------------------------------------------------
// Velocity predictor: a stack of gated, condition-modulated mlp blocks over
// the fused (noisy token, sibling token) input. The conditioning vector is
// the context vector plus timestep and role embeddings.
class VelocityMlp {
public:
    explicit VelocityMlp(ModelConfig cfg);

    void init_params(ParameterStore& store, Rng& rng) const;

    template <class Ctx>
    typename Ctx::T fwd(Ctx& ctx, const typename Ctx::T& z, const Tensor* sibling, Role role,
                        const typename Ctx::T& r, const typename Ctx::T& t,
                        const typename Ctx::T& context) const {
        ++calls_;
        const int64_t n = shape_of(z)[0];
        typename Ctx::T sib = sibling ? ctx.constant(*sibling)
                                      : detail::repeat_row(ctx, "mlp.null_sibling", n);
        auto h = detail::affine_p(ctx, concat(z, sib, 1), "mlp.in");

        auto cond_vec = add(context, gather_rows(ctx.param("mlp.role_table"),
                                                 {static_cast<int64_t>(role)}));
        cond_vec = add(cond_vec, detail::time_embed(ctx, r, bank_, "mlp.time_r"));
        cond_vec = add(cond_vec, detail::time_embed(ctx, t, bank_, "mlp.time_t"));
        auto cond_act = gelu(cond_vec);

        for (int l = 0; l < cfg_.mlp_layers; ++l) {
            const std::string p = "mlp.layer" + std::to_string(l);
            auto ada = detail::affine_p(ctx, cond_act, p + ".ada");
            auto hs = detail::modulated_layer_norm(ctx, h, slice(ada, 1, 0, cfg_.hidden),
                                                   slice(ada, 1, cfg_.hidden, cfg_.hidden));
            auto branch = detail::affine_p(ctx, gelu(detail::affine_p(ctx, hs, p + ".fc1")), p + ".fc2");
            h = add(h, mul(branch, slice(ada, 1, 2 * cfg_.hidden, cfg_.hidden)));
        }

        auto ada = detail::affine_p(ctx, cond_act, "mlp.final.ada");
        auto hf = detail::modulated_layer_norm(ctx, h, slice(ada, 1, 0, cfg_.hidden),
                                               slice(ada, 1, cfg_.hidden, cfg_.hidden));
        return detail::affine_p(ctx, hf, "mlp.final.out");
    }

    Tensor forward_eval(const ParameterStore& store, const Tensor& z, const Tensor* sibling, Role role,
                        double r, double t, const Tensor& context) const;

    const ModelConfig& config() const { return cfg_; }
    size_t calls() const { return calls_; }
    void reset_calls() const { calls_ = 0; }

private:
    static const Shape& shape_of(const Tensor& t) { return t.shape(); }
    static const Shape& shape_of(const Dual& d) { return d.v.shape(); }
    static const Shape& shape_of(const Value& v) { return v.tape->val(v).shape(); }

    ModelConfig cfg_;
    detail::SinBank bank_;
    mutable size_t calls_ = 0;
};

// Predictor as a velocity field over one token, everything else bound.
// For tape mode the context may be a live tape value so encoder weights
// receive gradients through the prediction branch.
class PredictorField : public VelocityField {
public:
    PredictorField(const VelocityMlp& model, const ParameterStore& store, const Tensor* sibling,
                   Role role, Tensor context_primal, std::optional<Value> context_value = {})
        : model_(model),
          store_(store),
          sibling_(sibling ? std::optional<Tensor>(*sibling) : std::nullopt),
          role_(role),
          context_(std::move(context_primal)),
          context_value_(context_value) {}

protected:
    Tensor do_eval(const Tensor& z, double r, double t) const override;
    std::pair<Tensor, Tensor> do_jvp(const Tensor& z, double r, double t, const Tensor& dz, double dr,
                                     double dt) const override;
    Value do_build(TapeCtx& ctx, const Tensor& z, double r, double t) const override;

private:
    const VelocityMlp& model_;
    const ParameterStore& store_;
    std::optional<Tensor> sibling_;
    Role role_;
    Tensor context_;
    std::optional<Value> context_value_;
};

// Online model pair sharing one config and parameter store.
struct OnlineModel {
    ModelConfig cfg;
    ContextEncoder encoder;
    VelocityMlp predictor;

    explicit OnlineModel(ModelConfig c) : cfg(c), encoder(c), predictor(c) {}
    void init_params(ParameterStore& store, Rng& rng) const {
        encoder.init_params(store, rng);
        predictor.init_params(store, rng);
    }
};

// ---------------------------------------------------------------------------
// Small unconditional mlp velocity model for distribution-level checks.
class ToyVelocityModel {
public:
    ToyVelocityModel(int64_t dim, int64_t hidden, int layers) : dim_(dim), hidden_(hidden), layers_(layers) {}

    void init_params(ParameterStore& store, Rng& rng) const;

    template <class Ctx>
    typename Ctx::T fwd(Ctx& ctx, const typename Ctx::T& z, const typename Ctx::T& r,
                        const typename Ctx::T& t, int64_t rows) const {
        Tensor ones({rows, 1});
        ones.fill(1.0);
        auto h = concat(z, concat(mul(ctx.constant(ones), r), mul(ctx.constant(ones), t), 1), 1);
        for (int l = 0; l < layers_; ++l) {
            h = detail::affine_p(ctx, h, "toy.l" + std::to_string(l));
            if (l + 1 < layers_) h = gelu(h);
        }
        return h;
    }

    int64_t dim() const { return dim_; }

private:
    int64_t dim_;
    int64_t hidden_;
    int layers_;
};

class ToyField : public VelocityField {
public:
    ToyField(const ToyVelocityModel& model, const ParameterStore& store) : model_(model), store_(store) {}

protected:
    Tensor do_eval(const Tensor& z, double r, double t) const override;
    std::pair<Tensor, Tensor> do_jvp(const Tensor& z, double r, double t, const Tensor& dz, double dr,
                                     double dt) const override;
    Value do_build(TapeCtx& ctx, const Tensor& z, double r, double t) const override;

private:
    const ToyVelocityModel& model_;
    const ParameterStore& store_;
};

}  // namespace reactflow
