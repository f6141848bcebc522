// Strided causal 1D-convolutional sequence autoencoder with KL-regularized
// continuous latents. Convolutions are end-aligned, so token i depends only
// on frames <= i * downsample_factor + (downsample_factor - 1).
#pragma once

#include <string>
#include <utility>

#include "reactflow/autodiff.hpp"
#include "reactflow/sequence.hpp"

namespace reactflow {

struct VaeConfig {
    int64_t channels = 4;       // input frame width
    int64_t hidden = 64;
    int n_down_blocks = 2;
    int layers_per_block = 2;   // residual convs per block
    int64_t downsample_factor = 4;  // must equal 2^n_down_blocks
    int64_t latent_dim = 8;
    double kl_weight = 1e-4;
    double vel_weight = 0.5;
    void validate() const;

    static VaeConfig desk();
    static VaeConfig paper();  // 256 wide, three layers per block
};

namespace detail {

// Left-padded strided convolution built from gather + affine; output step i
// covers input rows (stride*i + stride - k) .. (stride*i + stride - 1).
template <class Ctx>
typename Ctx::T causal_conv(Ctx& ctx, const typename Ctx::T& x, int64_t rows_in, int64_t cols_in,
                            const std::string& prefix, int64_t k, int64_t stride) {
    RF_REQUIRE(rows_in % stride == 0, "causal_conv: length not divisible by stride");
    const int64_t rows_out = rows_in / stride;
    auto padded = concat(ctx.constant(Tensor({k - 1, cols_in})), x, 0);
    std::vector<int64_t> idx;
    idx.reserve(static_cast<size_t>(rows_out * k));
    for (int64_t i = 0; i < rows_out; ++i)
        for (int64_t j = 0; j < k; ++j) idx.push_back(stride * i + stride - 1 + j);
    auto windows = reshape(gather_rows(padded, idx), Shape{rows_out, k * cols_in});
    return affine(windows, ctx.param(prefix + ".w"), ctx.param(prefix + ".b"));
}

}  // namespace detail

// One compressor shared by both roles; the role enters as a learned
// embedding at the encoder and decoder inputs.
class MotionVae {
public:
    explicit MotionVae(VaeConfig cfg);

    void init_params(ParameterStore& store, Rng& rng) const;

    // posterior mean and log-variance, one token per downsample_factor frames
    std::pair<LatentSequence, LatentSequence> encode(const ParameterStore& store,
                                                     const MotionSequence& x) const;
    LatentSequence reparameterize(const LatentSequence& mean, const LatentSequence& logvar,
                                  Rng& rng) const;
    MotionSequence decode(const ParameterStore& store, const LatentSequence& z) const;

    // recon + kl_weight * KL(q || N(0,I)) + vel_weight * frame-difference mse
    Value loss(TapeCtx& ctx, const MotionSequence& x, Rng& rng) const;

    const VaeConfig& config() const { return cfg_; }

    Tensor pad_frames(const Tensor& frames) const;

    template <class Ctx>
    std::pair<typename Ctx::T, typename Ctx::T> encode_fwd(Ctx& ctx, const Tensor& padded,
                                                           Role role) const {
        const int64_t T = padded.dim(0);
        auto h = affine(ctx.constant(padded), ctx.param("vae.enc.in.w"), ctx.param("vae.enc.in.b"));
        h = add(h, gather_rows(ctx.param("vae.role_table"), {static_cast<int64_t>(role)}));
        int64_t len = T;
        for (int b = 0; b < cfg_.n_down_blocks; ++b) {
            const std::string bp = "vae.enc.b" + std::to_string(b);
            h = gelu(detail::causal_conv(ctx, h, len, cfg_.hidden, bp + ".down", 4, 2));
            len /= 2;
            for (int j = 0; j < cfg_.layers_per_block; ++j)
                h = add(h, gelu(detail::causal_conv(ctx, h, len, cfg_.hidden,
                                                    bp + ".conv" + std::to_string(j), 3, 1)));
        }
        auto mean = affine(h, ctx.param("vae.enc.mean.w"), ctx.param("vae.enc.mean.b"));
        auto logvar = affine(h, ctx.param("vae.enc.logvar.w"), ctx.param("vae.enc.logvar.b"));
        return {mean, logvar};
    }

    template <class Ctx>
    typename Ctx::T decode_fwd(Ctx& ctx, const typename Ctx::T& z, int64_t n_tokens, Role role) const {
        auto h = affine(z, ctx.param("vae.dec.in.w"), ctx.param("vae.dec.in.b"));
        h = add(h, gather_rows(ctx.param("vae.role_table"), {static_cast<int64_t>(role)}));
        int64_t len = n_tokens;
        for (int b = 0; b < cfg_.n_down_blocks; ++b) {
            const std::string bp = "vae.dec.b" + std::to_string(b);
            std::vector<int64_t> up;
            up.reserve(static_cast<size_t>(len * 2));
            for (int64_t i = 0; i < len; ++i) {
                up.push_back(i);
                up.push_back(i);
            }
            h = gather_rows(h, up);
            len *= 2;
            h = gelu(detail::causal_conv(ctx, h, len, cfg_.hidden, bp + ".up", 3, 1));
            for (int j = 0; j < cfg_.layers_per_block; ++j)
                h = add(h, gelu(detail::causal_conv(ctx, h, len, cfg_.hidden,
                                                    bp + ".conv" + std::to_string(j), 3, 1)));
        }
        return affine(h, ctx.param("vae.dec.out.w"), ctx.param("vae.dec.out.b"));
    }

private:
    VaeConfig cfg_;
};

}  // namespace reactflow
