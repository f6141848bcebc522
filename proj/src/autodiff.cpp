#include "reactflow/autodiff.hpp"

#include <cmath>

namespace reactflow {

Value Tape::leaf(Tensor v) {
    nodes_.push_back(Node{std::move(v), Tensor(), false, BackFn()});
    return Value{static_cast<int32_t>(nodes_.size() - 1), this};
}

Value Tape::make(Tensor out, BackFn back) {
    nodes_.push_back(Node{std::move(out), Tensor(), false, std::move(back)});
    return Value{static_cast<int32_t>(nodes_.size() - 1), this};
}

const Tensor& Tape::val(Value v) const {
    RF_REQUIRE(v.ok() && v.tape == this && static_cast<size_t>(v.idx) < nodes_.size(),
               "tape: stale or foreign value handle");
    return nodes_[static_cast<size_t>(v.idx)].val;
}

Tensor Tape::grad(Value v) const {
    RF_REQUIRE(v.ok() && v.tape == this, "tape: stale or foreign value handle");
    const Node& n = nodes_[static_cast<size_t>(v.idx)];
    return n.has_grad ? n.grad : Tensor(n.val.shape());
}

void Tape::accum_grad(Value v, const Tensor& g) {
    Node& n = nodes_[static_cast<size_t>(v.idx)];
    RF_REQUIRE(g.same_shape(n.val), "tape: gradient shape mismatch");
    if (!n.has_grad) {
        n.grad = g;
        n.has_grad = true;
    } else {
        n.grad.add_(g);
    }
}

void Tape::backward(Value loss) {
    RF_REQUIRE(loss.ok() && loss.tape == this, "backward: invalid loss handle");
    RF_REQUIRE(val(loss).numel() == 1, "backward: loss must be scalar, got shape " + shape_str(val(loss).shape()));
    accum_grad(loss, Tensor::scalar(1.0));
    for (int32_t i = loss.idx; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (n.has_grad && n.back) n.back(*this, n.grad);
    }
}

// ---------------------------------------------------------------------------

Tensor& ParameterStore::create(const std::string& name, Tensor init) {
    RF_REQUIRE(p_.count(name) == 0, "parameter already exists: " + name);
    return p_.emplace(name, std::move(init)).first->second;
}

Tensor& ParameterStore::at(const std::string& name) {
    auto it = p_.find(name);
    RF_REQUIRE(it != p_.end(), "unknown parameter: " + name);
    return it->second;
}

const Tensor& ParameterStore::at(const std::string& name) const {
    auto it = p_.find(name);
    RF_REQUIRE(it != p_.end(), "unknown parameter: " + name);
    return it->second;
}

int64_t ParameterStore::total_elements() const {
    int64_t n = 0;
    for (const auto& [k, v] : p_) n += v.numel();
    return n;
}

uint64_t ParameterStore::content_hash() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [k, v] : p_) {
        h ^= fnv1a(k.data(), k.size());
        h *= 0x100000001b3ULL;
        h ^= fnv1a(v.vec());
        h *= 0x100000001b3ULL;
    }
    return h;
}

Value TapeCtx::param(const std::string& name) {
    auto it = lifted_.find(name);
    if (it != lifted_.end()) return it->second;
    Value v = tape.leaf(params.at(name));
    lifted_.emplace(name, v);
    return v;
}

GradMap TapeCtx::grads() const {
    GradMap out;
    for (const auto& [name, t] : params.entries()) {
        auto it = lifted_.find(name);
        out.emplace(name, it != lifted_.end() ? tape.grad(it->second) : Tensor(t.shape()));
    }
    return out;
}

GradMap backward(Value loss, TapeCtx& ctx) {
    ctx.tape.backward(loss);
    return ctx.grads();
}

// ---------------------------------------------------------------------------
// Value-mode primitives

Value add(Value a, Value b) {
    Tape& t = *a.tape;
    Tensor out = add(t.val(a), t.val(b));
    Shape bs = t.val(b).shape();
    return t.make(std::move(out), [a, b, bs](Tape& tp, const Tensor& g) {
        tp.accum_grad(a, g);
        tp.accum_grad(b, reduce_to_shape(g, bs));
    });
}

Value sub(Value a, Value b) {
    Tape& t = *a.tape;
    Tensor out = sub(t.val(a), t.val(b));
    Shape bs = t.val(b).shape();
    return t.make(std::move(out), [a, b, bs](Tape& tp, const Tensor& g) {
        tp.accum_grad(a, g);
        tp.accum_grad(b, neg(reduce_to_shape(g, bs)));
    });
}

Value mul(Value a, Value b) {
    Tape& t = *a.tape;
    Tensor out = mul(t.val(a), t.val(b));
    Shape bs = t.val(b).shape();
    return t.make(std::move(out), [a, b, bs](Tape& tp, const Tensor& g) {
        tp.accum_grad(a, mul(g, tp.val(b)));
        tp.accum_grad(b, reduce_to_shape(mul(g, tp.val(a)), bs));
    });
}

Value scale(Value a, double c) {
    Tape& t = *a.tape;
    return t.make(scale(t.val(a), c), [a, c](Tape& tp, const Tensor& g) { tp.accum_grad(a, scale(g, c)); });
}

Value add_scalar(Value a, double c) {
    Tape& t = *a.tape;
    return t.make(add_scalar(t.val(a), c), [a](Tape& tp, const Tensor& g) { tp.accum_grad(a, g); });
}

Value neg(Value a) { return scale(a, -1.0); }

Value matmul(Value a, Value b) {
    Tape& t = *a.tape;
    return t.make(matmul(t.val(a), t.val(b)), [a, b](Tape& tp, const Tensor& g) {
        tp.accum_grad(a, matmul(g, transpose2d(tp.val(b))));
        tp.accum_grad(b, matmul(transpose2d(tp.val(a)), g));
    });
}

Value transpose2d(Value a) {
    Tape& t = *a.tape;
    return t.make(transpose2d(t.val(a)),
                  [a](Tape& tp, const Tensor& g) { tp.accum_grad(a, transpose2d(g)); });
}

Value affine(Value x, Value w, Value b) {
    Tape& t = *x.tape;
    return t.make(affine(t.val(x), t.val(w), t.val(b)), [x, w, b](Tape& tp, const Tensor& g) {
        tp.accum_grad(x, matmul(g, transpose2d(tp.val(w))));
        tp.accum_grad(w, matmul(transpose2d(tp.val(x)), g));
        tp.accum_grad(b, colsum(g));
    });
}

Value gelu(Value x) {
    Tape& t = *x.tape;
    return t.make(gelu(t.val(x)),
                  [x](Tape& tp, const Tensor& g) { tp.accum_grad(x, mul(g, gelu_grad(tp.val(x)))); });
}

Value exp_t(Value x) {
    Tape& t = *x.tape;
    Tensor out = exp_t(t.val(x));
    Tensor saved = out;
    return t.make(std::move(out),
                  [x, saved](Tape& tp, const Tensor& g) { tp.accum_grad(x, mul(g, saved)); });
}

Value log_t(Value x) {
    Tape& t = *x.tape;
    return t.make(log_t(t.val(x)), [x](Tape& tp, const Tensor& g) {
        const Tensor& xv = tp.val(x);
        Tensor gx(xv.shape());
        for (int64_t i = 0; i < xv.numel(); ++i) gx.at(i) = g.at(i) / xv.at(i);
        tp.accum_grad(x, gx);
    });
}

Value softmax_rows(Value x) {
    Tape& t = *x.tape;
    Tensor y = softmax_rows(t.val(x));
    Tensor saved = y;
    return t.make(std::move(y), [x, saved](Tape& tp, const Tensor& g) {
        Tensor dot = rowdot(g, saved);
        Tensor gx(g.shape());
        for (int64_t r = 0; r < g.dim(0); ++r)
            for (int64_t c = 0; c < g.dim(1); ++c)
                gx.at2(r, c) = saved.at2(r, c) * (g.at2(r, c) - dot.at(r));
        tp.accum_grad(x, gx);
    });
}

Value layer_norm(Value x) {
    Tape& t = *x.tape;
    LayerNormResult r = layer_norm_fwd(t.val(x));
    Tensor y = r.y;
    Tensor inv = r.inv_std;
    return t.make(std::move(r.y), [x, y, inv](Tape& tp, const Tensor& g) {
        const int64_t cols = g.dim(1);
        Tensor m1 = rowsum(g);
        m1.scale_(1.0 / static_cast<double>(cols));
        Tensor m2 = rowdot(g, y);
        m2.scale_(1.0 / static_cast<double>(cols));
        Tensor gx(g.shape());
        for (int64_t r2 = 0; r2 < g.dim(0); ++r2)
            for (int64_t c = 0; c < cols; ++c)
                gx.at2(r2, c) = inv.at(r2) * (g.at2(r2, c) - m1.at(r2) - y.at2(r2, c) * m2.at(r2));
        tp.accum_grad(x, gx);
    });
}

Value concat(Value a, Value b, int axis) {
    Tape& t = *a.tape;
    const int64_t na = t.val(a).dim(axis);
    const int64_t nb = t.val(b).dim(axis);
    return t.make(concat(t.val(a), t.val(b), axis), [a, b, axis, na, nb](Tape& tp, const Tensor& g) {
        tp.accum_grad(a, slice(g, axis, 0, na));
        tp.accum_grad(b, slice(g, axis, na, nb));
    });
}

Value slice(Value x, int axis, int64_t start, int64_t len) {
    Tape& t = *x.tape;
    Shape xs = t.val(x).shape();
    return t.make(slice(t.val(x), axis, start, len), [x, xs, axis, start, len](Tape& tp, const Tensor& g) {
        Tensor gx(xs);
        if (axis == 0) {
            std::copy(g.data(), g.data() + g.numel(), gx.data() + start * xs[1]);
        } else {
            for (int64_t r = 0; r < xs[0]; ++r)
                for (int64_t c = 0; c < len; ++c) gx.at2(r, start + c) = g.at2(r, c);
        }
        tp.accum_grad(x, gx);
    });
}

Value reshape(Value x, Shape s) {
    Tape& t = *x.tape;
    Shape xs = t.val(x).shape();
    return t.make(reshape(t.val(x), std::move(s)),
                  [x, xs](Tape& tp, const Tensor& g) { tp.accum_grad(x, reshape(g, xs)); });
}

Value gather_rows(Value x, const std::vector<int64_t>& idx) {
    Tape& t = *x.tape;
    Shape xs = t.val(x).shape();
    return t.make(gather_rows(t.val(x), idx), [x, xs, idx](Tape& tp, const Tensor& g) {
        Tensor gx(xs);
        const int64_t cols = xs[1];
        for (size_t i = 0; i < idx.size(); ++i)
            for (int64_t c = 0; c < cols; ++c) gx.at(idx[i] * cols + c) += g.at(static_cast<int64_t>(i) * cols + c);
        tp.accum_grad(x, gx);
    });
}

Value sum_all_v(Value x) {
    Tape& t = *x.tape;
    Shape xs = t.val(x).shape();
    return t.make(Tensor::scalar(sum_all(t.val(x))), [x, xs](Tape& tp, const Tensor& g) {
        tp.accum_grad(x, Tensor::full(xs, g.at(0)));
    });
}

Value mean_all_v(Value x) {
    Tape& t = *x.tape;
    Shape xs = t.val(x).shape();
    const double n = static_cast<double>(shape_numel(xs));
    return t.make(Tensor::scalar(mean_all(t.val(x))), [x, xs, n](Tape& tp, const Tensor& g) {
        tp.accum_grad(x, Tensor::full(xs, g.at(0) / n));
    });
}

Value sinusoid(Value s, const Tensor& omega, const Tensor& phi) {
    Tape& t = *s.tape;
    RF_REQUIRE(t.val(s).numel() == 1, "sinusoid: scalar input required");
    const double sv = t.val(s).item();
    Tensor om = omega, ph = phi;
    return t.make(sinusoid(sv, omega, phi), [s, sv, om, ph](Tape& tp, const Tensor& g) {
        double gs = 0.0;
        for (int64_t i = 0; i < om.numel(); ++i)
            gs += g.at(i) * om.at(i) * std::cos(om.at(i) * sv + ph.at(i));
        tp.accum_grad(s, Tensor::scalar(gs));
    });
}

Value stop_gradient(Value x) {
    // forward value reused bit-for-bit; the new node has no parents
    return x.tape->leaf(x.tape->val(x));
}

// ---------------------------------------------------------------------------
// Dual-mode primitives

Dual add(const Dual& a, const Dual& b) { return {add(a.v, b.v), add(a.d, b.d)}; }
Dual sub(const Dual& a, const Dual& b) { return {sub(a.v, b.v), sub(a.d, b.d)}; }

Dual mul(const Dual& a, const Dual& b) {
    return {mul(a.v, b.v), add(mul(a.d, b.v), mul(a.v, b.d))};
}

Dual scale(const Dual& a, double c) { return {scale(a.v, c), scale(a.d, c)}; }
Dual add_scalar(const Dual& a, double c) { return {add_scalar(a.v, c), a.d}; }
Dual neg(const Dual& a) { return {neg(a.v), neg(a.d)}; }

Dual matmul(const Dual& a, const Dual& b) {
    return {matmul(a.v, b.v), add(matmul(a.d, b.v), matmul(a.v, b.d))};
}

Dual transpose2d(const Dual& a) { return {transpose2d(a.v), transpose2d(a.d)}; }

Dual affine(const Dual& x, const Dual& w, const Dual& b) {
    Tensor v = affine(x.v, w.v, b.v);
    Tensor d = add(add(matmul(x.d, w.v), matmul(x.v, w.d)), b.d);
    return {std::move(v), std::move(d)};
}

Dual gelu(const Dual& x) { return {gelu(x.v), mul(x.d, gelu_grad(x.v))}; }

Dual exp_t(const Dual& x) {
    Tensor v = exp_t(x.v);
    Tensor d = mul(x.d, v);
    return {std::move(v), std::move(d)};
}

Dual log_t(const Dual& x) {
    Tensor v = log_t(x.v);
    Tensor d(x.v.shape());
    for (int64_t i = 0; i < x.v.numel(); ++i) d.at(i) = x.d.at(i) / x.v.at(i);
    return {std::move(v), std::move(d)};
}

Dual softmax_rows(const Dual& x) {
    Tensor y = softmax_rows(x.v);
    Tensor dot = rowdot(x.d, y);
    Tensor d(x.v.shape());
    for (int64_t r = 0; r < x.v.dim(0); ++r)
        for (int64_t c = 0; c < x.v.dim(1); ++c)
            d.at2(r, c) = y.at2(r, c) * (x.d.at2(r, c) - dot.at(r));
    return {std::move(y), std::move(d)};
}

Dual layer_norm(const Dual& x) {
    LayerNormResult r = layer_norm_fwd(x.v);
    const int64_t cols = x.v.dim(1);
    Tensor m1 = rowsum(x.d);
    m1.scale_(1.0 / static_cast<double>(cols));
    Tensor m2 = rowdot(x.d, r.y);
    m2.scale_(1.0 / static_cast<double>(cols));
    Tensor d(x.v.shape());
    for (int64_t rr = 0; rr < x.v.dim(0); ++rr)
        for (int64_t c = 0; c < cols; ++c)
            d.at2(rr, c) = r.inv_std.at(rr) * (x.d.at2(rr, c) - m1.at(rr) - r.y.at2(rr, c) * m2.at(rr));
    return {std::move(r.y), std::move(d)};
}

Dual concat(const Dual& a, const Dual& b, int axis) {
    return {concat(a.v, b.v, axis), concat(a.d, b.d, axis)};
}

Dual slice(const Dual& x, int axis, int64_t start, int64_t len) {
    return {slice(x.v, axis, start, len), slice(x.d, axis, start, len)};
}

Dual reshape(const Dual& x, Shape s) {
    Shape s2 = s;
    return {reshape(x.v, std::move(s)), reshape(x.d, std::move(s2))};
}

Dual gather_rows(const Dual& x, const std::vector<int64_t>& idx) {
    return {gather_rows(x.v, idx), gather_rows(x.d, idx)};
}

Dual sum_all_v(const Dual& x) { return {Tensor::scalar(sum_all(x.v)), Tensor::scalar(sum_all(x.d))}; }

Dual mean_all_v(const Dual& x) {
    return {Tensor::scalar(mean_all(x.v)), Tensor::scalar(mean_all(x.d))};
}

Dual sinusoid(const Dual& s, const Tensor& omega, const Tensor& phi) {
    RF_REQUIRE(s.v.numel() == 1, "sinusoid: scalar input required");
    const double sv = s.v.item();
    const double ds = s.d.item();
    Tensor v = sinusoid(sv, omega, phi);
    Tensor d(omega.shape());
    for (int64_t i = 0; i < omega.numel(); ++i)
        d.at(i) = ds * omega.at(i) * std::cos(omega.at(i) * sv + phi.at(i));
    return {std::move(v), std::move(d)};
}

Dual stop_gradient(const Dual& x) { return {x.v, Tensor(x.v.shape())}; }

// ---------------------------------------------------------------------------
// Tensor-mode aliases

Tensor layer_norm(const Tensor& x) { return layer_norm_fwd(x).y; }
Tensor sum_all_v(const Tensor& x) { return Tensor::scalar(sum_all(x)); }
Tensor mean_all_v(const Tensor& x) { return Tensor::scalar(mean_all(x)); }
Tensor sinusoid(const Tensor& s, const Tensor& omega, const Tensor& phi) {
    RF_REQUIRE(s.numel() == 1, "sinusoid: scalar input required");
    return sinusoid(s.item(), omega, phi);
}

Tensor finite_diff_directional(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                               const Tensor& direction, double h) {
    RF_REQUIRE(h > 0, "finite_diff: step must be positive");
    RF_REQUIRE(point.same_shape(direction), "finite_diff: direction shape mismatch");
    Tensor plus = point, minus = point;
    for (int64_t i = 0; i < point.numel(); ++i) {
        plus.at(i) += h * direction.at(i);
        minus.at(i) -= h * direction.at(i);
    }
    Tensor fp = f(plus);
    Tensor fm = f(minus);
    RF_REQUIRE(fp.all_finite() && fm.all_finite(), "finite_diff: non-finite function value");
    Tensor out = sub(fp, fm);
    out.scale_(1.0 / (2.0 * h));
    return out;
}

}  // namespace reactflow
