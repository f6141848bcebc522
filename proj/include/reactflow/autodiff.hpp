// Reverse-mode tape and forward-mode dual numbers over Tensor, sharing one
// primitive set. Reverse mode serves optimization; forward mode serves the
// directional-derivative term of the average-velocity target. stop_gradient
// blocks both directions.
//
// The primitive set is closed at compile time: every op is a free-function
// overload for (Tensor, Value, Dual), so a computation composed of anything
// else simply does not type-check — there is no runtime path that can reach
// an unregistered primitive.
#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "reactflow/tensor.hpp"

namespace reactflow {

class Tape;

struct Value {
    int32_t idx = -1;
    Tape* tape = nullptr;
    bool ok() const { return idx >= 0 && tape != nullptr; }
};

class Tape {
public:
    using BackFn = std::function<void(Tape&, const Tensor& gout)>;

    Value leaf(Tensor v);
    Value make(Tensor out, BackFn back);

    const Tensor& val(Value v) const;
    // zero tensor if no gradient reached the node
    Tensor grad(Value v) const;

    // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse creation
    // order (a valid reverse topological order by construction). The graph
    // stays intact afterwards; clear() releases it.
    void backward(Value loss);

    void accum_grad(Value v, const Tensor& g);

    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    struct Node {
        Tensor val;
        Tensor grad;
        bool has_grad = false;
        BackFn back;  // empty for leaves
    };
    std::vector<Node> nodes_;
};

// Forward-mode pair. Constants carry an all-zero tangent.
struct Dual {
    Tensor v;
    Tensor d;
    static Dual constant(const Tensor& t) { return Dual{t, Tensor(t.shape())}; }
};

// ---------------------------------------------------------------------------
// Learnable weights, keyed by dotted module path. std::map keeps iteration
// deterministic, which checkpoint hashing and the optimizer rely on.
class ParameterStore {
public:
    Tensor& create(const std::string& name, Tensor init);
    bool has(const std::string& name) const { return p_.count(name) != 0; }
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;

    const std::map<std::string, Tensor>& entries() const { return p_; }
    std::map<std::string, Tensor>& entries() { return p_; }
    size_t size() const { return p_.size(); }
    int64_t total_elements() const;
    uint64_t content_hash() const;

private:
    std::map<std::string, Tensor> p_;
};

using GradMap = std::map<std::string, Tensor>;

// ---------------------------------------------------------------------------
// Evaluation contexts. Model code is written once against a Ctx template
// parameter and runs in three modes: plain evaluation, tape building, and
// dual-number JVP. param() lifts a stored tensor into the mode's type,
// cached per name so every use shares one node.
struct EvalCtx {
    using T = Tensor;
    explicit EvalCtx(const ParameterStore& p) : params(p) {}
    const ParameterStore& params;
    const Tensor& param(const std::string& name) { return params.at(name); }
    Tensor constant(const Tensor& t) { return t; }
    Tensor constant(Tensor&& t) { return std::move(t); }
};

struct TapeCtx {
    using T = Value;
    TapeCtx(Tape& t, const ParameterStore& p) : tape(t), params(p) {}
    Tape& tape;
    const ParameterStore& params;
    Value param(const std::string& name);
    Value constant(const Tensor& t) { return tape.leaf(t); }
    // gradient map keyed like the store; zero tensors for untouched params
    GradMap grads() const;

private:
    std::map<std::string, Value> lifted_;
};

struct DualCtx {
    using T = Dual;
    explicit DualCtx(const ParameterStore& p) : params(p) {}
    const ParameterStore& params;
    Dual param(const std::string& name) { return Dual::constant(params.at(name)); }
    Dual constant(const Tensor& t) { return Dual::constant(t); }
};

// ---------------------------------------------------------------------------
// Primitive overloads: Value mode
Value add(Value a, Value b);
Value sub(Value a, Value b);
Value mul(Value a, Value b);
Value scale(Value a, double c);
Value add_scalar(Value a, double c);
Value neg(Value a);
Value matmul(Value a, Value b);
Value transpose2d(Value a);
Value affine(Value x, Value w, Value b);
Value gelu(Value x);
Value exp_t(Value x);
Value log_t(Value x);
Value softmax_rows(Value x);
Value layer_norm(Value x);
Value concat(Value a, Value b, int axis);
Value slice(Value x, int axis, int64_t start, int64_t len);
Value reshape(Value x, Shape s);
Value gather_rows(Value x, const std::vector<int64_t>& idx);
Value sum_all_v(Value x);
Value mean_all_v(Value x);
Value sinusoid(Value s, const Tensor& omega, const Tensor& phi);
Value stop_gradient(Value x);

// Dual mode
Dual add(const Dual& a, const Dual& b);
Dual sub(const Dual& a, const Dual& b);
Dual mul(const Dual& a, const Dual& b);
Dual scale(const Dual& a, double c);
Dual add_scalar(const Dual& a, double c);
Dual neg(const Dual& a);
Dual matmul(const Dual& a, const Dual& b);
Dual transpose2d(const Dual& a);
Dual affine(const Dual& x, const Dual& w, const Dual& b);
Dual gelu(const Dual& x);
Dual exp_t(const Dual& x);
Dual log_t(const Dual& x);
Dual softmax_rows(const Dual& x);
Dual layer_norm(const Dual& x);
Dual concat(const Dual& a, const Dual& b, int axis);
Dual slice(const Dual& x, int axis, int64_t start, int64_t len);
Dual reshape(const Dual& x, Shape s);
Dual gather_rows(const Dual& x, const std::vector<int64_t>& idx);
Dual sum_all_v(const Dual& x);
Dual mean_all_v(const Dual& x);
Dual sinusoid(const Dual& s, const Tensor& omega, const Tensor& phi);
Dual stop_gradient(const Dual& x);

// Tensor-mode names that mirror the tape/dual-only ops
Tensor layer_norm(const Tensor& x);
Tensor sum_all_v(const Tensor& x);
Tensor mean_all_v(const Tensor& x);
Tensor sinusoid(const Tensor& s, const Tensor& omega, const Tensor& phi);
inline Tensor stop_gradient(const Tensor& x) { return x; }

// ---------------------------------------------------------------------------
// backward(loss, params): gradients of a scalar loss for every parameter the
// graph touched, zeros for the rest. The tape is left reusable; callers
// clear it when the step is done.
GradMap backward(Value loss, TapeCtx& ctx);

// Directional derivative of f(z, r, t) along (dz, dr, dt) without
// materializing a Jacobian. f must be composed of the primitives above,
// called with Dual arguments.
template <class F>
std::pair<Tensor, Tensor> jvp(F&& f, const Tensor& z, double r, double t, const Tensor& dz, double dr,
                              double dt) {
    RF_REQUIRE(dz.same_shape(z), "jvp: tangent shape must equal primal shape");
    Dual zdual{z, dz};
    Dual rdual{Tensor::scalar(r), Tensor::scalar(dr)};
    Dual tdual{Tensor::scalar(t), Tensor::scalar(dt)};
    Dual out = f(zdual, rdual, tdual);
    return {std::move(out.v), std::move(out.d)};
}

// Central finite difference of f along direction d, per output coordinate.
Tensor finite_diff_directional(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                               const Tensor& direction, double h);

}  // namespace reactflow
