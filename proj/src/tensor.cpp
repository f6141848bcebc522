#include "reactflow/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

namespace reactflow {

void fail(const std::string& msg) { throw Error(msg); }

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << "]";
    return os.str();
}

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) {
        RF_REQUIRE(d >= 0, "negative dimension in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    RF_REQUIRE(static_cast<int64_t>(data_.size()) == shape_numel(shape_),
               "tensor data size does not match shape " + shape_str(shape_));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::full(const Shape& s, double v) {
    Tensor t(s);
    t.fill(v);
    return t;
}

double Tensor::item() const {
    RF_REQUIRE(numel() == 1, "item() on tensor with " + std::to_string(numel()) + " elements");
    return data_[0];
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor& Tensor::add_(const Tensor& o) {
    RF_REQUIRE(same_shape(o), "add_: shape mismatch " + shape_str(shape_) + " vs " + shape_str(o.shape_));
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}

Tensor& Tensor::scale_(double c) {
    for (double& v : data_) v *= c;
    return *this;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

// ---------------------------------------------------------------------------
// RNG

static uint64_t splitmix64(uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

static inline uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

void Rng::reseed(uint64_t seed) {
    uint64_t x = seed;
    for (auto& w : s_) w = splitmix64(x);
}

uint64_t Rng::next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double Rng::uniform01() {
    // 53-bit mantissa, shifted into (0, 1] so log() below is safe
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
}

double Rng::normal() {
    const double u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

int64_t Rng::uniform_int(int64_t n) {
    RF_REQUIRE(n > 0, "uniform_int: n must be positive");
    // rejection sampling to kill modulo bias
    const uint64_t un = static_cast<uint64_t>(n);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t r = next_u64();
    while (r >= limit) r = next_u64();
    return static_cast<int64_t>(r % un);
}

Tensor Rng::normal_tensor(const Shape& s) {
    Tensor t(s);
    for (int64_t i = 0; i < t.numel(); ++i) t.at(i) = normal();
    return t;
}

void Rng::set_state(const std::vector<uint64_t>& st) {
    RF_REQUIRE(st.size() == 4, "rng state must have 4 words");
    for (int i = 0; i < 4; ++i) s_[i] = st[static_cast<size_t>(i)];
}

static uint64_t mix3(uint64_t a, uint64_t b, uint64_t c) {
    uint64_t x = a ^ (b * 0x9e3779b97f4a7c15ULL) ^ (c * 0xc2b2ae3d27d4eb4fULL);
    x = splitmix64(x);
    return splitmix64(x);
}

double NoiseStream::normal_at(uint64_t index) const {
    uint64_t h1 = mix3(seed_, stream_, index * 2);
    uint64_t h2 = mix3(seed_, stream_, index * 2 + 1);
    const double u1 = (static_cast<double>(h1 >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = (static_cast<double>(h2 >> 11) + 1.0) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

Tensor NoiseStream::normal_tensor(const Shape& s, uint64_t block) const {
    Tensor t(s);
    const uint64_t base = block * (1ULL << 20);  // generous per-block stride
    for (int64_t i = 0; i < t.numel(); ++i) t.at(i) = normal_at(base + static_cast<uint64_t>(i));
    return t;
}

uint64_t fnv1a(const void* bytes, size_t n) {
    const unsigned char* p = static_cast<const unsigned char*>(bytes);
    uint64_t h = 0xcbf29ce484222325ULL;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

uint64_t fnv1a(const std::vector<double>& v) { return fnv1a(v.data(), v.size() * sizeof(double)); }

// ---------------------------------------------------------------------------
// Broadcast plumbing

enum class Bcast { Same, Scalar, Row };

static Bcast bcast_kind(const Tensor& a, const Tensor& b, const char* op) {
    if (a.same_shape(b)) return Bcast::Same;
    if (b.numel() == 1) return Bcast::Scalar;
    if (a.rank() == 2) {
        const int64_t c = a.dim(1);
        if ((b.rank() == 1 && b.dim(0) == c) || (b.rank() == 2 && b.dim(0) == 1 && b.dim(1) == c))
            return Bcast::Row;
    }
    fail(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <class F>
static Tensor bcast_apply(const Tensor& a, const Tensor& b, const char* op, F&& f) {
    Tensor out(a.shape());
    switch (bcast_kind(a, b, op)) {
        case Bcast::Same:
            for (int64_t i = 0; i < a.numel(); ++i) out.at(i) = f(a.at(i), b.at(i));
            break;
        case Bcast::Scalar: {
            const double s = b.at(0);
            for (int64_t i = 0; i < a.numel(); ++i) out.at(i) = f(a.at(i), s);
            break;
        }
        case Bcast::Row: {
            const int64_t rows = a.dim(0), cols = a.dim(1);
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t c = 0; c < cols; ++c)
                    out.at(r * cols + c) = f(a.at(r * cols + c), b.at(c));
            break;
        }
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.numel() == 1 && b.numel() > 1) return add(b, a);
    return bcast_apply(a, b, "add", [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return bcast_apply(a, b, "sub", [](double x, double y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.numel() == 1 && b.numel() > 1) return mul(b, a);
    return bcast_apply(a, b, "mul", [](double x, double y) { return x * y; });
}

Tensor scale(const Tensor& a, double c) {
    Tensor out = a;
    out.scale_(c);
    return out;
}

Tensor add_scalar(const Tensor& a, double c) {
    Tensor out = a;
    for (int64_t i = 0; i < out.numel(); ++i) out.at(i) += c;
    return out;
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor matmul(const Tensor& a, const Tensor& b) {
    RF_REQUIRE(a.rank() == 2 && b.rank() == 2, "matmul: rank-2 operands required");
    RF_REQUIRE(a.dim(1) == b.dim(0),
               "matmul: inner dims differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const int64_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
    Tensor out({n, m});
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t kk = 0; kk < k; ++kk) {
            const double av = pa[i * k + kk];
            if (av == 0.0) continue;
            const double* brow = pb + kk * m;
            double* orow = po + i * m;
            for (int64_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

Tensor transpose2d(const Tensor& a) {
    RF_REQUIRE(a.rank() == 2, "transpose: rank-2 required");
    const int64_t n = a.dim(0), m = a.dim(1);
    Tensor out({m, n});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < m; ++j) out.at(j * n + i) = a.at(i * m + j);
    return out;
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    RF_REQUIRE(b.rank() == 1 && b.dim(0) == w.dim(1), "affine: bias shape mismatch");
    Tensor out = matmul(x, w);
    const int64_t rows = out.dim(0), cols = out.dim(1);
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) out.at(r * cols + c) += b.at(c);
    return out;
}

// tanh-form gelu; smooth and cheap, derivative in closed form below
static inline double gelu1(double x) {
    const double k = 0.7978845608028654;  // sqrt(2/pi)
    const double inner = k * (x + 0.044715 * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(inner));
}

static inline double gelu1_grad(double x) {
    const double k = 0.7978845608028654;
    const double inner = k * (x + 0.044715 * x * x * x);
    const double t = std::tanh(inner);
    const double dinner = k * (1.0 + 3.0 * 0.044715 * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
}

Tensor gelu(const Tensor& x) {
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) out.at(i) = gelu1(x.at(i));
    return out;
}

Tensor gelu_grad(const Tensor& x) {
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) out.at(i) = gelu1_grad(x.at(i));
    return out;
}

Tensor exp_t(const Tensor& x) {
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) out.at(i) = std::exp(x.at(i));
    return out;
}

Tensor log_t(const Tensor& x) {
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) out.at(i) = std::log(x.at(i));
    return out;
}

Tensor softmax_rows(const Tensor& x) {
    RF_REQUIRE(x.rank() == 2, "softmax: rank-2 required");
    const int64_t rows = x.dim(0), cols = x.dim(1);
    Tensor out(x.shape());
    for (int64_t r = 0; r < rows; ++r) {
        double mx = x.at(r * cols);
        for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, x.at(r * cols + c));
        double s = 0.0;
        for (int64_t c = 0; c < cols; ++c) {
            const double e = std::exp(x.at(r * cols + c) - mx);
            out.at(r * cols + c) = e;
            s += e;
        }
        for (int64_t c = 0; c < cols; ++c) out.at(r * cols + c) /= s;
    }
    return out;
}

LayerNormResult layer_norm_fwd(const Tensor& x, double eps) {
    RF_REQUIRE(x.rank() == 2, "layer_norm: rank-2 required");
    const int64_t rows = x.dim(0), cols = x.dim(1);
    LayerNormResult res{Tensor(x.shape()), Tensor({rows})};
    for (int64_t r = 0; r < rows; ++r) {
        double mu = 0.0;
        for (int64_t c = 0; c < cols; ++c) mu += x.at(r * cols + c);
        mu /= static_cast<double>(cols);
        double var = 0.0;
        for (int64_t c = 0; c < cols; ++c) {
            const double d = x.at(r * cols + c) - mu;
            var += d * d;
        }
        var /= static_cast<double>(cols);
        const double inv = 1.0 / std::sqrt(var + eps);
        res.inv_std.at(r) = inv;
        for (int64_t c = 0; c < cols; ++c) res.y.at(r * cols + c) = (x.at(r * cols + c) - mu) * inv;
    }
    return res;
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
    RF_REQUIRE(a.rank() == b.rank() && a.rank() == 2, "concat: rank-2 operands required");
    RF_REQUIRE(axis == 0 || axis == 1, "concat: axis must be 0 or 1");
    if (axis == 0) {
        RF_REQUIRE(a.dim(1) == b.dim(1), "concat axis 0: column mismatch");
        Tensor out({a.dim(0) + b.dim(0), a.dim(1)});
        std::copy(a.data(), a.data() + a.numel(), out.data());
        std::copy(b.data(), b.data() + b.numel(), out.data() + a.numel());
        return out;
    }
    RF_REQUIRE(a.dim(0) == b.dim(0), "concat axis 1: row mismatch");
    const int64_t rows = a.dim(0), ca = a.dim(1), cb = b.dim(1);
    Tensor out({rows, ca + cb});
    for (int64_t r = 0; r < rows; ++r) {
        std::copy(a.data() + r * ca, a.data() + (r + 1) * ca, out.data() + r * (ca + cb));
        std::copy(b.data() + r * cb, b.data() + (r + 1) * cb, out.data() + r * (ca + cb) + ca);
    }
    return out;
}

Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len) {
    RF_REQUIRE(x.rank() == 2, "slice: rank-2 required");
    RF_REQUIRE(axis == 0 || axis == 1, "slice: axis must be 0 or 1");
    RF_REQUIRE(start >= 0 && len >= 0 && start + len <= x.dim(axis), "slice: out of range");
    if (axis == 0) {
        Tensor out({len, x.dim(1)});
        std::copy(x.data() + start * x.dim(1), x.data() + (start + len) * x.dim(1), out.data());
        return out;
    }
    const int64_t rows = x.dim(0), cols = x.dim(1);
    Tensor out({rows, len});
    for (int64_t r = 0; r < rows; ++r)
        std::copy(x.data() + r * cols + start, x.data() + r * cols + start + len, out.data() + r * len);
    return out;
}

Tensor reshape(const Tensor& x, Shape s) {
    RF_REQUIRE(shape_numel(s) == x.numel(),
               "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(s));
    return Tensor(std::move(s), x.vec());
}

Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& idx) {
    RF_REQUIRE(x.rank() == 2, "gather_rows: rank-2 required");
    const int64_t rows = x.dim(0), cols = x.dim(1);
    Tensor out({static_cast<int64_t>(idx.size()), cols});
    for (size_t i = 0; i < idx.size(); ++i) {
        RF_REQUIRE(idx[i] >= 0 && idx[i] < rows,
                   "gather_rows: index " + std::to_string(idx[i]) + " out of range [0," + std::to_string(rows) + ")");
        std::copy(x.data() + idx[i] * cols, x.data() + (idx[i] + 1) * cols,
                  out.data() + static_cast<int64_t>(i) * cols);
    }
    return out;
}

double sum_all(const Tensor& x) {
    double s = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i) s += x.at(i);
    return s;
}

double mean_all(const Tensor& x) {
    RF_REQUIRE(x.numel() > 0, "mean of empty tensor");
    return sum_all(x) / static_cast<double>(x.numel());
}

Tensor sinusoid(double s, const Tensor& omega, const Tensor& phi) {
    RF_REQUIRE(omega.same_shape(phi), "sinusoid: omega/phi shape mismatch");
    Tensor out(omega.shape());
    for (int64_t i = 0; i < omega.numel(); ++i) out.at(i) = std::sin(omega.at(i) * s + phi.at(i));
    return out;
}

Tensor rowsum(const Tensor& x) {
    RF_REQUIRE(x.rank() == 2, "rowsum: rank-2 required");
    Tensor out({x.dim(0), 1});
    for (int64_t r = 0; r < x.dim(0); ++r) {
        double s = 0.0;
        for (int64_t c = 0; c < x.dim(1); ++c) s += x.at2(r, c);
        out.at(r) = s;
    }
    return out;
}

Tensor colsum(const Tensor& x) {
    RF_REQUIRE(x.rank() == 2, "colsum: rank-2 required");
    Tensor out({x.dim(1)});
    for (int64_t r = 0; r < x.dim(0); ++r)
        for (int64_t c = 0; c < x.dim(1); ++c) out.at(c) += x.at2(r, c);
    return out;
}

Tensor rowdot(const Tensor& a, const Tensor& b) {
    RF_REQUIRE(a.same_shape(b) && a.rank() == 2, "rowdot: matching rank-2 required");
    Tensor out({a.dim(0), 1});
    for (int64_t r = 0; r < a.dim(0); ++r) {
        double s = 0.0;
        for (int64_t c = 0; c < a.dim(1); ++c) s += a.at2(r, c) * b.at2(r, c);
        out.at(r) = s;
    }
    return out;
}

Tensor mul_rowvec(const Tensor& x, const Tensor& r) {
    RF_REQUIRE(x.rank() == 2 && r.rank() == 2 && r.dim(1) == 1 && r.dim(0) == x.dim(0),
               "mul_rowvec: shape mismatch");
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.dim(0); ++i)
        for (int64_t c = 0; c < x.dim(1); ++c) out.at2(i, c) = x.at2(i, c) * r.at(i);
    return out;
}

Tensor reduce_to_shape(const Tensor& g, const Shape& target) {
    if (g.shape() == target) return g;
    const int64_t tn = shape_numel(target);
    if (tn == 1) {
        Tensor out(target);
        out.at(0) = sum_all(g);
        return out;
    }
    // row-vector case: sum over leading axis
    if (g.rank() == 2) {
        const int64_t c = g.dim(1);
        if ((target.size() == 1 && target[0] == c) ||
            (target.size() == 2 && target[0] == 1 && target[1] == c)) {
            Tensor s = colsum(g);
            return target.size() == 1 ? s : reshape(s, {1, c});
        }
    }
    fail("reduce_to_shape: cannot reduce " + shape_str(g.shape()) + " to " + shape_str(target));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    RF_REQUIRE(a.same_shape(b), "max_abs_diff: shape mismatch");
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
    return m;
}

}  // namespace reactflow
