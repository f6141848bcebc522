// Dense f64 tensors, seeded RNG streams, and the elementwise/matrix kernels
// shared by all evaluation modes.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace reactflow {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

[[noreturn]] void fail(const std::string& msg);

#define RF_REQUIRE(cond, msg)                  \
    do {                                       \
        if (!(cond)) ::reactflow::fail(msg);   \
    } while (0)

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor zeros(const Shape& s) { return Tensor(s); }
    static Tensor full(const Shape& s, double v);

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& at(int64_t i) { return data_[static_cast<size_t>(i)]; }
    double at(int64_t i) const { return data_[static_cast<size_t>(i)]; }
    // rank-2 access, row major
    double& at2(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * shape_[1] + c)]; }
    double at2(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * shape_[1] + c)]; }

    double item() const;  // requires numel() == 1

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    bool all_finite() const;

    Tensor& add_(const Tensor& o);
    Tensor& scale_(double c);
    void fill(double v);

private:
    Shape shape_;
    std::vector<double> data_;
};

int64_t shape_numel(const Shape& s);

// ---------------------------------------------------------------------------
// Seeded RNG. xoshiro256** with splitmix64 seeding; the full state is four
// u64 words so trainer state can be checkpointed and resumed exactly.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) { reseed(seed); }

    void reseed(uint64_t seed);
    uint64_t next_u64();
    double uniform01();                      // in (0, 1]
    double normal();                         // Box-Muller, two uniforms per draw
    int64_t uniform_int(int64_t n);          // in [0, n)
    Tensor normal_tensor(const Shape& s);

    std::vector<uint64_t> state() const { return {s_[0], s_[1], s_[2], s_[3]}; }
    void set_state(const std::vector<uint64_t>& st);

private:
    uint64_t s_[4] = {};
};

// Counter-based gaussian noise: value depends only on (seed, stream, index),
// so a generator and its replay oracle consume identical noise in any order.
class NoiseStream {
public:
    NoiseStream(uint64_t seed, uint64_t stream) : seed_(seed), stream_(stream) {}

    double normal_at(uint64_t index) const;
    Tensor normal_tensor(const Shape& s, uint64_t block) const;  // block = token index etc.

private:
    uint64_t seed_ = 0;
    uint64_t stream_ = 0;
};

uint64_t fnv1a(const void* bytes, size_t n);
uint64_t fnv1a(const std::vector<double>& v);

// ---------------------------------------------------------------------------
// Elementwise and matrix kernels. Broadcasting is deliberately narrow:
// same shape, scalar (numel 1) second operand, or a row vector [C] / [1,C]
// against a [T,C] matrix.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose2d(const Tensor& a);
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);  // x[N,K]*w[K,M]+b[M]

Tensor gelu(const Tensor& x);
Tensor gelu_grad(const Tensor& x);  // d gelu / dx, elementwise
Tensor exp_t(const Tensor& x);
Tensor log_t(const Tensor& x);

Tensor softmax_rows(const Tensor& x);  // rank-2, softmax along last axis
// y = (x - mean) / sqrt(var + eps) per row; inv_std returned for the
// derivative rules.
struct LayerNormResult {
    Tensor y;
    Tensor inv_std;  // [rows]
};
LayerNormResult layer_norm_fwd(const Tensor& x, double eps = 1e-5);

Tensor concat(const Tensor& a, const Tensor& b, int axis);
Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len);
Tensor reshape(const Tensor& x, Shape s);
Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& idx);

double sum_all(const Tensor& x);
double mean_all(const Tensor& x);

// sin(omega * s + phi) for scalar s against fixed frequency/phase vectors.
Tensor sinusoid(double s, const Tensor& omega, const Tensor& phi);

// row-wise helpers used by derivative rules (not part of the op set)
Tensor rowsum(const Tensor& x);        // [T,C] -> [T,1]
Tensor colsum(const Tensor& x);        // [T,C] -> [C]
Tensor rowdot(const Tensor& a, const Tensor& b);  // [T,C],[T,C] -> [T,1]
Tensor mul_rowvec(const Tensor& x, const Tensor& r);  // x[T,C] * r[T,1]

// Sums g down to `target` under the broadcast rules above.
Tensor reduce_to_shape(const Tensor& g, const Shape& target);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace reactflow
