#pragma once

// Double-precision reference tensors and the small op set needed to evaluate
// pi0-style inference graphs. Everything here is deliberately scalar code:
// these ops are the numerical oracle the rewrite passes are checked against,
// so clarity and determinism win over speed.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace rtvla {

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Row-major 2-D tensor of doubles.
struct Tensor {
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(int64_t r, int64_t c) : rows(r), cols(c), data(size_t(r * c), 0.0) {}

    double& at(int64_t r, int64_t c) { return data[size_t(r * cols + c)]; }
    double at(int64_t r, int64_t c) const { return data[size_t(r * cols + c)]; }
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
};

// Deterministic, platform-independent RNG: SplitMix64 over a 64-bit state.
// std::normal_distribution is implementation-defined, so uniforms are built
// directly from the top 53 bits.
struct Rng {
    uint64_t state;
    explicit Rng(uint64_t seed) : state(seed) {}
    uint64_t next_u64();
    double next_unit();                    // [0, 1)
    double next_uniform(double lo, double hi);
};

// FNV-1a over a label plus mixing values; used to derive per-weight seeds.
uint64_t seed_hash(uint64_t seed, const std::string& label, uint64_t a, uint64_t b);

Tensor random_tensor(int64_t rows, int64_t cols, double lo, double hi, uint64_t seed);

// y = a * b, shapes [n,k] x [k,m] -> [n,m]; accumulation in double.
Tensor matmul(const Tensor& a, const Tensor& b);

// Per-row RMS normalization with affine weight gamma (length = cols).
// y[i,:] = x[i,:] / sqrt(mean(x[i,:]^2) + eps) * gamma
Tensor rms_norm(const Tensor& x, const std::vector<double>& gamma, double eps);

// Per-row scale factors 1 / sqrt(mean(x[i,:]^2) + eps), returned as [rows,1].
Tensor rms_scales(const Tensor& x, double eps);

// Row-wise softmax with max subtraction.
Tensor softmax_rows(const Tensor& x);

// Elementwise activations. gelu uses the tanh approximation.
double gelu(double x);
double silu(double x);
Tensor gelu(const Tensor& x);
Tensor silu(const Tensor& x);

// Precomputed rotary tables: cos/sin of p * base^(-2j/head_dim) for
// position p in [0, positions) and pair index j in [0, head_dim/2).
struct RopeTable {
    int head_dim = 0;
    Tensor cos_t;  // [positions, head_dim/2]
    Tensor sin_t;
};

RopeTable make_rope_table(int positions, int head_dim, double base);

// Applies the rotary transform to x viewed as [tokens, heads, head_dim];
// x.cols must be a multiple of head_dim. Pairing is half-split: dimension j
// rotates with j + head_dim/2. positions[i] indexes the table row of token i.
Tensor rope_apply(const Tensor& x, const RopeTable& table, const std::vector<int>& positions);

// Bilinear resize of an [h, w*channels] image with half-pixel centers and
// edge clamping. Input rows/cols are interpreted as h and w*channels.
Tensor bilinear_resize(const Tensor& img, int channels, int out_h, int out_w);

}  // namespace rtvla
