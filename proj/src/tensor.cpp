#include "rtvla/tensor.hpp"

#include <cmath>

namespace rtvla {

uint64_t Rng::next_u64() {
    // SplitMix64 (Steele et al.), stable across platforms.
    state += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double Rng::next_unit() {
    return double(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_unit();
}

uint64_t seed_hash(uint64_t seed, const std::string& label, uint64_t a, uint64_t b) {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xff;
            h *= 0x100000001b3ULL;
        }
    };
    mix(seed);
    for (char c : label) {
        h ^= uint8_t(c);
        h *= 0x100000001b3ULL;
    }
    mix(a);
    mix(b);
    return h;
}

Tensor random_tensor(int64_t rows, int64_t cols, double lo, double hi, uint64_t seed) {
    Tensor t(rows, cols);
    Rng rng(seed);
    for (auto& v : t.data) v = rng.next_uniform(lo, hi);
    return t;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols != b.rows)
        throw ShapeError("matmul: inner dims differ: [" + std::to_string(a.rows) + "," +
                         std::to_string(a.cols) + "] x [" + std::to_string(b.rows) + "," +
                         std::to_string(b.cols) + "]");
    Tensor y(a.rows, b.cols);
    const int64_t n = a.rows, k = a.cols, m = b.cols;
    for (int64_t i = 0; i < n; ++i) {
        double* yrow = &y.data[size_t(i * m)];
        const double* arow = &a.data[size_t(i * k)];
        for (int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = &b.data[size_t(p * m)];
            for (int64_t j = 0; j < m; ++j) yrow[j] += av * brow[j];
        }
    }
    return y;
}

Tensor rms_norm(const Tensor& x, const std::vector<double>& gamma, double eps) {
    if (int64_t(gamma.size()) != x.cols)
        throw ShapeError("rms_norm: gamma length " + std::to_string(gamma.size()) +
                         " != cols " + std::to_string(x.cols));
    Tensor s = rms_scales(x, eps);
    Tensor y(x.rows, x.cols);
    for (int64_t i = 0; i < x.rows; ++i)
        for (int64_t j = 0; j < x.cols; ++j)
            y.at(i, j) = x.at(i, j) * s.at(i, 0) * gamma[size_t(j)];
    return y;
}

Tensor rms_scales(const Tensor& x, double eps) {
    Tensor s(x.rows, 1);
    for (int64_t i = 0; i < x.rows; ++i) {
        double acc = 0.0;
        for (int64_t j = 0; j < x.cols; ++j) {
            double v = x.at(i, j);
            if (!std::isfinite(v)) throw NumericError("rms_norm: non-finite input");
            acc += v * v;
        }
        s.at(i, 0) = 1.0 / std::sqrt(acc / double(x.cols) + eps);
    }
    return s;
}

Tensor softmax_rows(const Tensor& x) {
    Tensor y(x.rows, x.cols);
    for (int64_t i = 0; i < x.rows; ++i) {
        double mx = -HUGE_VAL;
        for (int64_t j = 0; j < x.cols; ++j) {
            if (!std::isfinite(x.at(i, j))) throw NumericError("softmax: non-finite input");
            mx = std::max(mx, x.at(i, j));
        }
        double sum = 0.0;
        for (int64_t j = 0; j < x.cols; ++j) {
            double e = std::exp(x.at(i, j) - mx);
            y.at(i, j) = e;
            sum += e;
        }
        for (int64_t j = 0; j < x.cols; ++j) y.at(i, j) /= sum;
    }
    return y;
}

double gelu(double x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

double silu(double x) { return x / (1.0 + std::exp(-x)); }

Tensor gelu(const Tensor& x) {
    Tensor y(x.rows, x.cols);
    for (size_t i = 0; i < x.data.size(); ++i) y.data[i] = gelu(x.data[i]);
    return y;
}

Tensor silu(const Tensor& x) {
    Tensor y(x.rows, x.cols);
    for (size_t i = 0; i < x.data.size(); ++i) y.data[i] = silu(x.data[i]);
    return y;
}

RopeTable make_rope_table(int positions, int head_dim, double base) {
    if (head_dim <= 0 || head_dim % 2 != 0)
        throw ShapeError("rope table: head_dim must be positive and even");
    if (positions <= 0) throw ShapeError("rope table: positions must be positive");
    RopeTable t;
    t.head_dim = head_dim;
    t.cos_t = Tensor(positions, head_dim / 2);
    t.sin_t = Tensor(positions, head_dim / 2);
    for (int p = 0; p < positions; ++p) {
        for (int j = 0; j < head_dim / 2; ++j) {
            double freq = std::pow(base, -2.0 * double(j) / double(head_dim));
            double ang = double(p) * freq;
            t.cos_t.at(p, j) = std::cos(ang);
            t.sin_t.at(p, j) = std::sin(ang);
        }
    }
    return t;
}

Tensor rope_apply(const Tensor& x, const RopeTable& table, const std::vector<int>& positions) {
    if (table.head_dim <= 0) throw ShapeError("rope: empty table");
    if (x.cols % table.head_dim != 0)
        throw ShapeError("rope: cols " + std::to_string(x.cols) +
                         " not a multiple of head_dim " + std::to_string(table.head_dim));
    if (int64_t(positions.size()) != x.rows)
        throw ShapeError("rope: positions length != rows");
    const int d = table.head_dim, half = d / 2;
    const int heads = int(x.cols / d);
    Tensor y(x.rows, x.cols);
    for (int64_t i = 0; i < x.rows; ++i) {
        int p = positions[size_t(i)];
        if (p < 0 || p >= table.cos_t.rows)
            throw std::out_of_range("rope: position " + std::to_string(p) +
                                    " outside table of " + std::to_string(table.cos_t.rows));
        for (int h = 0; h < heads; ++h) {
            int64_t off = int64_t(h) * d;
            for (int j = 0; j < half; ++j) {
                double c = table.cos_t.at(p, j), s = table.sin_t.at(p, j);
                double a = x.at(i, off + j), b = x.at(i, off + j + half);
                y.at(i, off + j) = a * c - b * s;
                y.at(i, off + j + half) = a * s + b * c;
            }
        }
    }
    return y;
}

Tensor bilinear_resize(const Tensor& img, int channels, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1)
        throw std::invalid_argument("bilinear_resize: target size must be >= 1");
    if (channels < 1 || img.cols % channels != 0)
        throw ShapeError("bilinear_resize: cols not a multiple of channels");
    const int64_t in_h = img.rows, in_w = img.cols / channels;
    if (in_h < 2 || in_w < 2) throw ShapeError("bilinear_resize: input must be at least 2x2");

    Tensor out(out_h, int64_t(out_w) * channels);
    auto clampd = [](double v, double lo, double hi) { return v < lo ? lo : (v > hi ? hi : v); };
    for (int oy = 0; oy < out_h; ++oy) {
        double sy = clampd((oy + 0.5) * double(in_h) / out_h - 0.5, 0.0, double(in_h - 1));
        int64_t y0 = int64_t(sy);
        int64_t y1 = std::min(y0 + 1, in_h - 1);
        double ty = sy - double(y0);
        for (int ox = 0; ox < out_w; ++ox) {
            double sx = clampd((ox + 0.5) * double(in_w) / out_w - 0.5, 0.0, double(in_w - 1));
            int64_t x0 = int64_t(sx);
            int64_t x1 = std::min(x0 + 1, in_w - 1);
            double tx = sx - double(x0);
            for (int c = 0; c < channels; ++c) {
                double v00 = img.at(y0, x0 * channels + c);
                double v01 = img.at(y0, x1 * channels + c);
                double v10 = img.at(y1, x0 * channels + c);
                double v11 = img.at(y1, x1 * channels + c);
                double top = v00 + (v01 - v00) * tx;
                double bot = v10 + (v11 - v10) * tx;
                out.at(oy, int64_t(ox) * channels + c) = top + (bot - top) * ty;
            }
        }
    }
    return out;
}

}  // namespace rtvla
