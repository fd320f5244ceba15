#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "rtvla/tensor.hpp"
#include "rtvla/evaluate.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

using namespace rtvla;

namespace {

// Independent restatement of SplitMix64 used as a portability oracle.
uint64_t ref_splitmix64(uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
    Tensor y(a.rows, b.cols);
    for (int64_t i = 0; i < a.rows; ++i)
        for (int64_t j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (int64_t p = 0; p < a.cols; ++p) acc += a.at(i, p) * b.at(p, j);
            y.at(i, j) = acc;
        }
    return y;
}

}  // namespace

TEST_CASE("rng matches the published splitmix64 stream") {
    for (uint64_t seed : {0ULL, 1ULL, 42ULL, 0xdeadbeefULL, 0xffffffffffffffffULL}) {
        Rng rng(seed);
        uint64_t ref_state = seed;
        for (int i = 0; i < 64; ++i) CHECK(rng.next_u64() == ref_splitmix64(ref_state));
    }
}

TEST_CASE("rng units are deterministic and in [0,1)") {
    Rng a(7), b(7);
    for (int i = 0; i < 1000; ++i) {
        double u = a.next_unit();
        CHECK(u == b.next_unit());
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    Rng c(7);
    double lo = 3.0, hi = 5.0, mean = 0.0;
    for (int i = 0; i < 4000; ++i) {
        double v = c.next_uniform(lo, hi);
        CHECK(v >= lo);
        CHECK(v < hi);
        mean += v;
    }
    mean /= 4000.0;
    CHECK(std::abs(mean - 4.0) < 0.05);
}

TEST_CASE("seed_hash separates labels and indices deterministically") {
    CHECK(seed_hash(1, "w", 0, 0) == seed_hash(1, "w", 0, 0));
    CHECK(seed_hash(1, "w", 0, 0) != seed_hash(2, "w", 0, 0));
    CHECK(seed_hash(1, "w", 0, 0) != seed_hash(1, "b", 0, 0));
    CHECK(seed_hash(1, "w", 0, 0) != seed_hash(1, "w", 1, 0));
    CHECK(seed_hash(1, "w", 0, 0) != seed_hash(1, "w", 0, 1));
}

TEST_CASE("random_tensor is reproducible and respects bounds") {
    Tensor t = random_tensor(8, 9, -0.5, 0.5, 33);
    Tensor u = random_tensor(8, 9, -0.5, 0.5, 33);
    CHECK(t.data == u.data);
    for (double v : t.data) {
        CHECK(v >= -0.5);
        CHECK(v < 0.5);
    }
}

TEST_CASE("matmul agrees with a naive triple loop") {
    Tensor a = random_tensor(7, 13, -1.0, 1.0, 1);
    Tensor b = random_tensor(13, 5, -1.0, 1.0, 2);
    Tensor y = matmul(a, b);
    Tensor r = naive_matmul(a, b);
    REQUIRE(y.rows == 7);
    REQUIRE(y.cols == 5);
    for (size_t i = 0; i < y.data.size(); ++i)
        CHECK(y.data[i] == doctest::Approx(r.data[i]).epsilon(1e-12));
}

TEST_CASE("matmul identity and shape errors") {
    Tensor a = random_tensor(4, 6, -1.0, 1.0, 3);
    Tensor id(6, 6);
    for (int64_t i = 0; i < 6; ++i) id.at(i, i) = 1.0;
    Tensor y = matmul(a, id);
    for (size_t i = 0; i < a.data.size(); ++i) CHECK(y.data[i] == a.data[i]);
    Tensor bad(5, 3);
    CHECK_THROWS_AS(matmul(a, bad), ShapeError);
}

TEST_CASE("rms_norm matches hand computation and rms_scales") {
    Tensor x(2, 3);
    double vals[6] = {1.0, 2.0, 2.0, -3.0, 0.0, 4.0};
    for (int i = 0; i < 6; ++i) x.data[size_t(i)] = vals[i];
    std::vector<double> gamma = {1.0, 0.5, 2.0};
    double eps = 1e-6;
    Tensor y = rms_norm(x, gamma, eps);
    Tensor s = rms_scales(x, eps);
    for (int64_t i = 0; i < 2; ++i) {
        double ms = 0.0;
        for (int64_t j = 0; j < 3; ++j) ms += x.at(i, j) * x.at(i, j);
        ms /= 3.0;
        double scale = 1.0 / std::sqrt(ms + eps);
        CHECK(s.at(i, 0) == doctest::Approx(scale).epsilon(1e-14));
        for (int64_t j = 0; j < 3; ++j)
            CHECK(y.at(i, j) == doctest::Approx(x.at(i, j) * scale * gamma[size_t(j)]).epsilon(1e-14));
    }
    std::vector<double> short_gamma = {1.0};
    CHECK_THROWS_AS(rms_norm(x, short_gamma, eps), ShapeError);
}

TEST_CASE("softmax rows sum to one and are shift invariant") {
    Tensor x = random_tensor(5, 11, -4.0, 4.0, 9);
    Tensor p = softmax_rows(x);
    for (int64_t i = 0; i < p.rows; ++i) {
        double sum = 0.0;
        for (int64_t j = 0; j < p.cols; ++j) {
            CHECK(p.at(i, j) > 0.0);
            sum += p.at(i, j);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
    Tensor shifted = x;
    for (auto& v : shifted.data) v += 123.0;
    Tensor q = softmax_rows(shifted);
    for (size_t i = 0; i < p.data.size(); ++i)
        CHECK(p.data[i] == doctest::Approx(q.data[i]).epsilon(1e-9));

    Tensor two(1, 2);
    two.at(0, 0) = 0.0;
    two.at(0, 1) = std::log(3.0);
    Tensor pt = softmax_rows(two);
    CHECK(pt.at(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(pt.at(0, 1) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("gelu and silu follow their closed forms") {
    CHECK(gelu(0.0) == 0.0);
    CHECK(silu(0.0) == 0.0);
    CHECK(gelu(20.0) == doctest::Approx(20.0).epsilon(1e-9));
    CHECK(std::abs(gelu(-20.0)) < 1e-6);
    for (double x : {-2.5, -1.0, -0.1, 0.3, 1.0, 2.7}) {
        double expect_g =
            0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
        double expect_s = x / (1.0 + std::exp(-x));
        CHECK(gelu(x) == doctest::Approx(expect_g).epsilon(1e-12));
        CHECK(silu(x) == doctest::Approx(expect_s).epsilon(1e-12));
    }
    Tensor t = random_tensor(3, 4, -3.0, 3.0, 5);
    Tensor g = gelu(t);
    Tensor s = silu(t);
    for (size_t i = 0; i < t.data.size(); ++i) {
        CHECK(g.data[i] == doctest::Approx(gelu(t.data[i])).epsilon(1e-14));
        CHECK(s.data[i] == doctest::Approx(silu(t.data[i])).epsilon(1e-14));
    }
}

TEST_CASE("rope is identity at position zero and preserves pair norms") {
    const int head_dim = 8;
    RopeTable table = make_rope_table(16, head_dim, 10000.0);
    REQUIRE(table.cos_t.rows == 16);
    REQUIRE(table.cos_t.cols == head_dim / 2);
    Tensor x = random_tensor(4, 2 * head_dim, -1.0, 1.0, 17);  // 2 heads

    std::vector<int> zeros(4, 0);
    Tensor y0 = rope_apply(x, table, zeros);
    for (size_t i = 0; i < x.data.size(); ++i)
        CHECK(y0.data[i] == doctest::Approx(x.data[i]).epsilon(1e-12));

    std::vector<int> pos = {3, 7, 1, 15};
    Tensor y = rope_apply(x, table, pos);
    const int half = head_dim / 2;
    for (int64_t t = 0; t < x.rows; ++t)
        for (int h = 0; h < 2; ++h)
            for (int j = 0; j < half; ++j) {
                double a0 = x.at(t, h * head_dim + j);
                double b0 = x.at(t, h * head_dim + j + half);
                double a1 = y.at(t, h * head_dim + j);
                double b1 = y.at(t, h * head_dim + j + half);
                CHECK(a0 * a0 + b0 * b0 == doctest::Approx(a1 * a1 + b1 * b1).epsilon(1e-10));
            }

    // Rotation of the first pair at position p uses angle p (frequency 1).
    Tensor one(1, head_dim);
    one.at(0, 0) = 1.0;
    std::vector<int> p5 = {5};
    Tensor r = rope_apply(one, table, p5);
    CHECK(r.at(0, 0) == doctest::Approx(std::cos(5.0)).epsilon(1e-12));
    CHECK(r.at(0, half) == doctest::Approx(std::sin(5.0)).epsilon(1e-12));
}

TEST_CASE("bilinear resize preserves constants and interpolates midpoints") {
    Tensor img(2, 2);  // 2x2, 1 channel
    img.at(0, 0) = 1.0;
    img.at(0, 1) = 3.0;
    img.at(1, 0) = 5.0;
    img.at(1, 1) = 7.0;
    Tensor up = bilinear_resize(img, 1, 4, 4);
    REQUIRE(up.rows == 4);
    REQUIRE(up.cols == 4);
    for (double v : up.data) {
        CHECK(v >= 1.0 - 1e-12);
        CHECK(v <= 7.0 + 1e-12);
    }
    Tensor flat(3, 3);
    for (auto& v : flat.data) v = 2.5;
    Tensor up2 = bilinear_resize(flat, 1, 7, 5);
    for (double v : up2.data) CHECK(v == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("time embedding endpoints and range") {
    const int dim = 16;
    std::vector<double> e0 = time_embedding(0, dim, 10);
    REQUIRE(int(e0.size()) == dim);
    for (int j = 0; j < dim / 2; ++j) {
        CHECK(e0[size_t(j)] == doctest::Approx(0.0).epsilon(1e-12));              // sin(0)
        CHECK(e0[size_t(j + dim / 2)] == doctest::Approx(1.0).epsilon(1e-12));    // cos(0)
    }
    for (int step : {1, 5, 10}) {
        std::vector<double> e = time_embedding(step, dim, 10);
        for (double v : e) {
            CHECK(v >= -1.0);
            CHECK(v <= 1.0);
        }
    }
    CHECK(time_embedding(3, dim, 10) == time_embedding(3, dim, 10));
    CHECK(time_embedding(3, dim, 10) != time_embedding(4, dim, 10));
}

TEST_CASE("max_rel_deviation measures the worst relative gap") {
    Tensor a(1, 3), b(1, 3);
    a.data = {1.0, -2.0, 4.0};
    b.data = {1.0, -2.0, 4.0};
    CHECK(max_rel_deviation(a, b) == 0.0);
    b.data[2] = 4.0 + 4e-9;
    double d = max_rel_deviation(a, b);
    CHECK(d == doctest::Approx(1e-9).epsilon(1e-3));
}
