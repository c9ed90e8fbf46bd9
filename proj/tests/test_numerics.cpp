// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>
#include <limits>

#include "harllm/error.hpp"
#include "harllm/grad_check.hpp"
#include "harllm/ops.hpp"

using namespace harllm;
using TD = Tensor<double>;

namespace {

TD randn(const Shape& s, SeedStream& rng, double sd = 1.0) {
    TD t(s);
    for (auto& v : t.span()) v = rng.normal(0.0, sd);
    return t;
}

// sum(out * probe): a scalar whose gradient w.r.t. out is the probe itself.
double dot(const TD& a, const TD& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

std::size_t pick(SeedStream& rng, std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(rng.next() % (hi - lo + 1));
}

constexpr double kTol = 1e-3;
constexpr int kSeeds = 100;

} // namespace

TEST_CASE("matmul examples") {
    const Tensor<float> m({2, 2}, {3, -1, 2, 5});
    const Tensor<float> eye({2, 2}, {1, 0, 0, 1});
    CHECK(matmul(eye, m) == m);

    const Tensor<float> a({2, 2}, {1, 2, 3, 4});
    const Tensor<float> b({2, 1}, {5, 6});
    const auto c = matmul(a, b);
    CHECK(c.shape() == Shape{2, 1});
    CHECK(c[0] == 17.0f);
    CHECK(c[1] == 39.0f);

    try {
        matmul(Tensor<float>({2, 3}), Tensor<float>({4, 5}));
        FAIL("expected a dimension error");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2, 3]") != std::string::npos);
        CHECK(msg.find("[4, 5]") != std::string::npos);
    }
}

TEST_CASE("matmul broadcasts batch dimensions") {
    SeedStream rng(3);
    const TD a = randn({2, 3, 4}, rng);
    const TD b = randn({4, 5}, rng);
    const TD c = matmul(a, b);
    REQUIRE(c.shape() == Shape{2, 3, 5});
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 5; ++j) {
                double s = 0.0;
                for (std::size_t k = 0; k < 4; ++k) s += a.at({n, i, k}) * b.at({k, j});
                CHECK(c.at({n, i, j}) == doctest::Approx(s).epsilon(1e-12));
            }
}

TEST_CASE("matmul is associative with the identity") {
    SeedStream rng(11);
    const TD m = randn({3, 3}, rng);
    TD eye({3, 3});
    for (std::size_t i = 0; i < 3; ++i) eye.at({i, i}) = 1.0;
    CHECK(matmul(matmul(eye, m), eye) == matmul(eye, matmul(m, eye)));
    CHECK(matmul(eye, m) == m);
}

TEST_CASE("conv1d_same examples") {
    const Tensor<float> x({1, 1, 4}, {1, 2, 3, 4});
    const Tensor<float> bias({1});
    CHECK(conv1d_same(x, Tensor<float>({1, 1, 3}, {0, 1, 0}), bias) == x);

    const auto y = conv1d_same(x, Tensor<float>({1, 1, 3}, {1, 1, 1}), bias);
    CHECK(y == Tensor<float>({1, 1, 4}, {3, 6, 9, 7}));

    const auto z = conv1d_same(Tensor<float>({2, 3, 16}), Tensor<float>({5, 3, 3}), Tensor<float>({5}));
    CHECK(z.shape() == Shape{2, 5, 16});

    CHECK_THROWS_AS(conv1d_same(x, Tensor<float>({1, 1, 2}), bias), ConfigError);
}

TEST_CASE("conv1d_same is a cross-correlation") {
    const Tensor<float> x({1, 1, 3}, {1, 2, 3});
    const auto y = conv1d_same(x, Tensor<float>({1, 1, 3}, {1, 0, 0}), Tensor<float>({1}));
    // out[t] = x[t-1]: no kernel flip.
    CHECK(y == Tensor<float>({1, 1, 3}, {0, 1, 2}));
}

TEST_CASE("conv1d_same is linear in x and in the kernel") {
    SeedStream rng(5);
    const TD x1 = randn({2, 3, 7}, rng), x2 = randn({2, 3, 7}, rng);
    const TD k1 = randn({4, 3, 3}, rng), k2 = randn({4, 3, 3}, rng);
    const TD zero({4});
    TD xs = x1;
    xs += x2;
    TD ks = k1;
    ks += k2;
    const TD lhs_x = conv1d_same(xs, k1, zero);
    TD rhs_x = conv1d_same(x1, k1, zero);
    rhs_x += conv1d_same(x2, k1, zero);
    const TD lhs_k = conv1d_same(x1, ks, zero);
    TD rhs_k = conv1d_same(x1, k1, zero);
    rhs_k += conv1d_same(x1, k2, zero);
    for (std::size_t i = 0; i < lhs_x.size(); ++i) {
        CHECK(lhs_x[i] == doctest::Approx(rhs_x[i]).epsilon(1e-12));
        CHECK(lhs_k[i] == doctest::Approx(rhs_k[i]).epsilon(1e-12));
    }
}

TEST_CASE("activation examples") {
    const Tensor<double> x({3}, {0.0, 1.0, -2.0});
    const auto s = activation(x, Activation::silu);
    CHECK(s[0] == 0.0);
    CHECK(s[1] == doctest::Approx(0.731059).epsilon(1e-5));
    CHECK(activation(x, Activation::relu)[2] == 0.0);

    const TD ones({1}, 1.0);
    const TD zero({1});
    CHECK(activation_backward(ones, zero, Activation::relu)[0] == 0.0);
    // tanh form: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
    const double g1 = 0.5 * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * 1.044715));
    CHECK(activation(ones, Activation::gelu)[0] == doctest::Approx(g1).epsilon(1e-12));
}

TEST_CASE("layer_norm examples") {
    const Tensor<double> gamma({3}, 1.0), beta({3});
    const auto c = layer_norm(Tensor<double>({3}, 4.0), gamma, beta);
    for (double v : c.span()) CHECK(v == 0.0);

    const auto y = layer_norm(Tensor<double>({3}, {1, 2, 3}), gamma, beta);
    CHECK(y[0] == doctest::Approx(-1.2247).epsilon(1e-3));
    CHECK(y[1] == doctest::Approx(0.0));
    CHECK(y[2] == doctest::Approx(1.2247).epsilon(1e-3));

    const auto shifted = layer_norm(Tensor<double>({3}, {1, 2, 3}), gamma, Tensor<double>({3}, 5.0));
    for (std::size_t i = 0; i < 3; ++i) CHECK(shifted[i] == doctest::Approx(y[i] + 5.0).epsilon(1e-12));
}

TEST_CASE("layer_norm rows are standardised") {
    SeedStream rng(17);
    const TD x = randn({6, 32}, rng, 3.0);
    LayerNormCache<double> cache;
    layer_norm(x, TD({32}, 2.0), TD({32}, 1.0), 1e-5, &cache);
    for (std::size_t r = 0; r < 6; ++r) {
        double mean = 0.0, var = 0.0;
        for (std::size_t j = 0; j < 32; ++j) mean += cache.normalized[r * 32 + j] / 32.0;
        for (std::size_t j = 0; j < 32; ++j) var += std::pow(cache.normalized[r * 32 + j] - mean, 2) / 32.0;
        CHECK(std::fabs(mean) <= 1e-6);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
    }
}

TEST_CASE("softmax_cross_entropy examples") {
    for (int k : {2, 5, 10}) {
        const Tensor<double> logits({3, static_cast<std::size_t>(k)}, 0.7);
        const std::vector<int> t = {0, 1, k - 1};
        CHECK(softmax_cross_entropy(logits, t).loss == doctest::Approx(std::log(k)).epsilon(1e-12));
    }
    const Tensor<double> logits({1, 2}, {0.0, std::log(3.0)});
    const std::vector<int> one = {1};
    CHECK(softmax_cross_entropy(logits, one).loss == doctest::Approx(0.28768).epsilon(1e-5));
    const std::vector<int> bad = {2};
    CHECK_THROWS_AS(softmax_cross_entropy(logits, bad), IndexError);
}

TEST_CASE("softmax_cross_entropy gradient and bounds") {
    const Tensor<double> logits({2, 3}, {1, 2, 3, 0, 0, 0});
    const std::vector<int> t = {2, 0};
    const auto ce = softmax_cross_entropy(logits, t);
    const auto p = softmax(logits);
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t c = 0; c < 3; ++c) {
            const double onehot = static_cast<int>(c) == t[b] ? 1.0 : 0.0;
            CHECK(ce.grad_logits[b * 3 + c] == doctest::Approx((p[b * 3 + c] - onehot) / 2.0).epsilon(1e-12));
        }
    CHECK(ce.loss >= 0.0);

    const Tensor<double> confident({1, 3}, {20.0, 0.0, 0.0});
    const std::vector<int> zero = {0};
    CHECK(softmax_cross_entropy(confident, zero).loss < 1e-3);

    const Tensor<double> huge({1, 2}, {1000.0, -1000.0});
    CHECK(std::isfinite(softmax_cross_entropy(huge, zero).loss));
}

TEST_CASE("dropout examples") {
    SeedStream rng(1);
    const Tensor<float> x({5}, {1, 2, 3, 4, 5});
    CHECK(dropout(x, 0.0, rng, true) == x);
    CHECK(dropout(x, 0.0, rng, false) == x);
    CHECK(dropout(x, 0.5, rng, false) == x);
    CHECK_THROWS_AS(dropout(x, 1.0, rng, true), ConfigError);
    CHECK_THROWS_AS(dropout(x, -0.1, rng, true), ConfigError);

    const Tensor<float> ones({100000}, 1.0f);
    SeedStream r2(9);
    const auto y = dropout(ones, 0.5, r2, true);
    std::size_t kept = 0;
    for (float v : y.span()) {
        if (v != 0.0f) {
            ++kept;
            CHECK(v == 2.0f);
        }
    }
    CHECK(static_cast<double>(kept) / 1e5 == doctest::Approx(0.5).epsilon(0.02));
    CHECK(std::fabs(static_cast<double>(kept) / 1e5 - 0.5) <= 0.01);
}

TEST_CASE("dropout is deterministic per seed stream") {
    const Tensor<float> x({64}, 1.0f);
    SeedStream a(42), b(42);
    CHECK(dropout(x, 0.3, a, true) == dropout(x, 0.3, b, true));
}

TEST_CASE("grad_check examples") {
    std::vector<double> theta = {3.0};
    std::vector<double> analytic = {6.0};
    const auto sq = grad_check([&] { return theta[0] * theta[0]; }, theta, analytic);
    CHECK(sq.numeric == doctest::Approx(6.0).epsilon(1e-9));
    CHECK(sq.max_rel_error < 1e-9);

    std::vector<double> zero = {0.0};
    const auto flat = grad_check([] { return 2.5; }, theta, zero);
    CHECK(flat.numeric == 0.0);
    CHECK(flat.max_rel_error == 0.0);

    CHECK_THROWS_AS(grad_check([] { return std::numeric_limits<double>::quiet_NaN(); }, theta, zero), NumericError);
}

TEST_CASE("primitives produce finite values or throw") {
    const Tensor<float> big({1, 1}, {std::numeric_limits<float>::max()});
    CHECK_THROWS_AS(matmul(big, Tensor<float>({1, 1}, {10.0f})), NumericError);
}

// Randomised finite-difference checks of every backward pass, 64-bit, <= 64 elements.

TEST_CASE("matmul gradient over 100 seeds") {
    for (int s = 0; s < kSeeds; ++s) {
        SeedStream rng(1000 + s);
        const std::size_t m = pick(rng, 1, 4), k = pick(rng, 1, 4), n = pick(rng, 1, 4);
        TD a = randn({m, k}, rng), b = randn({k, n}, rng);
        const TD probe = randn({m, n}, rng);
        TD ga({m, k}), gb({k, n});
        matmul_backward(probe, a, b, &ga, &gb);
        const auto loss = [&] { return dot(matmul(a, b), probe); };
        const GradCheckTarget t[] = {{"a", a.span(), ga.span()}, {"b", b.span(), gb.span()}};
        CHECK(grad_check(loss, t).max_rel_error <= kTol);
    }
}

TEST_CASE("linear gradient over 100 seeds") {
    for (int s = 0; s < kSeeds; ++s) {
        SeedStream rng(2000 + s);
        const std::size_t m = pick(rng, 1, 4), in = pick(rng, 1, 4), out = pick(rng, 1, 4);
        TD x = randn({m, in}, rng), w = randn({in, out}, rng), bias = randn({out}, rng);
        const TD probe = randn({m, out}, rng);
        TD gx({m, in}), gw({in, out}), gb({out});
        linear_backward(probe, x, w, &gx, &gw, &gb);
        const auto loss = [&] { return dot(linear(x, w, &bias), probe); };
        const GradCheckTarget t[] = {{"x", x.span(), gx.span()}, {"w", w.span(), gw.span()},
                                     {"bias", bias.span(), gb.span()}};
        CHECK(grad_check(loss, t).max_rel_error <= kTol);
    }
}

TEST_CASE("conv1d_same gradient over 100 seeds") {
    for (int s = 0; s < kSeeds; ++s) {
        SeedStream rng(3000 + s);
        const std::size_t b = pick(rng, 1, 2), cin = pick(rng, 1, 3), cout = pick(rng, 1, 3), t = pick(rng, 1, 5);
        const std::size_t k = rng.next() % 2 ? 3 : 1;
        TD x = randn({b, cin, t}, rng), w = randn({cout, cin, k}, rng), bias = randn({cout}, rng);
        const TD probe = randn({b, cout, t}, rng);
        TD gx(x.shape()), gw(w.shape()), gb(bias.shape());
        conv1d_same_backward(probe, x, w, &gx, &gw, &gb);
        const auto loss = [&] { return dot(conv1d_same(x, w, bias), probe); };
        const GradCheckTarget tg[] = {{"x", x.span(), gx.span()}, {"kernel", w.span(), gw.span()},
                                      {"bias", bias.span(), gb.span()}};
        CHECK(grad_check(loss, tg).max_rel_error <= kTol);
    }
}

TEST_CASE("activation gradients over 100 seeds") {
    for (Activation kind : {Activation::silu, Activation::relu, Activation::gelu}) {
        for (int s = 0; s < kSeeds; ++s) {
            SeedStream rng(4000 + s);
            TD x = randn({pick(rng, 1, 64)}, rng);
            // keep relu inputs away from the kink
            if (kind == Activation::relu)
                for (auto& v : x.span())
                    if (std::fabs(v) < 1e-3) v = 0.5;
            const TD probe = randn(x.shape(), rng);
            const TD g = activation_backward(probe, x, kind);
            const auto loss = [&] { return dot(activation(x, kind), probe); };
            CHECK(grad_check(loss, x.span(), g.span()).max_rel_error <= kTol);
        }
    }
}

TEST_CASE("layer_norm gradient over 100 seeds") {
    for (int s = 0; s < kSeeds; ++s) {
        SeedStream rng(5000 + s);
        const std::size_t rows = pick(rng, 1, 4), d = pick(rng, 2, 12);
        TD x = randn({rows, d}, rng), gamma = randn({d}, rng), beta = randn({d}, rng);
        const TD probe = randn({rows, d}, rng);
        LayerNormCache<double> cache;
        layer_norm(x, gamma, beta, 1e-5, &cache);
        TD gx(x.shape()), gg(gamma.shape()), gbeta(beta.shape());
        layer_norm_backward(probe, cache, gamma, &gx, &gg, &gbeta);
        const auto loss = [&] { return dot(layer_norm(x, gamma, beta), probe); };
        const GradCheckTarget t[] = {{"x", x.span(), gx.span()}, {"gamma", gamma.span(), gg.span()},
                                     {"beta", beta.span(), gbeta.span()}};
        CHECK(grad_check(loss, t).max_rel_error <= kTol);
    }
}

TEST_CASE("softmax gradient over 100 seeds") {
    for (int s = 0; s < kSeeds; ++s) {
        SeedStream rng(6000 + s);
        TD x = randn({pick(rng, 1, 4), pick(rng, 2, 8)}, rng);
        const TD probe = randn(x.shape(), rng);
        const TD g = softmax_backward(probe, softmax(x));
        const auto loss = [&] { return dot(softmax(x), probe); };
        CHECK(grad_check(loss, x.span(), g.span()).max_rel_error <= kTol);
    }
}

TEST_CASE("cross-entropy gradient over 100 seeds") {
    for (int s = 0; s < kSeeds; ++s) {
        SeedStream rng(7000 + s);
        const std::size_t b = pick(rng, 1, 6), k = pick(rng, 2, 8);
        TD logits = randn({b, k}, rng, 2.0);
        std::vector<int> t(b);
        for (auto& v : t) v = static_cast<int>(rng.next() % k);
        const auto ce = softmax_cross_entropy(logits, t);
        const auto loss = [&] { return softmax_cross_entropy(logits, t).loss; };
        CHECK(grad_check(loss, logits.span(), ce.grad_logits.span()).max_rel_error <= kTol);
    }
}

TEST_CASE("dropout gradient over 100 seeds") {
    for (int s = 0; s < kSeeds; ++s) {
        SeedStream rng(8000 + s);
        TD x = randn({pick(rng, 1, 64)}, rng);
        const TD probe = randn(x.shape(), rng);
        TD mask;
        SeedStream fixed(s);
        dropout(x, 0.3, fixed, true, &mask);
        TD g(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) g[i] = probe[i] * mask[i];
        const auto loss = [&] {
            SeedStream again(s);
            return dot(dropout(x, 0.3, again, true), probe);
        };
        CHECK(grad_check(loss, x.span(), g.span()).max_rel_error <= kTol);
    }
}
