#include <doctest.h>

#include <cmath>
#include <random>

#include "mcfe/autodiff.hpp"
#include "mcfe/error.hpp"

using namespace mcfe;

namespace {

constexpr double kEps = 1e-6;
constexpr double kTol = 1e-6;

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(shape, 0.0);
    for (auto& v : t.data()) v = u(rng);
    return t;
}

// Reduces any output to a scalar with fixed random weights, so every output
// element contributes a distinct amount to the gradient.
Var project(Var out, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return sum(mul(out.graph->constant(random_tensor(out.shape(), rng, 0.5, 1.5)), out));
}

// Direct loop convolution, stride 1, zero "same" padding.
Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b) {
    const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3), co = w.dim(0), k = w.dim(2);
    const long r = static_cast<long>(k / 2);
    Tensor out({n, co, h, wd}, 0.0);
    for (std::size_t bn = 0; bn < n; ++bn)
        for (std::size_t o = 0; o < co; ++o)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t xx = 0; xx < wd; ++xx) {
                    double acc = b[o];
                    for (std::size_t i = 0; i < ci; ++i)
                        for (std::size_t ky = 0; ky < k; ++ky)
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                const long sy = static_cast<long>(y) + static_cast<long>(ky) - r;
                                const long sx = static_cast<long>(xx) + static_cast<long>(kx) - r;
                                if (sy < 0 || sx < 0 || sy >= static_cast<long>(h) || sx >= static_cast<long>(wd)) continue;
                                acc += w[((o * ci + i) * k + ky) * k + kx] *
                                       x[((bn * ci + i) * h + static_cast<std::size_t>(sy)) * wd + static_cast<std::size_t>(sx)];
                            }
                    out[((bn * co + o) * h + y) * wd + xx] = acc;
                }
    return out;
}

}  // namespace

TEST_CASE("elementwise primitives pass finite-difference checks") {
    std::mt19937_64 rng(1);
    const Tensor a = random_tensor({3, 4}, rng);
    const Tensor other = random_tensor({3, 4}, rng);
    CHECK(gradient_check([&](Graph& g, Var x) { return project(add(x, g.constant(other)), 2); }, a, kEps) < kTol);
    CHECK(gradient_check([&](Graph& g, Var x) { return project(sub(g.constant(other), x), 3); }, a, kEps) < kTol);
    CHECK(gradient_check([&](Graph& g, Var x) { return project(mul(x, g.constant(other)), 4); }, a, kEps) < kTol);
    CHECK(gradient_check([&](Graph&, Var x) { return project(mul(x, x), 5); }, a, kEps) < kTol);
    CHECK(gradient_check([&](Graph&, Var x) { return project(scale(x, -2.5), 6); }, a, kEps) < kTol);
    CHECK(gradient_check([&](Graph&, Var x) { return project(add_scalar(x, 0.75), 7); }, a, kEps) < kTol);
    CHECK(gradient_check([&](Graph&, Var x) { return project(sigmoid(scale(x, 3.0)), 8); }, a, kEps) < kTol);
    CHECK(gradient_check([&](Graph&, Var x) { return sum(x); }, a, kEps) < kTol);
    CHECK(gradient_check([&](Graph&, Var x) { return mean(x); }, a, kEps) < kTol);
    CHECK(gradient_check([&](Graph&, Var x) { return squared_l2_norm(x); }, a, kEps) < kTol);
}

TEST_CASE("log gradient away from the clamp") {
    std::mt19937_64 rng(2);
    const Tensor a = random_tensor({5}, rng, 0.2, 2.0);
    CHECK(gradient_check([](Graph&, Var x) { return project(log(x), 9); }, a, kEps) < kTol);
}

TEST_CASE("log clamps its argument at 1e-12") {
    Graph g;
    Var v = log(g.constant(Tensor({2}, std::vector<double>{0.0, -3.0})));
    CHECK(v.value()[0] == doctest::Approx(std::log(1e-12)));
    CHECK(v.value()[1] == doctest::Approx(std::log(1e-12)));
}

TEST_CASE("relu passes gradient checks away from the kink") {
    std::mt19937_64 rng(3);
    const Tensor a = random_tensor({4, 4}, rng);
    auto near_kink = [&](std::size_t i) { return std::abs(a[i]) < 1e-3; };
    CHECK(gradient_check([](Graph&, Var x) { return project(relu(x), 10); }, a, kEps, near_kink) < kTol);
}

TEST_CASE("relu subgradient at zero is zero") {
    Graph g;
    Var x = g.input(Tensor({3}, std::vector<double>{-1.0, 0.0, 2.0}), true);
    g.backward(sum(relu(x)));
    CHECK(g.grad(x).values() == std::vector<double>{0.0, 0.0, 1.0});
}

TEST_CASE("matrix primitives pass finite-difference checks") {
    std::mt19937_64 rng(4);
    const Tensor a = random_tensor({3, 4}, rng);
    const Tensor b = random_tensor({4, 2}, rng);
    const Tensor bias = random_tensor({2}, rng);
    CHECK(gradient_check([&](Graph& g, Var x) { return project(matmul(x, g.constant(b)), 11); }, a, kEps) < kTol);
    CHECK(gradient_check([&](Graph& g, Var x) { return project(matmul(g.constant(a), x), 12); }, b, kEps) < kTol);
    CHECK(gradient_check([&](Graph& g, Var x) { return project(linear(g.constant(a), g.constant(b), x), 13); }, bias, kEps) < kTol);
    CHECK(gradient_check([&](Graph& g, Var x) { return project(add_row_bias(x, g.constant(bias)), 14); }, random_tensor({3, 2}, rng), kEps) <
          kTol);
}

TEST_CASE("softmax rows sum to one and pass gradient checks") {
    std::mt19937_64 rng(5);
    const Tensor a = random_tensor({3, 5}, rng, -3.0, 3.0);
    Graph g;
    Var p = softmax(g.constant(a));
    for (std::size_t r = 0; r < 3; ++r) {
        double total = 0.0;
        for (std::size_t c = 0; c < 5; ++c) total += p.value()[r * 5 + c];
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK(gradient_check([](Graph&, Var x) { return project(softmax(x), 15); }, a, kEps) < kTol);
}

TEST_CASE("spatial primitives pass finite-difference checks") {
    std::mt19937_64 rng(6);
    const Tensor x = random_tensor({2, 3, 4, 4}, rng);
    const Tensor y = random_tensor({2, 2, 4, 4}, rng);
    CHECK(gradient_check([](Graph&, Var v) { return project(upsample(v, 2), 16); }, x, kEps) < kTol);
    CHECK(gradient_check([](Graph&, Var v) { return project(avg_pool(v, 2), 17); }, x, kEps) < kTol);
    CHECK(gradient_check([](Graph&, Var v) { return project(global_avg_pool(v), 18); }, x, kEps) < kTol);
    CHECK(gradient_check([&](Graph& g, Var v) { return project(concat_channels(v, g.constant(y)), 19); }, x, kEps) < kTol);
    CHECK(gradient_check([&](Graph& g, Var v) { return project(concat_channels(g.constant(x), v), 20); }, y, kEps) < kTol);
}

TEST_CASE("convolution gradients for input, weight and bias") {
    std::mt19937_64 rng(7);
    const Tensor x = random_tensor({2, 3, 5, 5}, rng);
    const Tensor w = random_tensor({4, 3, 3, 3}, rng);
    const Tensor b = random_tensor({4}, rng);
    CHECK(gradient_check([&](Graph& g, Var v) { return project(conv2d(v, g.constant(w), g.constant(b)), 21); }, x, kEps) < kTol);
    CHECK(gradient_check([&](Graph& g, Var v) { return project(conv2d(g.constant(x), v, g.constant(b)), 22); }, w, kEps) < kTol);
    CHECK(gradient_check([&](Graph& g, Var v) { return project(conv2d(g.constant(x), g.constant(w), v), 23); }, b, kEps) < kTol);
}

TEST_CASE("convolution matches the loop oracle on 50 random cases") {
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<std::size_t> small(1, 4), extent(1, 7), kernel(0, 2);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = small(rng), ci = small(rng), co = small(rng), h = extent(rng), w = extent(rng), k = 2 * kernel(rng) + 1;
        const Tensor x = random_tensor({n, ci, h, w}, rng);
        const Tensor wt = random_tensor({co, ci, k, k}, rng);
        const Tensor b = random_tensor({co}, rng);
        Graph g;
        Var out = conv2d(g.constant(x), g.constant(wt), g.constant(b));
        worst = std::max(worst, max_abs_diff(out.value(), naive_conv(x, wt, b)));
    }
    CHECK(worst <= 1e-12);
}

TEST_CASE("distance primitives pass finite-difference checks") {
    std::mt19937_64 rng(9);
    const Tensor a = random_tensor({3, 6}, rng);
    const Tensor b = random_tensor({3, 6}, rng);
    auto kink = [&](std::size_t i) { return std::abs(a[i] - b[i]) < 1e-3; };
    CHECK(gradient_check([&](Graph& g, Var x) { return l1_distance(x, g.constant(b)); }, a, kEps, kink) < kTol);
    CHECK(gradient_check([&](Graph& g, Var x) { return project(l1_rows(x, g.constant(b)), 24); }, a, kEps, kink) < kTol);
    CHECK(gradient_check([&](Graph& g, Var x) { return project(l2_rows(x, g.constant(b)), 25); }, a, kEps) < kTol);
}

TEST_CASE("kl divergence conventions and gradient") {
    Graph g;
    Var p = g.constant(Tensor({1, 2}, std::vector<double>{0.5, 0.5}));
    Var q = g.constant(Tensor({1, 2}, std::vector<double>{0.9, 0.1}));
    CHECK(kl_divergence(p, q).value().item() == doctest::Approx(0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1)).epsilon(1e-12));
    // p = 0 terms vanish; q = 0 is clamped rather than producing infinity.
    Var p0 = g.constant(Tensor({1, 2}, std::vector<double>{1.0, 0.0}));
    Var q0 = g.constant(Tensor({1, 2}, std::vector<double>{0.0, 1.0}));
    CHECK(kl_divergence(p0, q0).value().item() == doctest::Approx(-std::log(1e-12)));

    std::mt19937_64 rng(10);
    Tensor target({2, 3}, std::vector<double>{0.2, 0.3, 0.5, 0.6, 0.1, 0.3});
    const Tensor logits = random_tensor({2, 3}, rng);
    CHECK(gradient_check([&](Graph& gr, Var x) { return kl_divergence(gr.constant(target), softmax(x)); }, logits, kEps) < kTol);
}

TEST_CASE("shape mismatches raise") {
    Graph g;
    Var a = g.constant(Tensor({2, 3}, 0.0));
    Var b = g.constant(Tensor({3, 2}, 0.0));
    CHECK_THROWS_AS(add(a, b), Error);
    CHECK_THROWS_AS(matmul(a, a), Error);
    CHECK_THROWS_AS(conv2d(g.constant(Tensor({1, 1, 4, 4}, 0.0)), g.constant(Tensor({1, 1, 2, 2}, 0.0)), g.constant(Tensor({1}, 0.0))), Error);
    CHECK_THROWS_AS(avg_pool(g.constant(Tensor({1, 1, 3, 3}, 0.0)), 2), Error);
}

TEST_CASE("non-finite forward values raise numeric_overflow") {
    Graph g;
    Var big = g.constant(Tensor({1}, std::vector<double>{1e200}));
    try {
        (void)mul(big, big);
        FAIL("expected numeric_overflow");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::numeric_overflow);
    }
}

TEST_CASE("gradients accumulate over shared inputs and constants get none") {
    Graph g;
    Var x = g.input(Tensor({2}, std::vector<double>{1.0, 2.0}), true);
    Var c = g.constant(Tensor({2}, std::vector<double>{3.0, 4.0}));
    g.backward(sum(add(mul(x, c), x)));
    CHECK(g.grad(x).values() == std::vector<double>{4.0, 5.0});
    CHECK_FALSE(g.requires_grad(c.id));
}

TEST_CASE("parameters bound twice receive the summed gradient") {
    Graph g;
    Tensor w({2}, std::vector<double>{1.0, 1.0});
    Var a = g.parameter("w", w);
    Var b = g.parameter("w", w);
    g.backward(sum(add(scale(a, 2.0), scale(b, 3.0))));
    CHECK(g.parameter_grads().at("w").values() == std::vector<double>{5.0, 5.0});
}

TEST_CASE("gradient_check rejects bad step sizes") {
    CHECK_THROWS_AS(gradient_check([](Graph&, Var x) { return sum(x); }, Tensor({1}, 0.0), 0.1), Error);
    CHECK_THROWS_AS(gradient_check([](Graph&, Var x) { return sum(x); }, Tensor({1}, 0.0), 0.0), Error);
}
