#include "mambavsr/errors.hpp"
#include "mambavsr/ssm_kernel.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace mvsr;
using namespace mvsr::ssm;

namespace {

struct Instance {
    Tensor x, delta, a, b, c, d;
};

Instance random_instance(Rng& rng, int l, int ch, int n)
{
    Instance s{oracle::random_tensor(rng, {l, ch}), oracle::random_tensor(rng, {l, ch}, 0.01, 0.2),
               oracle::random_tensor(rng, {ch, n}, 0.1, 2.0), oracle::random_tensor(rng, {l, n}),
               oracle::random_tensor(rng, {l, n}), oracle::random_tensor(rng, {ch})};
    for (auto& v : s.a.values())
        v = -v;
    return s;
}

// f64 recurrence written from the definition.
std::vector<double> scan_f64(const Instance& s)
{
    const int l = s.x.dim(0), ch = s.x.dim(1), n = s.a.dim(1);
    std::vector<double> h(static_cast<std::size_t>(ch) * n, 0.0), y(static_cast<std::size_t>(l) * ch);
    for (int t = 0; t < l; ++t)
        for (int c = 0; c < ch; ++c) {
            double acc = 0;
            for (int k = 0; k < n; ++k) {
                double& hs = h[c * n + k];
                hs = std::exp(static_cast<double>(s.delta.at(t, c)) * s.a.at(c, k)) * hs +
                     static_cast<double>(s.delta.at(t, c)) * s.b.at(t, k) * s.x.at(t, c);
                acc += s.c.at(t, k) * hs;
            }
            y[t * ch + c] = acc + static_cast<double>(s.d[c]) * s.x.at(t, c);
        }
    return y;
}

Tensor run(const Instance& s) { return scan(s.x, s.delta, s.a, s.b, s.c, s.d); }

} // namespace

TEST_CASE("discretize: A = 0 accumulates, small delta freezes, f64 oracle")
{
    Rng rng(1);
    const Tensor delta = oracle::random_tensor(rng, {3, 2}, 0.01, 1.0);
    const Tensor b = oracle::random_tensor(rng, {3, 4});
    const auto z = discretize(delta, Tensor({2, 4}), b);
    for (float v : z.a_bar.values())
        CHECK(v == 1.0f);

    const auto tiny = discretize(Tensor({3, 2}, 1e-12f), oracle::random_tensor(rng, {2, 4}, -2, -0.1), b);
    for (float v : tiny.a_bar.values())
        CHECK(std::abs(v - 1.0f) <= 1e-6);
    for (float v : tiny.b_bar.values())
        CHECK(std::abs(v) <= 1e-11);

    const Tensor a = oracle::random_tensor(rng, {2, 4}, -2, -0.1);
    const auto r = discretize(delta, a, b);
    for (int t = 0; t < 3; ++t)
        for (int c = 0; c < 2; ++c)
            for (int k = 0; k < 4; ++k) {
                CHECK(std::abs(r.a_bar.at(t, c, k) - std::exp(static_cast<double>(delta.at(t, c)) * a.at(c, k))) <= 1e-6);
                CHECK(std::abs(r.b_bar.at(t, c, k) - static_cast<double>(delta.at(t, c)) * b.at(t, k)) <= 1e-6);
            }
}

TEST_CASE("scan examples")
{
    Rng rng(2);
    SUBCASE("L = 1")
    {
        const auto s = random_instance(rng, 1, 3, 4);
        const Tensor y = run(s);
        for (int c = 0; c < 3; ++c) {
            double acc = 0;
            for (int k = 0; k < 4; ++k)
                acc += static_cast<double>(s.c.at(0, k)) * s.delta.at(0, c) * s.b.at(0, k) * s.x.at(0, c);
            CHECK(std::abs(y.at(0, c) - (acc + static_cast<double>(s.d[c]) * s.x.at(0, c))) <= 1e-6);
        }
    }
    SUBCASE("A = 0, B = C = 1, D = 0: scaled prefix sum")
    {
        const int l = 20;
        const Tensor x = oracle::random_tensor(rng, {l, 1});
        const Tensor y = scan(x, Tensor({l, 1}, 0.25f), Tensor({1, 1}), Tensor({l, 1}, 1.0f),
                              Tensor({l, 1}, 1.0f), Tensor({1}));
        double prefix = 0;
        for (int t = 0; t < l; ++t) {
            prefix += x[t];
            CHECK(std::abs(y[t] - 0.25 * prefix) <= 1e-5);
        }
    }
    SUBCASE("x = 0 gives y = 0")
    {
        auto s = random_instance(rng, 9, 2, 3);
        s.x.fill(0.0f);
        const Tensor y = run(s);
        for (float v : y.values())
            CHECK(v == 0.0f);
    }
    SUBCASE("matches the f64 recurrence")
    {
        const auto s = random_instance(rng, 64, 4, 8);
        CHECK(oracle::max_abs_diff(scan_f64(s), run(s)) <= 1e-5);
    }
}

TEST_CASE("chunked scan equals the sequential oracle")
{
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        const int l = rng.uniform_int(1, 300);
        const auto s = random_instance(rng, l, 3, 5);
        const Tensor ref = run(s);
        CHECK(identical(scan_chunked(s.x, s.delta, s.a, s.b, s.c, s.d, 1), ref));
        CHECK(identical(scan_chunked(s.x, s.delta, s.a, s.b, s.c, s.d, l), ref));
        CHECK(identical(scan_chunked(s.x, s.delta, s.a, s.b, s.c, s.d, l + 5), ref));
        for (int chunk : {2, 7, 32, 33})
            CHECK(max_abs_diff(scan_chunked(s.x, s.delta, s.a, s.b, s.c, s.d, chunk), ref) <= 1e-5);
    }
    const auto s = random_instance(rng, 256, 8, 16);
    CHECK(max_abs_diff(scan_chunked(s.x, s.delta, s.a, s.b, s.c, s.d, 32), run(s)) <= 1e-5);
    CHECK_THROWS_AS(scan_chunked(s.x, s.delta, s.a, s.b, s.c, s.d, 0), ShapeError);
}

TEST_CASE("linearity in x with fixed selections")
{
    Rng rng(4);
    const auto s = random_instance(rng, 50, 3, 4);
    const Tensor x2 = oracle::random_tensor(rng, {50, 3});
    const float alpha = 0.7f, beta = -1.3f;
    Tensor mix(s.x.shape());
    for (std::size_t i = 0; i < mix.size(); ++i)
        mix[i] = alpha * s.x[i] + beta * x2[i];
    const Tensor y1 = run(s), y2 = scan(x2, s.delta, s.a, s.b, s.c, s.d);
    const Tensor ym = scan(mix, s.delta, s.a, s.b, s.c, s.d);
    for (std::size_t i = 0; i < ym.size(); ++i)
        CHECK(std::abs(ym[i] - (alpha * y1[i] + beta * y2[i])) <= 1e-5);
}

TEST_CASE("causality: truncation leaves the prefix bit-identical")
{
    Rng rng(5);
    const auto s = random_instance(rng, 40, 3, 4);
    const Tensor full = run(s);
    for (int t : {1, 7, 39}) {
        auto head = [t](const Tensor& x) {
            return Tensor(Shape{t, x.dim(1)}, std::vector<float>(x.data(), x.data() + t * x.dim(1)));
        };
        const Tensor y = scan(head(s.x), head(s.delta), s.a, head(s.b), head(s.c), s.d);
        CHECK(identical(y, head(full)));
    }
}

TEST_CASE("stability on long random sequences")
{
    Rng rng(6);
    auto s = random_instance(rng, 4096, 4, 16);
    for (auto& v : s.delta.values())
        v *= 5.0f;
    const Tensor y = run(s);
    CHECK(y.all_finite());
    CHECK(max_abs_diff(scan_chunked(s.x, s.delta, s.a, s.b, s.c, s.d, 128), y) <= 1e-5);
}

TEST_CASE("nonpositive delta and non-finite inputs are errors")
{
    Rng rng(7);
    auto s = random_instance(rng, 5, 2, 3);
    s.delta.at(2, 1) = 0.0f;
    CHECK_THROWS_AS(run(s), NumericError);
    CHECK_THROWS_AS(discretize(Tensor({1, 1}, -1.0f), Tensor({1, 1}), Tensor({1, 1})), NumericError);
    auto t = random_instance(rng, 5, 2, 3);
    t.b.at(3, 0) = 1e30f;
    t.c.at(3, 0) = 1e30f;
    CHECK_THROWS_WITH_AS(run(t), doctest::Contains("step 3"), NumericError);
}

TEST_CASE("selective scan with initialized parameters")
{
    Rng rng(8);
    const auto p = SSMParams::init(4, 6, rng);
    CHECK(p.a_log.at(2, 3) == std::log(4.0f));
    const Tensor a = p.a();
    for (float v : a.values())
        CHECK(v < 0.0f);
    const auto sel = select(oracle::random_tensor(rng, {10, 4}), p);
    for (float v : sel.delta.values())
        CHECK(v > 0.0f);
    // Near-zero projections leave delta near softplus(bias) = 0.1.
    CHECK(std::abs(sel.delta.at(0, 0) - 0.1f) <= 0.02f);
    const Tensor x = oracle::random_tensor(rng, {37, 4});
    CHECK(max_abs_diff(selective_scan_chunked(x, p, 8), selective_scan(x, p)) <= 1e-5);
}

TEST_CASE("differentiable scan matches the plain scan and finite differences")
{
    Rng rng(9);
    const auto s = random_instance(rng, 12, 2, 3);
    const ag::Var y = scan(ag::constant(s.x), ag::constant(s.delta), ag::constant(s.a), ag::constant(s.b),
                           ag::constant(s.c), ag::constant(s.d));
    CHECK(identical(y.value(), run(s)));

    const Tensor probe = oracle::random_tensor(rng, {12, 2});
    ag::NamedTensors params{{"x", s.x}, {"delta", s.delta}, {"a", s.a}, {"b", s.b}, {"c", s.c}, {"d", s.d}};
    auto f = [&](const ag::NamedVars& v) {
        return ag::sum(ag::mul(scan(v.at("x"), v.at("delta"), v.at("a"), v.at("b"), v.at("c"), v.at("d")),
                               ag::constant(probe)));
    };
    const auto r = oracle::check_gradients(f, params, {"x", "delta", "a", "b", "c", "d"});
    CHECK(r.rel_err <= 1e-3);

    auto fb = [&](const ag::NamedVars& v) {
        return ag::sum(ag::mul(bidirectional_scan(v.at("x"), v.at("delta"), v.at("a"), v.at("b"), v.at("c"), v.at("d")),
                               ag::constant(probe)));
    };
    CHECK(oracle::check_gradients(fb, params, {"x", "delta", "a", "b", "c", "d"}).rel_err <= 1e-3);
}

TEST_CASE("bidirectional scan sums forward and reversed passes")
{
    // A = 0, B = C = 1, D = 0: every output is delta * (prefix + suffix).
    const int l = 6;
    Rng rng(10);
    const Tensor x = oracle::random_tensor(rng, {l, 1});
    const auto y = bidirectional_scan(ag::constant(x), ag::constant(Tensor({l, 1}, 0.5f)), ag::constant(Tensor({1, 1})),
                                      ag::constant(Tensor({l, 1}, 1.0f)), ag::constant(Tensor({l, 1}, 1.0f)),
                                      ag::constant(Tensor({1})));
    for (int t = 0; t < l; ++t) {
        double pre = 0, suf = 0;
        for (int s = 0; s <= t; ++s)
            pre += x[s];
        for (int s = t; s < l; ++s)
            suf += x[s];
        CHECK(std::abs(y.value()[t] - 0.5 * (pre + suf)) <= 1e-6);
    }
}
