#include "mambavsr/errors.hpp"
#include "mambavsr/metrics.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace mvsr;
using namespace mvsr::metrics;

namespace {

double psnr_f64(const Tensor& a, const Tensor& b)
{
    double se = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        se += d * d;
    }
    return 10.0 * std::log10(1.0 / (se / static_cast<double>(a.size())));
}

// Brute force: one weighted 11x11 window per valid position, no separable
// filtering.
double ssim_f64(const Tensor& a, const Tensor& b)
{
    const int c = a.dim(0), h = a.dim(1), w = a.dim(2), k = 11;
    std::vector<double> g(k * k);
    double z = 0;
    for (int y = 0; y < k; ++y)
        for (int x = 0; x < k; ++x)
            z += g[y * k + x] = std::exp(-((y - 5) * (y - 5) + (x - 5) * (x - 5)) / (2 * 1.5 * 1.5));
    for (auto& v : g)
        v /= z;
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double total = 0;
    for (int ch = 0; ch < c; ++ch) {
        double sum = 0;
        for (int y0 = 0; y0 + k <= h; ++y0)
            for (int x0 = 0; x0 + k <= w; ++x0) {
                double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
                for (int y = 0; y < k; ++y)
                    for (int x = 0; x < k; ++x) {
                        const double wt = g[y * k + x];
                        const double va = a.at(ch, y0 + y, x0 + x), vb = b.at(ch, y0 + y, x0 + x);
                        ma += wt * va;
                        mb += wt * vb;
                        saa += wt * va * va;
                        sbb += wt * vb * vb;
                        sab += wt * va * vb;
                    }
                const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
                sum += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
        total += sum / ((h - k + 1) * (w - k + 1));
    }
    return total / c;
}

} // namespace

TEST_CASE("PSNR closed form and identity")
{
    const Tensor a(Shape{3, 16, 16}, 0.5f), b(Shape{3, 16, 16}, 0.25f);
    CHECK(psnr(a, b) == doctest::Approx(12.0412).epsilon(1e-6));
    CHECK(std::abs(psnr(a, b) - 10.0 * std::log10(16.0)) <= 1e-9);
    CHECK(psnr(a, a) == std::numeric_limits<double>::infinity());
    CHECK(ssim(a, a) == 1.0);
    CHECK_THROWS_AS(psnr(a, Tensor(Shape{3, 16, 15})), ShapeError);
    CHECK_THROWS_AS(ssim(Tensor(Shape{3, 8, 8}), Tensor(Shape{3, 8, 8})), ShapeError);
}

TEST_CASE("metrics match double-precision oracles on random pairs")
{
    Rng rng(1);
    for (int trial = 0; trial < 5; ++trial) {
        const Tensor a = oracle::random_tensor(rng, {3, 16, 20}, 0.0, 1.0);
        Tensor b = a;
        for (auto& v : b.values())
            v = std::clamp(v + static_cast<float>(0.05 * rng.normal()), 0.0f, 1.0f);
        CHECK(std::abs(psnr(a, b) - psnr_f64(a, b)) <= 1e-6);
        CHECK(std::abs(ssim(a, b) - ssim_f64(a, b)) <= 1e-6);
        CHECK(std::abs(ssim(a, b) - ssim(b, a)) <= 1e-9);
        CHECK(psnr(a, b) == psnr(b, a));
    }
}

TEST_CASE("luma conversion and channel modes")
{
    Tensor rgb(Shape{3, 1, 2});
    rgb.at(0, 0, 0) = 1.0f;
    rgb.at(1, 0, 1) = 1.0f;
    rgb.at(2, 0, 1) = 1.0f;
    const Tensor y = to_y(rgb);
    REQUIRE(y.shape() == Shape{1, 1, 2});
    CHECK(y[0] == doctest::Approx(0.299));
    CHECK(y[1] == doctest::Approx(0.587 + 0.114));

    Rng rng(2);
    std::vector<Tensor> a, b;
    for (int i = 0; i < 3; ++i) {
        a.push_back(oracle::random_tensor(rng, {3, 12, 12}, 0.0, 1.0));
        b.push_back(i == 1 ? a.back() : oracle::random_tensor(rng, {3, 12, 12}, 0.0, 1.0));
    }
    const auto r = evaluate(a, b, ChannelMode::y);
    REQUIRE(r.psnr.size() == 3);
    CHECK(r.psnr[0] == psnr(to_y(a[0]), to_y(b[0])));
    CHECK(std::isinf(r.psnr[1]));
    CHECK(std::isinf(r.mean_psnr));
    CHECK(r.ssim[1] == 1.0);
    CHECK(r.mean_ssim == doctest::Approx((r.ssim[0] + r.ssim[1] + r.ssim[2]) / 3.0));
    const auto rgb_report = evaluate(a, b, ChannelMode::rgb);
    CHECK(rgb_report.psnr[0] != r.psnr[0]);
    CHECK_THROWS_AS(evaluate(a, {b[0]}, ChannelMode::rgb), ShapeError);
}
