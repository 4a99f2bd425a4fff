#include "mambavsr/errors.hpp"
#include "mambavsr/scan_compass.hpp"
#include "mambavsr/scan_order.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace mvsr;
using namespace mvsr::compass;

namespace {

DenseMatrix path_laplacian(int n)
{
    DenseMatrix l(n);
    for (int i = 0; i + 1 < n; ++i) {
        l(i, i) += 1;
        l(i + 1, i + 1) += 1;
        l(i, i + 1) = l(i + 1, i) = -1;
    }
    return l;
}

std::vector<double> uniform_unit(int n) { return std::vector<double>(n, 1.0 / std::sqrt(static_cast<double>(n))); }

SimilarityGraph random_graph(Rng& rng, int n)
{
    SimilarityGraph g{DenseMatrix(n), Grid{1, n}};
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            g.weights(i, j) = g.weights(j, i) = rng.uniform(0.0, 1.0);
    return g;
}

double dot(const std::vector<double>& a, const std::vector<double>& b)
{
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

} // namespace

TEST_CASE("raster order")
{
    const auto o = raster_order(2, 2);
    CHECK(o.perm() == std::vector<int>{0, 1, 2, 3});
    CHECK(o.inv() == o.perm());
    CHECK(raster_order(1, 1).perm() == std::vector<int>{0});
    CHECK_THROWS_AS(raster_order(0, 3), ShapeError);
}

TEST_CASE("from_perm rejects non-bijections")
{
    CHECK_THROWS_AS(ScanOrder::from_perm({0, 0, 1}, {1, 3}, {1, 3}), ShapeError);
    CHECK_THROWS_AS(ScanOrder::from_perm({0, 1}, {1, 3}, {1, 3}), ShapeError);
    CHECK_THROWS_AS(ScanOrder::from_perm({0, 3, 1}, {1, 3}, {1, 3}), ShapeError);
}

TEST_CASE("every produced order is a bijection on grids up to 64x64")
{
    Rng rng(3);
    for (int h = 1; h <= 64; ++h)
        for (int w = 1; w <= 64; ++w) {
            const auto r = raster_order(h, w);
            REQUIRE(r.is_valid());
            const int win = 1 + (h * 7 + w) % 9;
            REQUIRE(windowed_order(r, win).is_valid());
            if (h % 4 == 0 && w % 4 == 0) {
                std::vector<int> coarse(h / 4 * (w / 4));
                std::iota(coarse.begin(), coarse.end(), 0);
                for (int i = static_cast<int>(coarse.size()) - 1; i > 0; --i)
                    std::swap(coarse[i], coarse[rng.uniform_int(0, i)]);
                const auto c = ScanOrder::from_perm(coarse, {h / 4, w / 4}, {h / 4, w / 4});
                REQUIRE(expand_order(c, {h, w}).is_valid());
            }
            REQUIRE(restrict_order(r, {(h + 1) / 2, (w + 2) / 3}).is_valid());
        }
}

TEST_CASE("windowed order groups pixels by window in first-visit order")
{
    // 4x4, win 2, visiting site 15 first puts window 3 first.
    std::vector<int> perm(16);
    std::iota(perm.rbegin(), perm.rend(), 0);
    const auto o = windowed_order(ScanOrder::from_perm(perm, {4, 4}, {4, 4}), 2);
    CHECK(o.perm() == std::vector<int>{15, 14, 11, 10, 13, 12, 9, 8, 7, 6, 3, 2, 5, 4, 1, 0});
    // Raster input: windows in raster order, raster inside each.
    CHECK(windowed_order(raster_order(2, 4), 2).perm() == std::vector<int>{0, 1, 4, 5, 2, 3, 6, 7});
}

TEST_CASE("expand_order enumeration")
{
    const auto c = ScanOrder::from_perm({1, 0}, {1, 2}, {1, 2});
    const auto e = expand_order(c, {2, 4});
    CHECK(e.perm() == std::vector<int>{2, 3, 6, 7, 0, 1, 4, 5});
    CHECK(expand_order(c, {1, 2}).perm() == c.perm());
    CHECK_THROWS_AS(expand_order(c, {2, 3}), ShapeError);
}

TEST_CASE("embed_downsample shapes")
{
    Rng rng(4);
    const Tensor x = oracle::random_tensor(rng, {3, 8, 8});
    CHECK(embed_downsample(x, averaging_embedding(3, 4), Tensor(Shape{3}), 4).shape() == Shape{3, 2, 2});
    CHECK(identical(embed_downsample(x, averaging_embedding(3, 1), Tensor(Shape{3}), 1), x));
    CHECK(embed_downsample(oracle::random_tensor(rng, {2, 16, 16}), averaging_embedding(2, 4),
                           Tensor(Shape{2}), 4).dim(1) * 4 == 16);
    CHECK_THROWS_AS(embed_downsample(oracle::random_tensor(rng, {3, 6, 8}), averaging_embedding(3, 4),
                                     Tensor(Shape{3}), 4), ShapeError);
}

TEST_CASE("similarity graph examples")
{
    SimilarityConfig cfg;
    cfg.top_k = 1;
    SUBCASE("two identical tokens")
    {
        const Tensor t(Shape{3, 1, 2}, std::vector<float>{0.5f, 0.5f, -1.0f, -1.0f, 2.0f, 2.0f});
        const auto g = build_similarity(t, cfg);
        CHECK(g.weights(0, 0) == 0.0);
        CHECK(g.weights(1, 1) == 0.0);
        CHECK(g.weights(0, 1) > 0.0);
        CHECK(g.weights(0, 1) == g.weights(1, 0));
    }
    SUBCASE("orthogonal one-hot tokens, dense branch only")
    {
        // After mean-centring the two one-hots point in opposite directions:
        // cosine -1 off the diagonal, +1 on it.
        cfg.blend = 1.0f;
        cfg.temperature = 0.1f;
        const Tensor t(Shape{2, 1, 2}, std::vector<float>{1.0f, 0.0f, 0.0f, 1.0f});
        const auto g = build_similarity(t, cfg);
        const double tau = static_cast<double>(0.1f);
        const double expect = std::exp(-1.0 / tau) / (std::exp(1.0 / tau) + std::exp(-1.0 / tau));
        CHECK(std::abs(g.weights(0, 1) - expect) <= 1e-9);
        CHECK(g.weights(0, 1) < 1e-8);
    }
    SUBCASE("random fields are symmetric and nonnegative")
    {
        Rng rng(5);
        for (int trial = 0; trial < 20; ++trial) {
            SimilarityConfig c2;
            c2.top_k = 2;
            c2.blend = static_cast<float>(rng.uniform());
            const auto g = build_similarity(oracle::random_tensor(rng, {4, 2, 2}), c2);
            CHECK(g.is_valid(1e-6));
        }
    }
    CHECK_THROWS_AS(build_similarity(Tensor({3, 1, 1}), cfg), ShapeError);
    cfg.top_k = 2;
    CHECK_THROWS_AS(build_similarity(Tensor({3, 1, 2}), cfg), ShapeError);
}

TEST_CASE("laplacian examples and spectrum")
{
    SimilarityGraph two{DenseMatrix(2), Grid{1, 2}};
    two.weights(0, 1) = two.weights(1, 0) = 1.0;
    const auto l2 = laplacian(two);
    CHECK(l2.matrix(0, 0) == 1.0);
    CHECK(l2.matrix(1, 1) == 1.0);
    CHECK(l2.matrix(0, 1) == -1.0);
    CHECK(l2.matrix(1, 0) == -1.0);

    SimilarityGraph empty{DenseMatrix(3), Grid{1, 3}};
    const auto l0 = laplacian(empty);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(l0.matrix(i, j) == (i == j ? 1.0 : 0.0));

    Rng rng(6);
    for (int trial = 0; trial < 10; ++trial) {
        const int n = rng.uniform_int(2, 24);
        const auto l = laplacian(random_graph(rng, n));
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                CHECK(std::abs(l.matrix(i, j) - l.matrix(j, i)) <= 1e-12);
        const auto e = oracle::jacobi_eigen(l.matrix.a, n);
        CHECK(e.values.front() >= -1e-8);
        CHECK(e.values.back() <= 2 + 1e-8);
        // D^(1/2) 1 is a null vector.
        double worst = 0;
        for (int i = 0; i < n; ++i) {
            double acc = 0;
            for (int j = 0; j < n; ++j)
                acc += l.matrix(i, j) * l.null_direction[j];
            worst = std::max(worst, std::abs(acc));
        }
        CHECK(worst <= 1e-5);
    }
}

TEST_CASE("Fiedler vector of P3 (raw unnormalized matrix)")
{
    const auto r = fiedler_vector(path_laplacian(3), uniform_unit(3), {});
    CHECK(std::abs(r.eigenvalue - 1.0) <= 1e-6);
    CHECK(std::abs(r.vector[0] - 1 / std::sqrt(2.0)) <= 1e-6);
    CHECK(std::abs(r.vector[1]) <= 1e-6);
    CHECK(std::abs(r.vector[2] + 1 / std::sqrt(2.0)) <= 1e-6);
    CHECK(r.residual <= 1e-6);
    CHECK(order_from_fiedler(r.vector, {1, 3}).perm() == std::vector<int>{2, 1, 0});
}

TEST_CASE("Normalized path Laplacian: raw Fiedler sort is not monotone, cut embedding is")
{
    const int n = 5;
    SimilarityGraph g{DenseMatrix(n), Grid{1, n}};
    for (int i = 0; i + 1 < n; ++i)
        g.weights(i, i + 1) = g.weights(i + 1, i) = 1.0;
    const auto l = laplacian(g);
    FiedlerSolveConfig tight;
    tight.tol = 1e-12;
    const auto r = fiedler_vector(l, tight);
    // f64 oracle: the random-walk eigenvector of P_n is cos(pi * i / (n - 1)).
    const auto e = cut_embedding(l, r.vector);
    for (int i = 0; i < n; ++i)
        CHECK(std::abs(e[i] / e[0] - std::cos(M_PI * i / (n - 1))) <= 1e-6);
    CHECK(order_from_fiedler(e, {1, n}).perm() == std::vector<int>{4, 3, 2, 1, 0});
    CHECK(order_from_fiedler(r.vector, {1, n}).perm() != std::vector<int>{4, 3, 2, 1, 0});
}

TEST_CASE("cut_embedding maps isolated nodes to zero and checks length")
{
    SimilarityGraph g{DenseMatrix(3), Grid{1, 3}};
    g.weights(0, 1) = g.weights(1, 0) = 1.0;
    const auto l = laplacian(g);
    const std::vector<double> v{0.5, -0.5, 0.7};
    const auto e = cut_embedding(l, v);
    CHECK(e[2] == 0.0);
    CHECK(e[0] > 0.0);
    CHECK_THROWS_AS(cut_embedding(l, std::vector<double>{1.0}), ShapeError);
}

TEST_CASE("Fiedler vector of two disconnected cliques is a block indicator")
{
    SimilarityGraph g{DenseMatrix(4), Grid{1, 4}};
    g.weights(0, 1) = g.weights(1, 0) = 1.0;
    g.weights(2, 3) = g.weights(3, 2) = 1.0;
    const auto r = fiedler_vector(laplacian(g), {});
    const auto e = oracle::jacobi_eigen(laplacian(g).matrix.a, 4);
    CHECK(std::abs(r.eigenvalue) <= 1e-6);
    CHECK(std::abs(e.values[1]) <= 1e-9);
    CHECK(std::abs(r.vector[0] - 0.5) <= 1e-6);
    CHECK(std::abs(r.vector[1] - 0.5) <= 1e-6);
    CHECK(std::abs(r.vector[2] + 0.5) <= 1e-6);
    CHECK(std::abs(r.vector[3] + 0.5) <= 1e-6);
}

TEST_CASE("Fiedler solve agrees with the dense eigensolver on random graphs")
{
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = rng.uniform_int(3, 40);
        const auto l = laplacian(random_graph(rng, n));
        const auto r = fiedler_vector(l, {});
        const auto e = oracle::jacobi_eigen(l.matrix.a, n);
        CHECK(std::abs(r.eigenvalue - e.values[1]) <= 1e-6);
        CHECK(std::abs(std::abs(dot(r.vector, e.vectors[1])) - 1.0) <= 1e-6);
        CHECK(std::abs(dot(r.vector, l.null_direction)) <= 1e-6);
        CHECK(r.residual <= 1e-6);
        // Sign convention makes recomputation bit-identical.
        CHECK(fiedler_vector(l, {}).vector == r.vector);
        double first = 0;
        for (double v : r.vector)
            if (std::abs(v) > 1e-9) {
                first = v;
                break;
            }
        CHECK(first > 0);
    }
}

TEST_CASE("path graphs recover the monotone order")
{
    for (int n = 3; n <= 64; ++n) {
        const auto r = fiedler_vector(path_laplacian(n), uniform_unit(n), {});
        const auto o = order_from_fiedler(r.vector, {1, n});
        std::vector<int> expect(n);
        std::iota(expect.rbegin(), expect.rend(), 0);
        CHECK(o.perm() == expect);
        CHECK(r.residual <= 1e-6);
    }
}

TEST_CASE("spectral order is equivariant under token relabeling")
{
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 16;
        const auto g = random_graph(rng, n);
        std::vector<int> sigma(n);
        std::iota(sigma.begin(), sigma.end(), 0);
        for (int i = n - 1; i > 0; --i)
            std::swap(sigma[i], sigma[rng.uniform_int(0, i)]);
        // New token a is old token sigma[a].
        SimilarityGraph gp{DenseMatrix(n), Grid{1, n}};
        for (int a = 0; a < n; ++a)
            for (int b = 0; b < n; ++b)
                gp.weights(a, b) = g.weights(sigma[a], sigma[b]);
        const auto o = order_from_fiedler(fiedler_vector(laplacian(g), {}).vector, {1, n});
        const auto op = order_from_fiedler(fiedler_vector(laplacian(gp), {}).vector, {1, n});
        std::vector<int> inv_sigma(n), mapped(n);
        for (int a = 0; a < n; ++a)
            inv_sigma[sigma[a]] = a;
        for (int k = 0; k < n; ++k)
            mapped[k] = inv_sigma[o.perm()[k]];
        std::vector<int> reversed(mapped.rbegin(), mapped.rend());
        CHECK((op.perm() == mapped || op.perm() == reversed));
    }
}

TEST_CASE("order_from_fiedler ties fall back to raster order")
{
    const std::vector<double> v(6, 0.25);
    CHECK(order_from_fiedler(v, {2, 3}).perm() == std::vector<int>{0, 1, 2, 3, 4, 5});
}

TEST_CASE("build_compass: constant frames scan in raster order")
{
    const Tensor frame({3, 16, 16}, 0.5f);
    CompassConfig cfg;
    const auto o = build_compass(frame, averaging_embedding(3, 4), Tensor(Shape{3}), cfg);
    CHECK(o == raster_order(16, 16));
}

TEST_CASE("build_compass: two-region frame keeps regions contiguous")
{
    Tensor frame({3, 16, 16});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x)
                frame.at(c, y, x) = x < 8 ? 0.9f : 0.1f;
    CompassConfig cfg;
    const auto o = build_compass(frame, averaging_embedding(3, 4), Tensor(Shape{3}), cfg);
    REQUIRE(o.is_valid());
    int same = 0;
    for (int k = 0; k + 1 < o.size(); ++k)
        same += ((o.perm()[k] % 16) < 8) == ((o.perm()[k + 1] % 16) < 8);
    CHECK(static_cast<double>(same) / (o.size() - 1) >= 0.9);
}

TEST_CASE("build_compass pads extents the factor does not divide")
{
    Rng rng(9);
    const Tensor frame = oracle::random_tensor(rng, {2, 10, 13});
    const auto o = build_compass(frame, averaging_embedding(2, 4), Tensor(Shape{2}), {});
    CHECK(o.target_grid() == Grid{10, 13});
    CHECK(o.is_valid());
}
