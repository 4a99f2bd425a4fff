#include "mambavsr/scan_compass.hpp"

#include "mambavsr/errors.hpp"
#include "mambavsr/ops.hpp"
#include "mambavsr/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace mvsr::compass {

bool SimilarityGraph::is_valid(double tol) const
{
    const int n = weights.n;
    if (n != grid.size())
        return false;
    for (int i = 0; i < n; ++i) {
        if (weights(i, i) != 0.0)
            return false;
        for (int j = 0; j < n; ++j) {
            if (weights(i, j) < 0.0 || std::abs(weights(i, j) - weights(j, i)) > tol)
                return false;
        }
    }
    return true;
}

Tensor embed_downsample(const Tensor& feat, const Tensor& weight, const Tensor& bias, int factor)
{
    if (feat.rank() != 3)
        throw ShapeError("embed_downsample: expected [C,H,W], got " + to_string(feat.shape()));
    if (factor < 1 || feat.dim(1) % factor != 0 || feat.dim(2) % factor != 0)
        throw ShapeError("embed_downsample: extents " + to_string(feat.shape()) +
                         " not divisible by factor " + std::to_string(factor));
    if (weight.rank() != 4 || weight.dim(2) != factor || weight.dim(3) != factor)
        throw ShapeError("embed_downsample: weight must be [C',C,factor,factor]");
    return mvsr::detail::conv2d_any(feat, weight, bias, factor, 0);
}

Tensor averaging_embedding(int channels, int factor)
{
    Tensor w(Shape{channels, channels, factor, factor});
    const float v = 1.0f / static_cast<float>(factor * factor);
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < factor; ++y)
            for (int x = 0; x < factor; ++x)
                w.at(c, c, y, x) = v;
    return w;
}

namespace {

// Mean-centred, unit-normalized token vectors, [n][C]. Returns false when the
// field has no content (every centred token is negligible).
bool centred_unit_tokens(const Tensor& tokens, std::vector<std::vector<double>>& out)
{
    const int c = tokens.dim(0), h = tokens.dim(1), w = tokens.dim(2);
    const int n = h * w;
    out.assign(n, std::vector<double>(c, 0.0));
    std::vector<double> mean(c, 0.0);
    double max_norm = 0.0;
    for (int i = 0; i < n; ++i) {
        double norm = 0.0;
        for (int ch = 0; ch < c; ++ch) {
            const double v = tokens[static_cast<std::size_t>(ch) * n + i];
            out[i][ch] = v;
            mean[ch] += v;
            norm += v * v;
        }
        max_norm = std::max(max_norm, std::sqrt(norm));
    }
    for (double& m : mean)
        m /= n;
    const double floor = 1e-5 * std::max(1.0, max_norm);
    bool informative = false;
    for (auto& t : out) {
        double norm = 0.0;
        for (int ch = 0; ch < c; ++ch) {
            t[ch] -= mean[ch];
            norm += t[ch] * t[ch];
        }
        norm = std::sqrt(norm);
        if (norm > floor) {
            informative = true;
            for (double& v : t)
                v /= norm;
        } else {
            std::fill(t.begin(), t.end(), 0.0);
        }
    }
    return informative;
}

} // namespace

SimilarityGraph build_similarity(const Tensor& tokens, const SimilarityConfig& cfg)
{
    if (tokens.rank() != 3)
        throw ShapeError("build_similarity: expected tokens [C',h,w]");
    const int n = tokens.dim(1) * tokens.dim(2);
    if (n < 2)
        throw ShapeError("build_similarity: need at least two tokens");
    if (cfg.top_k < 1 || cfg.top_k >= n)
        throw ShapeError("build_similarity: top_k must satisfy 1 <= top_k < n (n = " +
                         std::to_string(n) + ")");
    if (!(cfg.blend >= 0.0f && cfg.blend <= 1.0f))
        throw ShapeError("build_similarity: blend must lie in [0,1]");
    if (!(cfg.temperature > 0.0f))
        throw ShapeError("build_similarity: temperature must be positive");
    require_finite(tokens, "build_similarity tokens");

    std::vector<std::vector<double>> t;
    centred_unit_tokens(tokens, t);
    const int c = tokens.dim(0);

    DenseMatrix mixed(n);
    std::vector<double> logits(n), dense(n);
    std::vector<int> cand(n - 1);
    const double blend = cfg.blend;
    for (int i = 0; i < n; ++i) {
        double mx = -1e300;
        for (int j = 0; j < n; ++j) {
            double dot = 0.0;
            for (int ch = 0; ch < c; ++ch)
                dot += t[i][ch] * t[j][ch];
            logits[j] = dot / cfg.temperature;
            mx = std::max(mx, logits[j]);
        }
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
            dense[j] = std::exp(logits[j] - mx);
            sum += dense[j];
        }
        for (int j = 0; j < n; ++j)
            dense[j] /= sum;

        int m = 0;
        for (int j = 0; j < n; ++j)
            if (j != i)
                cand[m++] = j;
        std::stable_sort(cand.begin(), cand.end(),
                         [&](int a, int b) { return dense[a] > dense[b]; });
        double kept = 0.0;
        for (int r = 0; r < cfg.top_k; ++r)
            kept += dense[cand[r]];
        for (int j = 0; j < n; ++j)
            mixed(i, j) = blend * dense[j];
        for (int r = 0; r < cfg.top_k; ++r) {
            const double s = kept > 0.0 ? dense[cand[r]] / kept : 1.0 / cfg.top_k;
            mixed(i, cand[r]) += (1.0 - blend) * s;
        }
    }

    SimilarityGraph g;
    g.grid = {tokens.dim(1), tokens.dim(2)};
    g.weights = DenseMatrix(n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            g.weights(i, j) = i == j ? 0.0 : 0.5 * (mixed(i, j) + mixed(j, i));
    return g;
}

LaplacianMatrix laplacian(const SimilarityGraph& g)
{
    const int n = g.n();
    std::vector<double> deg(n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            deg[i] += g.weights(i, j);

    LaplacianMatrix l;
    l.matrix = DenseMatrix(n);
    l.null_direction.assign(n, 0.0);
    double norm = 0.0;
    for (int i = 0; i < n; ++i) {
        l.matrix(i, i) = 1.0;
        if (deg[i] <= 0.0)
            continue;
        for (int j = 0; j < n; ++j) {
            if (j == i || deg[j] <= 0.0)
                continue;
            l.matrix(i, j) = -g.weights(i, j) / std::sqrt(deg[i] * deg[j]);
        }
        l.null_direction[i] = std::sqrt(deg[i]);
        norm += deg[i];
    }
    if (norm > 0.0) {
        norm = std::sqrt(norm);
        for (double& v : l.null_direction)
            v /= norm;
    }
    return l;
}

namespace {

// In-place lower Cholesky factor; false if the matrix is not positive definite.
bool cholesky(DenseMatrix& m)
{
    const int n = m.n;
    for (int j = 0; j < n; ++j) {
        double d = m(j, j);
        for (int k = 0; k < j; ++k)
            d -= m(j, k) * m(j, k);
        if (!(d > 0.0))
            return false;
        d = std::sqrt(d);
        m(j, j) = d;
        for (int i = j + 1; i < n; ++i) {
            double s = m(i, j);
            for (int k = 0; k < j; ++k)
                s -= m(i, k) * m(j, k);
            m(i, j) = s / d;
        }
    }
    return true;
}

void cholesky_solve(const DenseMatrix& lfac, std::vector<double>& x)
{
    const int n = lfac.n;
    for (int i = 0; i < n; ++i) {
        double s = x[i];
        for (int k = 0; k < i; ++k)
            s -= lfac(i, k) * x[k];
        x[i] = s / lfac(i, i);
    }
    for (int i = n - 1; i >= 0; --i) {
        double s = x[i];
        for (int k = i + 1; k < n; ++k)
            s -= lfac(k, i) * x[k];
        x[i] = s / lfac(i, i);
    }
}

void deflate(std::vector<double>& x, std::span<const double> u)
{
    double d = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
        d += x[i] * u[i];
    for (std::size_t i = 0; i < x.size(); ++i)
        x[i] -= d * u[i];
}

double normalize(std::vector<double>& x)
{
    double s = 0.0;
    for (double v : x)
        s += v * v;
    s = std::sqrt(s);
    if (s > 0.0)
        for (double& v : x)
            v /= s;
    return s;
}

} // namespace

FiedlerResult fiedler_vector(const DenseMatrix& l, std::span<const double> null_direction,
                             const FiedlerSolveConfig& cfg)
{
    const int n = l.n;
    if (n < 2)
        throw ShapeError("fiedler_vector: need n >= 2");
    if (static_cast<int>(null_direction.size()) != n)
        throw ShapeError("fiedler_vector: null direction length mismatch");
    if (!(cfg.tol > 0.0) || cfg.max_iter < 1)
        throw ShapeError("fiedler_vector: tol must be > 0 and max_iter >= 1");

    std::vector<double> u(null_direction.begin(), null_direction.end());
    const bool has_null = normalize(u) > 0.0;

    double scale = 0.0;
    for (int i = 0; i < n; ++i)
        scale = std::max(scale, std::abs(l(i, i)));
    const double shift = 1e-10 * std::max(1.0, scale);

    DenseMatrix m = l;
    for (int i = 0; i < n; ++i) {
        m(i, i) += shift;
        if (has_null)
            for (int j = 0; j < n; ++j)
                m(i, j) += u[i] * u[j];
    }
    if (!cholesky(m))
        throw NumericError("fiedler_vector: matrix is not positive semi-definite");

    Rng rng(cfg.seed);
    std::vector<double> x(n);
    for (double& v : x)
        v = rng.uniform(-1.0, 1.0);
    if (has_null)
        deflate(x, u);
    normalize(x);

    std::vector<double> lx(n);
    FiedlerResult r;
    for (int it = 1; it <= cfg.max_iter; ++it) {
        cholesky_solve(m, x);
        if (has_null)
            deflate(x, u);
        if (normalize(x) == 0.0)
            throw NumericError("fiedler_vector: iterate collapsed to zero");

        double lambda = 0.0;
        for (int i = 0; i < n; ++i) {
            double s = 0.0;
            for (int j = 0; j < n; ++j)
                s += l(i, j) * x[j];
            lx[i] = s;
            lambda += x[i] * s;
        }
        double res = 0.0;
        for (int i = 0; i < n; ++i)
            res += (lx[i] - lambda * x[i]) * (lx[i] - lambda * x[i]);
        res = std::sqrt(res);
        r.iterations = it;
        r.eigenvalue = lambda;
        r.residual = res;
        if (res <= cfg.tol) {
            for (double v : x) {
                if (std::abs(v) > 1e-9) {
                    if (v < 0.0)
                        for (double& w : x)
                            w = -w;
                    break;
                }
            }
            r.vector = std::move(x);
            return r;
        }
    }
    throw ConvergenceError("fiedler_vector: residual " + std::to_string(r.residual) +
                           " above tolerance after " + std::to_string(cfg.max_iter) +
                           " iterations");
}

FiedlerResult fiedler_vector(const LaplacianMatrix& l, const FiedlerSolveConfig& cfg)
{
    return fiedler_vector(l.matrix, l.null_direction, cfg);
}

std::vector<double> cut_embedding(const LaplacianMatrix& l, std::span<const double> v)
{
    if (v.size() != l.null_direction.size())
        throw ShapeError("cut_embedding: vector length does not match the Laplacian");
    std::vector<double> out(v.size(), 0.0);
    for (std::size_t i = 0; i < v.size(); ++i)
        if (l.null_direction[i] > 0.0)
            out[i] = v[i] / l.null_direction[i];
    return out;
}

ScanOrder order_from_fiedler(std::span<const double> v, Grid grid)
{
    if (static_cast<int>(v.size()) != grid.size())
        throw ShapeError("order_from_fiedler: vector length does not match grid");
    std::vector<int> perm(v.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::stable_sort(perm.begin(), perm.end(), [&](int a, int b) { return v[a] < v[b]; });
    return ScanOrder::from_perm(std::move(perm), grid, grid);
}

ScanOrder expand_order(const ScanOrder& coarse, Grid target)
{
    const Grid src = coarse.target_grid();
    if (target.h % src.h != 0 || target.w % src.w != 0 || target.h / src.h != target.w / src.w)
        throw ShapeError("expand_order: target " + std::to_string(target.h) + "x" +
                         std::to_string(target.w) + " is not an integer multiple of " +
                         std::to_string(src.h) + "x" + std::to_string(src.w));
    const int f = target.h / src.h;
    std::vector<int> perm;
    perm.reserve(target.size());
    for (int site : coarse.perm()) {
        const int cy = site / src.w, cx = site % src.w;
        for (int dy = 0; dy < f; ++dy)
            for (int dx = 0; dx < f; ++dx)
                perm.push_back((cy * f + dy) * target.w + cx * f + dx);
    }
    return ScanOrder::from_perm(std::move(perm), src, target);
}

namespace {

Tensor replicate_pad(const Tensor& x, int h, int w)
{
    const int c = x.dim(0), h0 = x.dim(1), w0 = x.dim(2);
    Tensor out(Shape{c, h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx)
                out.at(ch, y, xx) = x.at(ch, std::min(y, h0 - 1), std::min(xx, w0 - 1));
    return out;
}

} // namespace

ScanOrder build_compass(const Tensor& feat, const Tensor& embed_weight, const Tensor& embed_bias,
                        const CompassConfig& cfg)
{
    if (feat.rank() != 3)
        throw ShapeError("build_compass: expected [C,H,W]");
    const int f = cfg.factor;
    const int h = feat.dim(1), w = feat.dim(2);
    const int hp = (h + f - 1) / f * f, wp = (w + f - 1) / f * f;
    const Tensor padded = (hp == h && wp == w) ? feat : replicate_pad(feat, hp, wp);
    const Grid full{h, w};

    const Tensor tokens = embed_downsample(padded, embed_weight, embed_bias, f);
    const Grid coarse{tokens.dim(1), tokens.dim(2)};
    std::vector<std::vector<double>> unused;
    if (coarse.size() < 2 || !centred_unit_tokens(tokens, unused))
        return raster_order(h, w);

    SimilarityConfig sim = cfg.similarity;
    sim.top_k = std::clamp(sim.top_k, 1, coarse.size() - 1);
    const SimilarityGraph g = build_similarity(tokens, sim);
    const LaplacianMatrix lap = laplacian(g);
    const FiedlerResult fr = fiedler_vector(lap, cfg.solve);
    const ScanOrder expanded = expand_order(order_from_fiedler(cut_embedding(lap, fr.vector), coarse), {hp, wp});
    return restrict_order(expanded, full);
}

} // namespace mvsr::compass
