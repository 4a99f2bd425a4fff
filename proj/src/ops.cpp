#include "mambavsr/ops.hpp"

#include "mambavsr/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mvsr {

namespace {

void require_rank(const Tensor& t, int rank, const char* what)
{
    if (t.rank() != rank)
        throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + to_string(t.shape()));
}

// Output rows oy for which iy = oy*stride - pad + k lands inside [0, in).
void valid_range(int in, int out, int stride, int pad, int k, int& lo, int& hi)
{
    // smallest oy with oy*stride >= pad - k
    const int need = pad - k;
    lo = need <= 0 ? 0 : (need + stride - 1) / stride;
    // largest oy with oy*stride <= in - 1 + pad - k
    const int top = in - 1 + pad - k;
    hi = top < 0 ? -1 : std::min(out - 1, top / stride);
}

} // namespace

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

namespace detail {

Tensor conv2d_any(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride,
                  int padding)
{
    require_rank(x, 3, "conv2d input");
    require_rank(weight, 4, "conv2d weight");
    const int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int cout = weight.dim(0), k = weight.dim(2);
    if (weight.dim(1) != cin || weight.dim(3) != k)
        throw ShapeError("conv2d: weight " + to_string(weight.shape()) +
                         " incompatible with input " + to_string(x.shape()));
    if (!bias.empty() && (bias.rank() != 1 || bias.dim(0) != cout))
        throw ShapeError("conv2d: bias shape " + to_string(bias.shape()));
    if (stride < 1 || padding < 0)
        throw ShapeError("conv2d: stride must be >= 1 and padding >= 0");
    const int ho = (h + 2 * padding - k) / stride + 1;
    const int wo = (w + 2 * padding - k) / stride + 1;
    if (h + 2 * padding < k || w + 2 * padding < k || ho < 1 || wo < 1)
        throw ShapeError("conv2d: kernel larger than padded input");
    require_finite(x, "conv2d input");
    require_finite(weight, "conv2d weight");

    Tensor out(Shape{cout, ho, wo});
    for (int o = 0; o < cout; ++o) {
        float* op = out.data() + static_cast<std::size_t>(o) * ho * wo;
        const float b = bias.empty() ? 0.0f : bias[o];
        std::fill(op, op + static_cast<std::size_t>(ho) * wo, b);
        for (int i = 0; i < cin; ++i) {
            const float* ip = x.data() + static_cast<std::size_t>(i) * h * w;
            for (int ky = 0; ky < k; ++ky) {
                int ylo, yhi;
                valid_range(h, ho, stride, padding, ky, ylo, yhi);
                for (int kx = 0; kx < k; ++kx) {
                    const float wv = weight.at(o, i, ky, kx);
                    int xlo, xhi;
                    valid_range(w, wo, stride, padding, kx, xlo, xhi);
                    for (int oy = ylo; oy <= yhi; ++oy) {
                        const float* row = ip + static_cast<std::size_t>(oy * stride - padding + ky) * w;
                        float* orow = op + static_cast<std::size_t>(oy) * wo;
                        for (int ox = xlo; ox <= xhi; ++ox)
                            orow[ox] += wv * row[ox * stride - padding + kx];
                    }
                }
            }
        }
    }
    return out;
}

Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& weight, const Shape& x_shape,
                         int stride, int padding)
{
    const int cin = x_shape[0], h = x_shape[1], w = x_shape[2];
    const int cout = weight.dim(0), k = weight.dim(2);
    const int ho = grad_out.dim(1), wo = grad_out.dim(2);
    Tensor gx(x_shape);
    for (int o = 0; o < cout; ++o) {
        const float* gp = grad_out.data() + static_cast<std::size_t>(o) * ho * wo;
        for (int i = 0; i < cin; ++i) {
            float* gip = gx.data() + static_cast<std::size_t>(i) * h * w;
            for (int ky = 0; ky < k; ++ky) {
                int ylo, yhi;
                valid_range(h, ho, stride, padding, ky, ylo, yhi);
                for (int kx = 0; kx < k; ++kx) {
                    const float wv = weight.at(o, i, ky, kx);
                    int xlo, xhi;
                    valid_range(w, wo, stride, padding, kx, xlo, xhi);
                    for (int oy = ylo; oy <= yhi; ++oy) {
                        float* row = gip + static_cast<std::size_t>(oy * stride - padding + ky) * w;
                        const float* grow = gp + static_cast<std::size_t>(oy) * wo;
                        for (int ox = xlo; ox <= xhi; ++ox)
                            row[ox * stride - padding + kx] += wv * grow[ox];
                    }
                }
            }
        }
    }
    return gx;
}

Tensor conv2d_grad_weight(const Tensor& grad_out, const Tensor& x, const Shape& w_shape,
                          int stride, int padding)
{
    const int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int cout = w_shape[0], k = w_shape[2];
    const int ho = grad_out.dim(1), wo = grad_out.dim(2);
    Tensor gw(w_shape);
    for (int o = 0; o < cout; ++o) {
        const float* gp = grad_out.data() + static_cast<std::size_t>(o) * ho * wo;
        for (int i = 0; i < cin; ++i) {
            const float* ip = x.data() + static_cast<std::size_t>(i) * h * w;
            for (int ky = 0; ky < k; ++ky) {
                int ylo, yhi;
                valid_range(h, ho, stride, padding, ky, ylo, yhi);
                for (int kx = 0; kx < k; ++kx) {
                    int xlo, xhi;
                    valid_range(w, wo, stride, padding, kx, xlo, xhi);
                    double acc = 0.0;
                    for (int oy = ylo; oy <= yhi; ++oy) {
                        const float* row = ip + static_cast<std::size_t>(oy * stride - padding + ky) * w;
                        const float* grow = gp + static_cast<std::size_t>(oy) * wo;
                        for (int ox = xlo; ox <= xhi; ++ox)
                            acc += static_cast<double>(grow[ox]) * row[ox * stride - padding + kx];
                    }
                    gw.at(o, i, ky, kx) = static_cast<float>(acc);
                }
            }
        }
    }
    return gw;
}

} // namespace detail

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding)
{
    if (weight.rank() == 4 && weight.dim(2) % 2 == 0)
        throw ShapeError("conv2d: kernel size must be odd, got " + std::to_string(weight.dim(2)));
    return detail::conv2d_any(x, weight, bias, stride, padding);
}

// ---------------------------------------------------------------------------
// softmax / layer_norm / linear / bmm
// ---------------------------------------------------------------------------

Tensor softmax(const Tensor& x, int axis)
{
    const int r = x.rank();
    if (axis < 0)
        axis += r;
    if (axis < 0 || axis >= r)
        throw ShapeError("softmax: axis out of range for shape " + to_string(x.shape()));
    require_finite(x, "softmax input");
    std::size_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d)
        outer *= x.shape()[d];
    for (int d = axis + 1; d < r; ++d)
        inner *= x.shape()[d];
    const int n = x.shape()[axis];
    Tensor out(x.shape());
    std::vector<double> e(n);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            float mx = x[base];
            for (int j = 1; j < n; ++j)
                mx = std::max(mx, x[base + j * inner]);
            double sum = 0.0;
            for (int j = 0; j < n; ++j) {
                e[j] = std::exp(static_cast<double>(x[base + j * inner]) - mx);
                sum += e[j];
            }
            for (int j = 0; j < n; ++j)
                out[base + j * inner] = static_cast<float>(e[j] / sum);
        }
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps)
{
    if (x.rank() < 1)
        throw ShapeError("layer_norm: rank-0 input");
    const int c = x.dim(-1);
    if (c == 0)
        throw ShapeError("layer_norm: zero-length normalization axis");
    if (gamma.size() != static_cast<std::size_t>(c) || beta.size() != static_cast<std::size_t>(c))
        throw ShapeError("layer_norm: gamma/beta length must equal " + std::to_string(c));
    if (!(eps > 0.0f))
        throw ShapeError("layer_norm: eps must be positive");
    require_finite(x, "layer_norm input");
    Tensor out(x.shape());
    const std::size_t rows = x.size() / c;
    for (std::size_t r = 0; r < rows; ++r) {
        const float* xp = x.data() + r * c;
        float* op = out.data() + r * c;
        double mean = 0.0;
        for (int j = 0; j < c; ++j)
            mean += xp[j];
        mean /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) {
            const double d = xp[j] - mean;
            var += d * d;
        }
        var /= c;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < c; ++j)
            op[j] = static_cast<float>((xp[j] - mean) * inv) * gamma[j] + beta[j];
    }
    return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias)
{
    require_rank(x, 2, "linear input");
    require_rank(weight, 2, "linear weight");
    const int rows = x.dim(0), cin = x.dim(1), cout = weight.dim(0);
    if (weight.dim(1) != cin)
        throw ShapeError("linear: weight " + to_string(weight.shape()) + " vs input " +
                         to_string(x.shape()));
    if (!bias.empty() && bias.size() != static_cast<std::size_t>(cout))
        throw ShapeError("linear: bias length mismatch");
    Tensor out(Shape{rows, cout});
    for (int r = 0; r < rows; ++r) {
        const float* xp = x.data() + static_cast<std::size_t>(r) * cin;
        float* op = out.data() + static_cast<std::size_t>(r) * cout;
        for (int o = 0; o < cout; ++o) {
            const float* wp = weight.data() + static_cast<std::size_t>(o) * cin;
            float acc = bias.empty() ? 0.0f : bias[o];
            for (int i = 0; i < cin; ++i)
                acc += xp[i] * wp[i];
            op[o] = acc;
        }
    }
    return out;
}

Tensor bmm(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b)
{
    require_rank(a, 3, "bmm lhs");
    require_rank(b, 3, "bmm rhs");
    const int batch = a.dim(0);
    const int m = trans_a ? a.dim(2) : a.dim(1);
    const int ka = trans_a ? a.dim(1) : a.dim(2);
    const int kb = trans_b ? b.dim(2) : b.dim(1);
    const int n = trans_b ? b.dim(1) : b.dim(2);
    if (b.dim(0) != batch || ka != kb)
        throw ShapeError("bmm: incompatible shapes " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
    const int k = ka;
    Tensor out(Shape{batch, m, n});
    const std::size_t as = static_cast<std::size_t>(m) * k, bs = static_cast<std::size_t>(k) * n;
    for (int bi = 0; bi < batch; ++bi) {
        const float* ap = a.data() + bi * as;
        const float* bp = b.data() + bi * bs;
        float* op = out.data() + static_cast<std::size_t>(bi) * m * n;
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) {
                float acc = 0.0f;
                for (int l = 0; l < k; ++l) {
                    const float av = trans_a ? ap[static_cast<std::size_t>(l) * m + i]
                                             : ap[static_cast<std::size_t>(i) * k + l];
                    const float bv = trans_b ? bp[static_cast<std::size_t>(j) * k + l]
                                             : bp[static_cast<std::size_t>(l) * n + j];
                    acc += av * bv;
                }
                op[static_cast<std::size_t>(i) * n + j] = acc;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// gather / pixel shuffle
// ---------------------------------------------------------------------------

Tensor gather(const Tensor& x, std::span<const int> index, Shape out_shape)
{
    Tensor out(std::move(out_shape));
    if (out.size() != index.size())
        throw ShapeError("gather: index length does not match output shape");
    const int n = static_cast<int>(x.size());
    for (std::size_t i = 0; i < index.size(); ++i) {
        const int src = index[i];
        if (src >= n)
            throw ShapeError("gather: index out of range");
        out[i] = src < 0 ? 0.0f : x[static_cast<std::size_t>(src)];
    }
    return out;
}

std::vector<int> pixel_shuffle_index(const Shape& in_shape, int r)
{
    if (in_shape.size() != 3 || r < 1 || in_shape[0] % (r * r) != 0)
        throw ShapeError("pixel_shuffle: channels of " + to_string(in_shape) +
                         " not divisible by r^2 for r = " + std::to_string(r));
    const int c = in_shape[0] / (r * r), h = in_shape[1], w = in_shape[2];
    std::vector<int> idx(numel(in_shape));
    std::size_t o = 0;
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h * r; ++y)
            for (int x = 0; x < w * r; ++x) {
                const int src_c = ch * r * r + (y % r) * r + (x % r);
                idx[o++] = (src_c * h + y / r) * w + x / r;
            }
    return idx;
}

std::vector<int> pixel_unshuffle_index(const Shape& in_shape, int r)
{
    if (in_shape.size() != 3 || r < 1 || in_shape[1] % r != 0 || in_shape[2] % r != 0)
        throw ShapeError("pixel_unshuffle: spatial extents of " + to_string(in_shape) +
                         " not divisible by r = " + std::to_string(r));
    const int c = in_shape[0], h = in_shape[1] / r, w = in_shape[2] / r;
    std::vector<int> idx(numel(in_shape));
    std::size_t o = 0;
    for (int ch = 0; ch < c * r * r; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int src_c = ch / (r * r), i = (ch % (r * r)) / r, j = ch % r;
                idx[o++] = (src_c * h * r + y * r + i) * (w * r) + x * r + j;
            }
    return idx;
}

Tensor pixel_shuffle(const Tensor& x, int r)
{
    const auto idx = pixel_shuffle_index(x.shape(), r);
    return gather(x, idx, Shape{x.dim(0) / (r * r), x.dim(1) * r, x.dim(2) * r});
}

Tensor pixel_unshuffle(const Tensor& x, int r)
{
    const auto idx = pixel_unshuffle_index(x.shape(), r);
    return gather(x, idx, Shape{x.dim(0) * r * r, x.dim(1) / r, x.dim(2) / r});
}

// ---------------------------------------------------------------------------
// bilinear warp
// ---------------------------------------------------------------------------

namespace {

struct BilinearTap {
    int x0, x1, y0, y1;
    float wx, wy;
};

BilinearTap bilinear_tap(float sx, float sy, int w, int h)
{
    sx = std::clamp(sx, 0.0f, static_cast<float>(w - 1));
    sy = std::clamp(sy, 0.0f, static_cast<float>(h - 1));
    BilinearTap t;
    t.x0 = static_cast<int>(std::floor(sx));
    t.y0 = static_cast<int>(std::floor(sy));
    t.x1 = std::min(t.x0 + 1, w - 1);
    t.y1 = std::min(t.y0 + 1, h - 1);
    t.wx = sx - static_cast<float>(t.x0);
    t.wy = sy - static_cast<float>(t.y0);
    return t;
}

void check_warp_shapes(const Tensor& x, const Tensor& flow)
{
    require_rank(x, 3, "bilinear_warp input");
    if (flow.rank() != 3 || flow.dim(0) != 2 || flow.dim(1) != x.dim(1) || flow.dim(2) != x.dim(2))
        throw ShapeError("bilinear_warp: flow " + to_string(flow.shape()) +
                         " does not match input " + to_string(x.shape()));
}

} // namespace

Tensor bilinear_warp(const Tensor& x, const Tensor& flow)
{
    check_warp_shapes(x, flow);
    require_finite(flow, "bilinear_warp flow");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor out(x.shape());
    for (int y = 0; y < h; ++y) {
        for (int xx = 0; xx < w; ++xx) {
            const auto t = bilinear_tap(static_cast<float>(xx) + flow.at(0, y, xx),
                                        static_cast<float>(y) + flow.at(1, y, xx), w, h);
            for (int ch = 0; ch < c; ++ch) {
                const float top = (1.0f - t.wx) * x.at(ch, t.y0, t.x0) + t.wx * x.at(ch, t.y0, t.x1);
                const float bot = (1.0f - t.wx) * x.at(ch, t.y1, t.x0) + t.wx * x.at(ch, t.y1, t.x1);
                out.at(ch, y, xx) = (1.0f - t.wy) * top + t.wy * bot;
            }
        }
    }
    return out;
}

namespace detail {

Tensor bilinear_warp_grad_input(const Tensor& grad_out, const Tensor& flow, const Shape& x_shape)
{
    const int c = x_shape[0], h = x_shape[1], w = x_shape[2];
    Tensor gx(x_shape);
    for (int y = 0; y < h; ++y) {
        for (int xx = 0; xx < w; ++xx) {
            const auto t = bilinear_tap(static_cast<float>(xx) + flow.at(0, y, xx),
                                        static_cast<float>(y) + flow.at(1, y, xx), w, h);
            for (int ch = 0; ch < c; ++ch) {
                const float g = grad_out.at(ch, y, xx);
                gx.at(ch, t.y0, t.x0) += g * (1.0f - t.wy) * (1.0f - t.wx);
                gx.at(ch, t.y0, t.x1) += g * (1.0f - t.wy) * t.wx;
                gx.at(ch, t.y1, t.x0) += g * t.wy * (1.0f - t.wx);
                gx.at(ch, t.y1, t.x1) += g * t.wy * t.wx;
            }
        }
    }
    return gx;
}

} // namespace detail

// ---------------------------------------------------------------------------
// bicubic resize
// ---------------------------------------------------------------------------

double cubic_kernel(double t, double a)
{
    t = std::abs(t);
    if (t <= 1.0)
        return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
    if (t < 2.0)
        return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
    return 0.0;
}

namespace {

struct ResampleTaps {
    std::vector<int> first;     // per output: offset into index/weight
    std::vector<int> count;
    std::vector<int> index;
    std::vector<double> weight;
};

ResampleTaps cubic_taps(int in, int out, double scale)
{
    ResampleTaps taps;
    const double support = scale < 1.0 ? 2.0 / scale : 2.0;
    const double kscale = scale < 1.0 ? scale : 1.0;
    for (int o = 0; o < out; ++o) {
        const double src = (o + 0.5) / scale - 0.5;
        const int lo = static_cast<int>(std::floor(src - support)) + 1;
        const int hi = static_cast<int>(std::ceil(src + support)) - 1;
        taps.first.push_back(static_cast<int>(taps.index.size()));
        double total = 0.0;
        const std::size_t start = taps.weight.size();
        for (int i = lo; i <= hi; ++i) {
            const double wv = cubic_kernel((src - i) * kscale);
            if (wv == 0.0)
                continue;
            taps.index.push_back(std::clamp(i, 0, in - 1));
            taps.weight.push_back(wv);
            total += wv;
        }
        for (std::size_t j = start; j < taps.weight.size(); ++j)
            taps.weight[j] /= total;
        taps.count.push_back(static_cast<int>(taps.weight.size() - start));
    }
    return taps;
}

} // namespace

Tensor bicubic_resize(const Tensor& x, float scale)
{
    require_rank(x, 3, "bicubic_resize input");
    if (!(scale > 0.0f) || !std::isfinite(scale))
        throw ShapeError("bicubic_resize: scale must be positive");
    require_finite(x, "bicubic_resize input");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int ho = static_cast<int>(std::lround(h * static_cast<double>(scale)));
    const int wo = static_cast<int>(std::lround(w * static_cast<double>(scale)));
    if (ho < 1 || wo < 1)
        throw ShapeError("bicubic_resize: degenerate output size " + std::to_string(ho) + "x" +
                         std::to_string(wo));
    const double sy = static_cast<double>(ho) / h, sx = static_cast<double>(wo) / w;
    const auto ty = cubic_taps(h, ho, sy);
    const auto tx = cubic_taps(w, wo, sx);

    Tensor out(Shape{c, ho, wo});
    std::vector<double> rows(static_cast<std::size_t>(ho) * w);
    for (int ch = 0; ch < c; ++ch) {
        for (int oy = 0; oy < ho; ++oy) {
            for (int xx = 0; xx < w; ++xx) {
                double acc = 0.0;
                for (int j = 0; j < ty.count[oy]; ++j) {
                    const int k = ty.first[oy] + j;
                    acc += ty.weight[k] * x.at(ch, ty.index[k], xx);
                }
                rows[static_cast<std::size_t>(oy) * w + xx] = acc;
            }
        }
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                double acc = 0.0;
                for (int j = 0; j < tx.count[ox]; ++j) {
                    const int k = tx.first[ox] + j;
                    acc += tx.weight[k] * rows[static_cast<std::size_t>(oy) * w + tx.index[k]];
                }
                out.at(ch, oy, ox) = static_cast<float>(acc);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Charbonnier
// ---------------------------------------------------------------------------

float charbonnier_loss(const Tensor& sr, const Tensor& hr, const CharbonnierConfig& cfg)
{
    require_same_shape(sr, hr, "charbonnier_loss");
    if (!(cfg.epsilon > 0.0f))
        throw ShapeError("charbonnier_loss: epsilon must be positive");
    double sq = 0.0;
    for (std::size_t i = 0; i < sr.size(); ++i) {
        const double d = static_cast<double>(hr[i]) - sr[i];
        sq += d * d;
    }
    const double eps = cfg.epsilon;
    const double loss = std::sqrt(sq + eps * eps);
    if (!std::isfinite(loss))
        throw NumericError("charbonnier_loss: non-finite loss");
    return static_cast<float>(loss);
}

float charbonnier_mean(const Tensor& sr, const Tensor& hr, const CharbonnierConfig& cfg)
{
    require_same_shape(sr, hr, "charbonnier_mean");
    if (!(cfg.epsilon > 0.0f))
        throw ShapeError("charbonnier_mean: epsilon must be positive");
    if (sr.size() == 0)
        throw ShapeError("charbonnier_mean: empty tensors");
    const double eps2 = static_cast<double>(cfg.epsilon) * cfg.epsilon;
    double acc = 0.0;
    for (std::size_t i = 0; i < sr.size(); ++i) {
        const double d = static_cast<double>(hr[i]) - sr[i];
        acc += std::sqrt(d * d + eps2);
    }
    const double loss = acc / static_cast<double>(sr.size());
    if (!std::isfinite(loss))
        throw NumericError("charbonnier_mean: non-finite loss");
    return static_cast<float>(loss);
}

} // namespace mvsr
