#include "mambavsr/metrics.hpp"

#include "mambavsr/errors.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace mvsr::metrics {

Tensor to_y(const Tensor& rgb)
{
    if (rgb.rank() != 3 || rgb.dim(0) != 3)
        throw ShapeError("to_y: expected [3,H,W], got " + to_string(rgb.shape()));
    const int h = rgb.dim(1), w = rgb.dim(2);
    Tensor y(Shape{1, h, w});
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            y.at(0, i, j) = static_cast<float>(0.299 * rgb.at(0, i, j) + 0.587 * rgb.at(1, i, j) +
                                               0.114 * rgb.at(2, i, j));
    return y;
}

double psnr(const Tensor& a, const Tensor& b, double range)
{
    require_same_shape(a, b, "psnr");
    if (a.empty())
        throw ShapeError("psnr: empty images");
    double se = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.size());
    if (mse == 0.0)
        return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(range * range / mse);
}

double ssim(const Tensor& a, const Tensor& b, const SsimConfig& cfg)
{
    require_same_shape(a, b, "ssim");
    if (a.rank() != 3)
        throw ShapeError("ssim: expected [C,H,W]");
    const int c = a.dim(0), h = a.dim(1), w = a.dim(2), k = cfg.window, r = k / 2;
    if (h < k || w < k)
        throw ShapeError("ssim: image " + to_string(a.shape()) + " smaller than the " +
                         std::to_string(k) + "x" + std::to_string(k) + " window");
    std::vector<double> g(k);
    double gs = 0.0;
    for (int i = 0; i < k; ++i) {
        g[i] = std::exp(-((i - r) * (i - r)) / (2.0 * cfg.sigma * cfg.sigma));
        gs += g[i];
    }
    for (auto& v : g)
        v /= gs;
    const double c1 = (cfg.k1 * cfg.range) * (cfg.k1 * cfg.range);
    const double c2 = (cfg.k2 * cfg.range) * (cfg.k2 * cfg.range);

    const int oh = h - k + 1, ow = w - k + 1;
    double total = 0.0;
    for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
                for (int i = 0; i < k; ++i)
                    for (int j = 0; j < k; ++j) {
                        const double wt = g[i] * g[j];
                        const double va = a.at(ch, y + i, x + j), vb = b.at(ch, y + i, x + j);
                        ma += wt * va;
                        mb += wt * vb;
                        saa += wt * (va * va);
                        sbb += wt * (vb * vb);
                        sab += wt * (va * vb);
                    }
                const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
                acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
        total += acc / (static_cast<double>(oh) * ow);
    }
    return total / c;
}

MetricReport evaluate(const std::vector<Tensor>& a, const std::vector<Tensor>& b, ChannelMode mode)
{
    if (a.size() != b.size())
        throw ShapeError("metrics: frame counts differ (" + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + ")");
    if (a.empty())
        throw ShapeError("metrics: no frames");
    MetricReport r;
    r.mode = mode;
    double sp = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        require_same_shape(a[i], b[i], "metrics frame " + std::to_string(i));
        const Tensor x = mode == ChannelMode::y ? to_y(a[i]) : a[i];
        const Tensor z = mode == ChannelMode::y ? to_y(b[i]) : b[i];
        r.psnr.push_back(psnr(x, z));
        r.ssim.push_back(ssim(x, z));
        sp += r.psnr.back();
        ss += r.ssim.back();
    }
    r.mean_psnr = sp / static_cast<double>(a.size());
    r.mean_ssim = ss / static_cast<double>(a.size());
    return r;
}

} // namespace mvsr::metrics
