#pragma once

#include "mambavsr/tensor.hpp"

#include <vector>

namespace mvsr::metrics {

enum class ChannelMode { rgb, y };

struct SsimConfig {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double range = 1.0;
};

// BT.601 luma: 0.299 R + 0.587 G + 0.114 B. [3,H,W] -> [1,H,W].
Tensor to_y(const Tensor& rgb);

// 10 log10(range^2 / MSE) over all elements; +inf for identical inputs.
double psnr(const Tensor& a, const Tensor& b, double range = 1.0);
// Mean over channels of the mean SSIM map (valid region, Gaussian window).
double ssim(const Tensor& a, const Tensor& b, const SsimConfig& cfg = {});

struct MetricReport {
    ChannelMode mode = ChannelMode::rgb;
    std::vector<double> psnr;
    std::vector<double> ssim;
    // Arithmetic means in frame order (+inf if any frame is +inf).
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
};

MetricReport evaluate(const std::vector<Tensor>& a, const std::vector<Tensor>& b, ChannelMode mode);

} // namespace mvsr::metrics
