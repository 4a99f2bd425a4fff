#pragma once

#include "mambavsr/tensor.hpp"

#include <cmath>
#include <span>
#include <vector>

namespace mvsr {

// ---------------------------------------------------------------------------
// Convolution. Cross-correlation convention (no kernel flip):
//   out[o,y,x] = b[o] + sum_{i,ky,kx} w[o,i,ky,kx] * in[i, y*s-p+ky, x*s-p+kx]
// with zero padding outside the input.
// x: [C_in,H,W], weight: [C_out,C_in,k,k], bias: [C_out] (or empty).
// ---------------------------------------------------------------------------
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding);

namespace detail {
// Same as conv2d without the odd-kernel restriction (patch embeddings).
Tensor conv2d_any(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride,
                  int padding);
Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& weight, const Shape& x_shape,
                         int stride, int padding);
Tensor conv2d_grad_weight(const Tensor& grad_out, const Tensor& x, const Shape& w_shape,
                          int stride, int padding);
} // namespace detail

// Numerically stable softmax (max subtraction) along `axis`.
Tensor softmax(const Tensor& x, int axis);

// Normalizes over the last axis with biased variance, then applies gamma/beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps);

// x: [L,C_in], weight: [C_out,C_in], bias: [C_out] or empty -> [L,C_out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Batched matrix product on rank-3 tensors. With trans_a the stored a is
// [B,K,M]; with trans_b the stored b is [B,N,K]. Result is [B,M,N].
Tensor bmm(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);

// ---------------------------------------------------------------------------
// Rearrangements. Every layout change in the model is a gather through an
// explicit index map: out[i] = x[index[i]], or 0 where index[i] < 0.
// ---------------------------------------------------------------------------
Tensor gather(const Tensor& x, std::span<const int> index, Shape out_shape);

// [C*r*r,H,W] -> [C,rH,rW]; out[c, y*r+i, x*r+j] = in[c*r*r + i*r + j, y, x]
std::vector<int> pixel_shuffle_index(const Shape& in_shape, int r);
std::vector<int> pixel_unshuffle_index(const Shape& in_shape, int r);
Tensor pixel_shuffle(const Tensor& x, int r);
Tensor pixel_unshuffle(const Tensor& x, int r);

// Backward warping with bilinear interpolation.
// flow: [2,H,W], channel 0 = dx (columns), channel 1 = dy (rows), in pixels:
//   out[c,y,x] = in[c, y+dy(y,x), x+dx(y,x)]
// Sample coordinates are clamped to the image (border replication).
Tensor bilinear_warp(const Tensor& x, const Tensor& flow);

namespace detail {
Tensor bilinear_warp_grad_input(const Tensor& grad_out, const Tensor& flow, const Shape& x_shape);
}

// Cubic convolution resize, Keys kernel with a = -0.5, half-pixel
// (align-centers) mapping: src = (dst + 0.5) / scale - 0.5. Indices outside
// the image are clamped. For scale < 1 the kernel is widened by 1/scale
// (antialiased downsampling). Output extents are round(H*scale), round(W*scale).
Tensor bicubic_resize(const Tensor& x, float scale);

// The Keys cubic kernel itself, exposed for oracles and tests.
double cubic_kernel(double t, double a = -0.5);

struct CharbonnierConfig {
    float epsilon = 1e-3f;
};

// Global form: sqrt(||hr - sr||^2 + eps^2).
float charbonnier_loss(const Tensor& sr, const Tensor& hr, const CharbonnierConfig& cfg = {});
// Per-pixel mean: mean_i sqrt((hr_i - sr_i)^2 + eps^2). Used for optimization.
float charbonnier_mean(const Tensor& sr, const Tensor& hr, const CharbonnierConfig& cfg = {});

// ---------------------------------------------------------------------------
// Scalar activations.
// ---------------------------------------------------------------------------
inline float gelu(float x)
{
    return 0.5f * x * (1.0f + std::erf(x * 0.70710678118654752f));
}
inline float gelu_grad(float x)
{
    const float cdf = 0.5f * (1.0f + std::erf(x * 0.70710678118654752f));
    const float pdf = 0.39894228040143268f * std::exp(-0.5f * x * x);
    return cdf + x * pdf;
}
inline float sigmoid(float x)
{
    return x >= 0.0f ? 1.0f / (1.0f + std::exp(-x)) : std::exp(x) / (1.0f + std::exp(x));
}
inline float silu(float x) { return x * sigmoid(x); }
inline float silu_grad(float x)
{
    const float s = sigmoid(x);
    return s * (1.0f + x * (1.0f - s));
}
inline float softplus(float x)
{
    return x > 20.0f ? x : std::log1p(std::exp(x));
}
inline float leaky_relu(float x, float slope) { return x >= 0.0f ? x : slope * x; }

} // namespace mvsr
