#pragma once

#include "mambavsr/autograd.hpp"
#include "mambavsr/params.hpp"
#include "mambavsr/scan_order.hpp"
#include "mambavsr/tensor.hpp"

#include <string>
#include <vector>

// Window-attention and state-space blocks operating on per-frame feature maps
// [C,H,W].
namespace mvsr::block {

enum class Variant { wfsab, wfsab_wfsab, wfsab_glssm, glssm_glssm };
enum class GammaMode { learnable, frozen_one, zero };

struct WindowConfig {
    int channels = 64;
    int window = 8;
    int heads = 4;
    int mlp_ratio = 2;
};

struct GlssmConfig {
    int channels = 64;
    int state_dim = 16;
    // Patch alignment of neighbours onto the current frame (content-aware
    // scanning only).
    bool align = false;
    int patch = 8;
    int radius = 2;
};

struct BlockConfig {
    WindowConfig window;
    GlssmConfig glssm;
    Variant variant = Variant::wfsab_glssm;
    GammaMode gamma = GammaMode::learnable;
};

// [C,H,W] -> [nW, win*win, C] with reflection padding up to a multiple of win;
// windows in raster order. The reverse crops the padding away.
std::vector<int> window_partition_index(int c, int h, int w, int win);
std::vector<int> window_reverse_index(int c, int h, int w, int win);
Tensor window_partition(const Tensor& x, int win);
Tensor window_reverse(const Tensor& windows, int c, int h, int w, int win);
ag::Var window_partition(const ag::Var& x, int win);
ag::Var window_reverse(const ag::Var& windows, int c, int h, int w, int win);

// Index into the relative-position bias table [(2w-1)^2, heads] for every
// (query, key) pair inside a window, laid out [n, n].
std::vector<int> relative_position_index(int win);

// Multi-head self-attention inside each window; no norm, no residual.
// tokens: [nW, n, C]. If attn_out is non-null it receives [nW, heads, n, n].
ag::Var window_attention(const ag::Var& tokens, const WindowConfig& cfg, const ParamSource& p,
                         const std::string& prefix, Tensor* attn_out = nullptr);

// x + attn(LN(x)), then + MLP(LN(.)), computed on window tokens.
ag::Var wfsab(const ag::Var& x, const WindowConfig& cfg, const ParamSource& p,
              const std::string& prefix, Tensor* attn_out = nullptr);

// Selective-scan branch over a window of frames along `order` (already
// window-grouped). Returns the branch output (no residual) for every frame;
// neighbours are expressed in the current frame's coordinates when aligned.
std::vector<ag::Var> glssm(const std::vector<ag::Var>& frames, int current, const ScanOrder& order,
                           const GlssmConfig& cfg, const ParamSource& p, const std::string& prefix);

std::vector<ag::Var> glssb_forward(const std::vector<ag::Var>& frames, int current,
                                   const ScanOrder& order, const BlockConfig& cfg,
                                   const ParamSource& p, const std::string& prefix);

std::vector<ParamSpec> wfsab_param_specs(const WindowConfig& cfg, const std::string& prefix);
std::vector<ParamSpec> glssm_param_specs(const GlssmConfig& cfg, const std::string& prefix);
std::vector<ParamSpec> block_param_specs(const BlockConfig& cfg, const std::string& prefix);

} // namespace mvsr::block
