#include "mambavsr/glssb.hpp"

#include "mambavsr/errors.hpp"
#include "mambavsr/sequentialize.hpp"
#include "mambavsr/ssm_kernel.hpp"

#include <cmath>
#include <memory>

namespace mvsr::block {

namespace {

constexpr float kLnEps = 1e-5f;

int reflect(int i, int n)
{
    if (n == 1)
        return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0)
        i += period;
    return i < n ? i : period - i;
}

ag::IndexMap share(std::vector<int> v) { return std::make_shared<const std::vector<int>>(std::move(v)); }

// [C,H,W] <-> [H*W, C]
ag::Var to_tokens(const ag::Var& x)
{
    const int c = x.dim(0), hw = x.dim(1) * x.dim(2);
    std::vector<int> idx(static_cast<std::size_t>(c) * hw);
    for (int s = 0; s < hw; ++s)
        for (int ch = 0; ch < c; ++ch)
            idx[static_cast<std::size_t>(s) * c + ch] = ch * hw + s;
    return ag::gather(x, share(std::move(idx)), Shape{hw, c});
}

ag::Var from_tokens(const ag::Var& t, int h, int w)
{
    const int hw = t.dim(0), c = t.dim(1);
    std::vector<int> idx(static_cast<std::size_t>(c) * hw);
    for (int ch = 0; ch < c; ++ch)
        for (int s = 0; s < hw; ++s)
            idx[static_cast<std::size_t>(ch) * hw + s] = s * c + ch;
    return ag::gather(t, share(std::move(idx)), Shape{c, h, w});
}

void check_window(const WindowConfig& cfg)
{
    if (cfg.window < 1 || cfg.heads < 1 || cfg.channels % cfg.heads != 0)
        throw ShapeError("window attention: channels must be divisible by heads and window >= 1");
}

} // namespace

std::vector<int> window_partition_index(int c, int h, int w, int win)
{
    if (win < 1 || c < 1 || h < 1 || w < 1)
        throw ShapeError("window_partition: invalid extents or window");
    const int nwy = (h + win - 1) / win, nwx = (w + win - 1) / win, n = win * win;
    std::vector<int> idx(static_cast<std::size_t>(nwy) * nwx * n * c);
    std::size_t o = 0;
    for (int wy = 0; wy < nwy; ++wy)
        for (int wx = 0; wx < nwx; ++wx)
            for (int i = 0; i < n; ++i) {
                const int y = reflect(wy * win + i / win, h);
                const int x = reflect(wx * win + i % win, w);
                for (int ch = 0; ch < c; ++ch)
                    idx[o++] = (ch * h + y) * w + x;
            }
    return idx;
}

std::vector<int> window_reverse_index(int c, int h, int w, int win)
{
    if (win < 1 || c < 1 || h < 1 || w < 1)
        throw ShapeError("window_reverse: invalid extents or window");
    const int nwx = (w + win - 1) / win, n = win * win;
    std::vector<int> idx(static_cast<std::size_t>(c) * h * w);
    std::size_t o = 0;
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int wid = (y / win) * nwx + x / win;
                const int i = (y % win) * win + x % win;
                idx[o++] = (wid * n + i) * c + ch;
            }
    return idx;
}

Tensor window_partition(const Tensor& x, int win)
{
    if (x.rank() != 3)
        throw ShapeError("window_partition: expected [C,H,W]");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int nw = ((h + win - 1) / win) * ((w + win - 1) / win);
    return gather(x, window_partition_index(c, h, w, win), Shape{nw, win * win, c});
}

Tensor window_reverse(const Tensor& windows, int c, int h, int w, int win)
{
    const int nw = ((h + win - 1) / win) * ((w + win - 1) / win);
    if (windows.shape() != Shape{nw, win * win, c})
        throw ShapeError("window_reverse: windows " + to_string(windows.shape()) + " do not match target");
    return gather(windows, window_reverse_index(c, h, w, win), Shape{c, h, w});
}

ag::Var window_partition(const ag::Var& x, int win)
{
    if (x.shape().size() != 3)
        throw ShapeError("window_partition: expected [C,H,W]");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int nw = ((h + win - 1) / win) * ((w + win - 1) / win);
    return ag::gather(x, share(window_partition_index(c, h, w, win)), Shape{nw, win * win, c});
}

ag::Var window_reverse(const ag::Var& windows, int c, int h, int w, int win)
{
    const int nw = ((h + win - 1) / win) * ((w + win - 1) / win);
    if (windows.shape() != Shape{nw, win * win, c})
        throw ShapeError("window_reverse: windows " + to_string(windows.shape()) + " do not match target");
    return ag::gather(windows, share(window_reverse_index(c, h, w, win)), Shape{c, h, w});
}

std::vector<int> relative_position_index(int win)
{
    const int n = win * win, span = 2 * win - 1;
    std::vector<int> idx(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const int dy = i / win - j / win + win - 1;
            const int dx = i % win - j % win + win - 1;
            idx[static_cast<std::size_t>(i) * n + j] = dy * span + dx;
        }
    return idx;
}

ag::Var window_attention(const ag::Var& tokens, const WindowConfig& cfg, const ParamSource& p,
                         const std::string& prefix, Tensor* attn_out)
{
    check_window(cfg);
    if (tokens.shape().size() != 3 || tokens.dim(1) != cfg.window * cfg.window ||
        tokens.dim(2) != cfg.channels)
        throw ShapeError("window_attention: tokens " + to_string(tokens.shape()) + " do not match config");
    const int nw = tokens.dim(0), n = tokens.dim(1), c = cfg.channels, heads = cfg.heads, d = c / heads;

    const ag::Var flat = ag::reshape(tokens, Shape{nw * n, c});
    const ag::Var qkv = ag::linear(flat, p.get(prefix + "qkv.weight"), p.get(prefix + "qkv.bias"));

    auto split = [&](int which) {
        std::vector<int> idx(static_cast<std::size_t>(nw) * heads * n * d);
        std::size_t o = 0;
        for (int wi = 0; wi < nw; ++wi)
            for (int h = 0; h < heads; ++h)
                for (int i = 0; i < n; ++i)
                    for (int e = 0; e < d; ++e)
                        idx[o++] = (wi * n + i) * 3 * c + which * c + h * d + e;
        return ag::gather(qkv, share(std::move(idx)), Shape{nw * heads, n, d});
    };
    const ag::Var q = split(0), k = split(1), v = split(2);

    ag::Var scores = ag::scale(ag::bmm(q, k, false, true), 1.0f / std::sqrt(static_cast<float>(d)));
    // Bias table [(2w-1)^2, heads] -> [heads, n, n].
    const auto rel = relative_position_index(cfg.window);
    std::vector<int> bidx(static_cast<std::size_t>(heads) * n * n);
    for (int h = 0; h < heads; ++h)
        for (std::size_t ij = 0; ij < rel.size(); ++ij)
            bidx[h * rel.size() + ij] = rel[ij] * heads + h;
    const ag::Var bias = ag::gather(p.get(prefix + "rpb_table"), share(std::move(bidx)), Shape{heads, n, n});
    scores = ag::add_broadcast(ag::reshape(scores, Shape{nw, heads, n, n}), bias);
    const ag::Var attn = ag::softmax_last(scores);
    if (attn_out)
        *attn_out = attn.value();

    const ag::Var ctx = ag::bmm(ag::reshape(attn, Shape{nw * heads, n, n}), v);
    std::vector<int> midx(static_cast<std::size_t>(nw) * n * c);
    std::size_t o = 0;
    for (int wi = 0; wi < nw; ++wi)
        for (int i = 0; i < n; ++i)
            for (int h = 0; h < heads; ++h)
                for (int e = 0; e < d; ++e)
                    midx[o++] = ((wi * heads + h) * n + i) * d + e;
    const ag::Var merged = ag::gather(ctx, share(std::move(midx)), Shape{nw * n, c});
    const ag::Var out = ag::linear(merged, p.get(prefix + "proj.weight"), p.get(prefix + "proj.bias"));
    return ag::reshape(out, Shape{nw, n, c});
}

ag::Var wfsab(const ag::Var& x, const WindowConfig& cfg, const ParamSource& p,
              const std::string& prefix, Tensor* attn_out)
{
    check_window(cfg);
    if (x.shape().size() != 3 || x.dim(0) != cfg.channels)
        throw ShapeError("wfsab: expected [" + std::to_string(cfg.channels) + ",H,W], got " +
                         to_string(x.shape()));
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const ag::Var t = window_partition(x, cfg.window);
    const ag::Var n1 = ag::layer_norm(t, p.get(prefix + "norm1.weight"), p.get(prefix + "norm1.bias"), kLnEps);
    const ag::Var x1 = ag::add(t, window_attention(n1, cfg, p, prefix, attn_out));

    const Shape flat{x1.dim(0) * x1.dim(1), c};
    const ag::Var n2 = ag::reshape(
        ag::layer_norm(x1, p.get(prefix + "norm2.weight"), p.get(prefix + "norm2.bias"), kLnEps), flat);
    const ag::Var hid = ag::gelu(ag::linear(n2, p.get(prefix + "mlp.fc1.weight"), p.get(prefix + "mlp.fc1.bias")));
    const ag::Var mlp = ag::linear(hid, p.get(prefix + "mlp.fc2.weight"), p.get(prefix + "mlp.fc2.bias"));
    const ag::Var x2 = ag::add(x1, ag::reshape(mlp, x1.shape()));
    return window_reverse(x2, c, h, w, cfg.window);
}

std::vector<ag::Var> glssm(const std::vector<ag::Var>& frames, int current, const ScanOrder& order,
                           const GlssmConfig& cfg, const ParamSource& p, const std::string& prefix)
{
    if (frames.empty() || current < 0 || current >= static_cast<int>(frames.size()))
        throw ShapeError("glssm: current frame index out of range");
    const int h = frames[0].dim(1), w = frames[0].dim(2);

    std::vector<ag::Var> normed;
    for (const auto& f : frames) {
        if (f.shape() != frames[0].shape() || f.dim(0) != cfg.channels)
            throw ShapeError("glssm: frames must share shape [" + std::to_string(cfg.channels) + ",H,W]");
        const ag::Var t = ag::layer_norm(to_tokens(f), p.get(prefix + "norm.weight"),
                                         p.get(prefix + "norm.bias"), kLnEps);
        normed.push_back(from_tokens(t, h, w));
    }
    if (cfg.align) {
        for (int f = 0; f < static_cast<int>(normed.size()); ++f) {
            if (f == current)
                continue;
            const auto r = seq::patch_align(normed[current].value(), normed[f].value(), cfg.patch, cfg.radius);
            normed[f] = seq::apply_alignment(normed[f], r);
        }
    }

    const ag::Var tokens = seq::interleave(normed, order);
    const ag::Var u = ag::silu(ag::linear(tokens, p.get(prefix + "in_x.weight"), ag::Var()));
    const ag::Var z = ag::linear(tokens, p.get(prefix + "in_z.weight"), ag::Var());
    const ag::Var delta = ag::softplus(ag::linear(u, p.get(prefix + "dt.weight"), p.get(prefix + "dt.bias")));
    const ag::Var bm = ag::linear(u, p.get(prefix + "B.weight"), ag::Var());
    const ag::Var cm = ag::linear(u, p.get(prefix + "C.weight"), ag::Var());
    const ag::Var a = ag::neg(ag::exp(p.get(prefix + "A_log")));
    const ag::Var y = ssm::bidirectional_scan(u, delta, a, bm, cm, p.get(prefix + "D"));
    const ag::Var out = ag::linear(ag::mul(y, ag::silu(z)), p.get(prefix + "out.weight"), ag::Var());
    return seq::desequentialize(out, static_cast<int>(frames.size()), order);
}

std::vector<ag::Var> glssb_forward(const std::vector<ag::Var>& frames, int current,
                                   const ScanOrder& order, const BlockConfig& cfg,
                                   const ParamSource& p, const std::string& prefix)
{
    auto attend = [&](const std::vector<ag::Var>& in, const std::string& name) {
        std::vector<ag::Var> out;
        for (const auto& f : in)
            out.push_back(wfsab(f, cfg.window, p, prefix + name));
        return out;
    };
    auto residual = [&](const std::vector<ag::Var>& in, const std::string& name) {
        const auto g = glssm(in, current, order, cfg.glssm, p, prefix + name);
        std::vector<ag::Var> out;
        for (std::size_t i = 0; i < in.size(); ++i)
            out.push_back(ag::add(in[i], g[i]));
        return out;
    };

    switch (cfg.variant) {
    case Variant::wfsab:
        return attend(frames, "wfsab.");
    case Variant::wfsab_wfsab:
        return attend(attend(frames, "wfsab."), "wfsab2.");
    case Variant::glssm_glssm:
        return residual(residual(frames, "glssm."), "glssm2.");
    case Variant::wfsab_glssm:
        break;
    }
    const auto u = attend(frames, "wfsab.");
    if (cfg.gamma == GammaMode::zero)
        return u;
    const auto g = glssm(u, current, order, cfg.glssm, p, prefix + "glssm.");
    std::vector<ag::Var> out;
    for (std::size_t i = 0; i < u.size(); ++i) {
        if (cfg.gamma == GammaMode::learnable)
            out.push_back(ag::add(u[i], ag::scale_channels(g[i], p.get(prefix + "gamma"))));
        else
            out.push_back(ag::add(u[i], g[i]));
    }
    return out;
}

std::vector<ParamSpec> wfsab_param_specs(const WindowConfig& cfg, const std::string& prefix)
{
    check_window(cfg);
    const int c = cfg.channels, hid = cfg.mlp_ratio * c, span = 2 * cfg.window - 1;
    return {
        {prefix + "norm1.weight", {c}, Init::ones},
        {prefix + "norm1.bias", {c}, Init::zeros},
        {prefix + "qkv.weight", {3 * c, c}, Init::trunc_normal},
        {prefix + "qkv.bias", {3 * c}, Init::zeros},
        {prefix + "rpb_table", {span * span, cfg.heads}, Init::trunc_normal},
        {prefix + "proj.weight", {c, c}, Init::trunc_normal},
        {prefix + "proj.bias", {c}, Init::zeros},
        {prefix + "norm2.weight", {c}, Init::ones},
        {prefix + "norm2.bias", {c}, Init::zeros},
        {prefix + "mlp.fc1.weight", {hid, c}, Init::trunc_normal},
        {prefix + "mlp.fc1.bias", {hid}, Init::zeros},
        {prefix + "mlp.fc2.weight", {c, hid}, Init::trunc_normal},
        {prefix + "mlp.fc2.bias", {c}, Init::zeros},
    };
}

std::vector<ParamSpec> glssm_param_specs(const GlssmConfig& cfg, const std::string& prefix)
{
    const int c = cfg.channels, n = cfg.state_dim;
    if (c < 1 || n < 1)
        throw ShapeError("glssm: channels and state_dim must be positive");
    return {
        {prefix + "norm.weight", {c}, Init::ones},
        {prefix + "norm.bias", {c}, Init::zeros},
        {prefix + "in_x.weight", {c, c}, Init::trunc_normal},
        {prefix + "in_z.weight", {c, c}, Init::trunc_normal},
        {prefix + "dt.weight", {c, c}, Init::trunc_normal},
        {prefix + "dt.bias", {c}, Init::dt_bias},
        {prefix + "B.weight", {n, c}, Init::trunc_normal},
        {prefix + "C.weight", {n, c}, Init::trunc_normal},
        {prefix + "A_log", {c, n}, Init::a_log},
        {prefix + "D", {c}, Init::ones},
        {prefix + "out.weight", {c, c}, Init::trunc_normal},
    };
}

std::vector<ParamSpec> block_param_specs(const BlockConfig& cfg, const std::string& prefix)
{
    std::vector<ParamSpec> specs;
    auto append = [&](std::vector<ParamSpec> more) {
        specs.insert(specs.end(), more.begin(), more.end());
    };
    switch (cfg.variant) {
    case Variant::wfsab:
        append(wfsab_param_specs(cfg.window, prefix + "wfsab."));
        break;
    case Variant::wfsab_wfsab:
        append(wfsab_param_specs(cfg.window, prefix + "wfsab."));
        append(wfsab_param_specs(cfg.window, prefix + "wfsab2."));
        break;
    case Variant::wfsab_glssm:
        append(wfsab_param_specs(cfg.window, prefix + "wfsab."));
        if (cfg.gamma != GammaMode::zero)
            append(glssm_param_specs(cfg.glssm, prefix + "glssm."));
        if (cfg.gamma == GammaMode::learnable)
            specs.push_back({prefix + "gamma", {cfg.window.channels}, Init::ones});
        break;
    case Variant::glssm_glssm:
        append(glssm_param_specs(cfg.glssm, prefix + "glssm."));
        append(glssm_param_specs(cfg.glssm, prefix + "glssm2."));
        break;
    }
    return specs;
}

} // namespace mvsr::block
