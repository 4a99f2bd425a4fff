#include "mambavsr/ssm_kernel.hpp"

#include "mambavsr/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mvsr::ssm {

namespace {

struct Dims {
    int l, c, n;
};

Dims check(const Tensor& x, const Tensor& delta, const Tensor& a, const Tensor& b,
           const Tensor& c, const Tensor& d)
{
    if (x.rank() != 2 || a.rank() != 2)
        throw ShapeError("scan: x must be [L,C] and A [C,N]");
    const Dims dm{x.dim(0), x.dim(1), a.dim(1)};
    if (delta.shape() != x.shape())
        throw ShapeError("scan: delta " + to_string(delta.shape()) + " vs x " + to_string(x.shape()));
    if (a.dim(0) != dm.c)
        throw ShapeError("scan: A " + to_string(a.shape()) + " does not match C=" + std::to_string(dm.c));
    const Shape ln{dm.l, dm.n};
    if (b.shape() != ln || c.shape() != ln)
        throw ShapeError("scan: B/C must be " + to_string(ln));
    if (d.shape() != Shape{dm.c})
        throw ShapeError("scan: D must be [C]");
    for (float v : delta.values())
        if (!(v > 0.0f))
            throw NumericError("scan: delta must be positive and finite");
    require_finite(x, "scan x");
    require_finite(a, "scan A");
    require_finite(b, "scan B");
    require_finite(c, "scan C");
    require_finite(d, "scan D");
    return dm;
}

void check_step(float y, int t)
{
    if (!std::isfinite(y))
        throw NumericError("scan: non-finite state at step " + std::to_string(t));
}

} // namespace

Tensor SSMParams::a() const
{
    Tensor out(a_log.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = -std::exp(a_log[i]);
    return out;
}

SSMParams SSMParams::init(int channels, int state_dim, Rng& rng)
{
    if (channels < 1 || state_dim < 1)
        throw ShapeError("SSMParams: channels and state_dim must be positive");
    SSMParams p;
    p.a_log = Tensor(Shape{channels, state_dim});
    for (int c = 0; c < channels; ++c)
        for (int n = 0; n < state_dim; ++n)
            p.a_log.at(c, n) = std::log(static_cast<float>(n + 1));
    auto tn = [&](Shape s) {
        Tensor t(std::move(s));
        for (auto& v : t.values())
            v = static_cast<float>(rng.truncated_normal(0.02));
        return t;
    };
    p.w_b = tn({state_dim, channels});
    p.w_c = tn({state_dim, channels});
    p.w_delta = tn({channels, channels});
    p.b_delta = Tensor(Shape{channels}, std::log(std::expm1(0.1f)));
    p.d = Tensor(Shape{channels}, 1.0f);
    return p;
}

Selection select(const Tensor& x, const SSMParams& p)
{
    Selection s;
    s.delta = linear(x, p.w_delta, p.b_delta);
    for (auto& v : s.delta.values())
        v = softplus(v);
    s.b = linear(x, p.w_b, Tensor());
    s.c = linear(x, p.w_c, Tensor());
    return s;
}

Discretized discretize(const Tensor& delta, const Tensor& a, const Tensor& b)
{
    if (delta.rank() != 2 || a.rank() != 2 || b.rank() != 2 || a.dim(0) != delta.dim(1) ||
        b.dim(0) != delta.dim(0) || b.dim(1) != a.dim(1))
        throw ShapeError("discretize: expected delta [L,C], A [C,N], B [L,N]");
    for (float v : delta.values())
        if (!(v > 0.0f))
            throw NumericError("discretize: delta must be positive and finite");
    const int l = delta.dim(0), ch = delta.dim(1), n = a.dim(1);
    Discretized r{Tensor(Shape{l, ch, n}), Tensor(Shape{l, ch, n})};
    for (int t = 0; t < l; ++t)
        for (int c = 0; c < ch; ++c) {
            const float dt = delta.at(t, c);
            for (int k = 0; k < n; ++k) {
                r.a_bar.at(t, c, k) = std::exp(dt * a.at(c, k));
                r.b_bar.at(t, c, k) = dt * b.at(t, k);
            }
        }
    return r;
}

Tensor scan(const Tensor& x, const Tensor& delta, const Tensor& a, const Tensor& b,
            const Tensor& c, const Tensor& d)
{
    const Dims dm = check(x, delta, a, b, c, d);
    Tensor y(x.shape());
    std::vector<float> h(static_cast<std::size_t>(dm.c) * dm.n, 0.0f);
    for (int t = 0; t < dm.l; ++t) {
        for (int ch = 0; ch < dm.c; ++ch) {
            const float dt = delta.at(t, ch), xv = x.at(t, ch);
            float acc = 0.0f;
            for (int k = 0; k < dm.n; ++k) {
                const float a_bar = std::exp(dt * a.at(ch, k));
                const float b_bar = dt * b.at(t, k);
                float& hs = h[ch * dm.n + k];
                hs = a_bar * hs + b_bar * xv;
                acc += c.at(t, k) * hs;
            }
            y.at(t, ch) = acc + d[ch] * xv;
            check_step(y.at(t, ch), t);
        }
    }
    return y;
}

Tensor scan_chunked(const Tensor& x, const Tensor& delta, const Tensor& a, const Tensor& b,
                    const Tensor& c, const Tensor& d, int chunk)
{
    const Dims dm = check(x, delta, a, b, c, d);
    if (chunk < 1)
        throw ShapeError("scan_chunked: chunk must be >= 1");
    chunk = std::min(chunk, std::max(dm.l, 1));
    const int nchunks = (dm.l + chunk - 1) / chunk;
    const std::size_t lanes = static_cast<std::size_t>(dm.c) * dm.n;

    // Within-chunk recurrence from a zero state. When `start` is given, emits
    // outputs using h_t = prod_t * start + local_t.
    auto run = [&](int k, std::vector<float>& local, std::vector<float>& prod,
                   const std::vector<float>* start, Tensor* y) {
        std::fill(local.begin(), local.end(), 0.0f);
        std::fill(prod.begin(), prod.end(), 1.0f);
        const int t0 = k * chunk, t1 = std::min(dm.l, t0 + chunk);
        for (int t = t0; t < t1; ++t) {
            for (int ch = 0; ch < dm.c; ++ch) {
                const float dt = delta.at(t, ch), xv = x.at(t, ch);
                float acc = 0.0f;
                for (int s = 0; s < dm.n; ++s) {
                    const std::size_t i = static_cast<std::size_t>(ch) * dm.n + s;
                    const float a_bar = std::exp(dt * a.at(ch, s));
                    const float b_bar = dt * b.at(t, s);
                    local[i] = a_bar * local[i] + b_bar * xv;
                    prod[i] = prod[i] * a_bar;
                    if (y) {
                        const float hs = prod[i] * (*start)[i] + local[i];
                        acc += c.at(t, s) * hs;
                    }
                }
                if (y) {
                    y->at(t, ch) = acc + d[ch] * xv;
                    check_step(y->at(t, ch), t);
                }
            }
        }
    };

    // Pass 1: chunk summaries (independent per chunk).
    std::vector<std::vector<float>> end_local(nchunks, std::vector<float>(lanes));
    std::vector<std::vector<float>> end_prod(nchunks, std::vector<float>(lanes));
    for (int k = 0; k < nchunks; ++k)
        run(k, end_local[k], end_prod[k], nullptr, nullptr);

    // Pass 2: carry states across chunk boundaries.
    std::vector<std::vector<float>> start(nchunks, std::vector<float>(lanes, 0.0f));
    for (int k = 1; k < nchunks; ++k)
        for (std::size_t i = 0; i < lanes; ++i)
            start[k][i] = end_prod[k - 1][i] * start[k - 1][i] + end_local[k - 1][i];

    // Pass 3: outputs (independent per chunk).
    Tensor y(x.shape());
    std::vector<float> local(lanes), prod(lanes);
    for (int k = 0; k < nchunks; ++k)
        run(k, local, prod, &start[k], &y);
    return y;
}

Tensor selective_scan(const Tensor& x, const SSMParams& p)
{
    const Selection s = select(x, p);
    return scan(x, s.delta, p.a(), s.b, s.c, p.d);
}

Tensor selective_scan_chunked(const Tensor& x, const SSMParams& p, int chunk)
{
    const Selection s = select(x, p);
    return scan_chunked(x, s.delta, p.a(), s.b, s.c, p.d, chunk);
}

ag::Var scan(const ag::Var& x, const ag::Var& delta, const ag::Var& a, const ag::Var& b,
             const ag::Var& c, const ag::Var& d)
{
    const Tensor &xv = x.value(), &dv = delta.value(), &av = a.value(), &bv = b.value(),
                 &cv = c.value(), &Dv = d.value();
    const Dims dm = check(xv, dv, av, bv, cv, Dv);
    const bool need = x.requires_grad() || delta.requires_grad() || a.requires_grad() ||
                      b.requires_grad() || c.requires_grad() || d.requires_grad();

    const std::size_t lanes = static_cast<std::size_t>(dm.c) * dm.n;
    auto states = std::make_shared<std::vector<float>>(need ? lanes * dm.l : 0);
    Tensor y(xv.shape());
    std::vector<float> h(lanes, 0.0f);
    for (int t = 0; t < dm.l; ++t) {
        for (int ch = 0; ch < dm.c; ++ch) {
            const float dt = dv.at(t, ch), xs = xv.at(t, ch);
            float acc = 0.0f;
            for (int k = 0; k < dm.n; ++k) {
                const float a_bar = std::exp(dt * av.at(ch, k));
                const float b_bar = dt * bv.at(t, k);
                float& hs = h[ch * dm.n + k];
                hs = a_bar * hs + b_bar * xs;
                acc += cv.at(t, k) * hs;
            }
            y.at(t, ch) = acc + Dv[ch] * xs;
            check_step(y.at(t, ch), t);
        }
        if (need)
            std::copy(h.begin(), h.end(), states->begin() + static_cast<std::ptrdiff_t>(t * lanes));
    }

    return ag::make_node(std::move(y), {x, delta, a, b, c, d}, [dm, lanes, states](ag::Node& node) {
        const Tensor& g = node.grad;
        const Tensor &xv = node.parents[0]->value, &dv = node.parents[1]->value,
                     &av = node.parents[2]->value, &bv = node.parents[3]->value,
                     &cv = node.parents[4]->value, &Dv = node.parents[5]->value;
        std::vector<double> gx(xv.size(), 0.0), gdelta(dv.size(), 0.0), ga(av.size(), 0.0),
            gb(bv.size(), 0.0), gc(cv.size(), 0.0), gd(Dv.size(), 0.0), dh(lanes, 0.0);
        const std::vector<float>& hs = *states;
        for (int t = dm.l - 1; t >= 0; --t) {
            for (int ch = 0; ch < dm.c; ++ch) {
                const double dt = dv.at(t, ch), xs = xv.at(t, ch), gy = g.at(t, ch);
                gd[ch] += gy * xs;
                gx[t * dm.c + ch] += Dv[ch] * gy;
                for (int k = 0; k < dm.n; ++k) {
                    const std::size_t lane = static_cast<std::size_t>(ch) * dm.n + k;
                    const double ak = av.at(ch, k), bk = bv.at(t, k);
                    const double a_bar = std::exp(static_cast<float>(dt * ak));
                    const double h_t = hs[t * lanes + lane];
                    const double h_prev = t > 0 ? hs[(t - 1) * lanes + lane] : 0.0;
                    gc[t * dm.n + k] += gy * h_t;
                    const double dht = dh[lane] + cv.at(t, k) * gy;
                    const double g_abar = dht * h_prev;
                    const double g_bbar = dht * xs;
                    gx[t * dm.c + ch] += dht * dt * bk;
                    gdelta[t * dm.c + ch] += g_abar * a_bar * ak + g_bbar * bk;
                    ga[lane] += g_abar * a_bar * dt;
                    gb[t * dm.n + k] += g_bbar * dt;
                    dh[lane] = dht * a_bar;
                }
            }
        }
        const std::vector<double>* grads[] = {&gx, &gdelta, &ga, &gb, &gc, &gd};
        for (int p = 0; p < 6; ++p) {
            if (!node.parents[p]->requires_grad)
                continue;
            Tensor& buf = node.parents[p]->grad_buffer();
            for (std::size_t i = 0; i < buf.size(); ++i)
                buf[i] += static_cast<float>((*grads[p])[i]);
        }
    });
}

namespace {

ag::Var reverse_rows(const ag::Var& v)
{
    const int l = v.dim(0);
    const int w = static_cast<int>(v.value().size()) / std::max(l, 1);
    auto idx = std::make_shared<std::vector<int>>(v.value().size());
    for (int t = 0; t < l; ++t)
        for (int j = 0; j < w; ++j)
            (*idx)[t * w + j] = (l - 1 - t) * w + j;
    return ag::gather(v, idx, v.shape());
}

} // namespace

ag::Var bidirectional_scan(const ag::Var& x, const ag::Var& delta, const ag::Var& a,
                           const ag::Var& b, const ag::Var& c, const ag::Var& d)
{
    const ag::Var fwd = scan(x, delta, a, b, c, d);
    const ag::Var bwd = scan(reverse_rows(x), reverse_rows(delta), a, reverse_rows(b), reverse_rows(c), d);
    return ag::add(fwd, reverse_rows(bwd));
}

} // namespace mvsr::ssm
