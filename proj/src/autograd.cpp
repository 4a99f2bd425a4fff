#include "mambavsr/autograd.hpp"

#include "mambavsr/errors.hpp"

#include <cmath>
#include <unordered_set>
#include <utility>

namespace mvsr::ag {

Tensor& Node::grad_buffer()
{
    if (grad.empty() && value.size() != 0)
        grad = Tensor(value.shape());
    return grad;
}

Var constant(Tensor t)
{
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    return Var(std::move(n));
}

Var parameter(Tensor t)
{
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    n->requires_grad = true;
    return Var(std::move(n));
}

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn)
{
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    for (const auto& p : parents)
        if (p.requires_grad())
            n->requires_grad = true;
    if (n->requires_grad) {
        n->parents.reserve(parents.size());
        for (const auto& p : parents)
            n->parents.push_back(p.node());
        n->backward = std::move(backward_fn);
    }
    return Var(std::move(n));
}

void backward(const Var& root)
{
    if (!root.defined() || root.value().size() != 1)
        throw ShapeError("backward: root must be a single-element tensor");
    if (!root.requires_grad())
        return;

    // Iterative post-order DFS; graphs from unrolled recurrences get deep.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p && p->requires_grad && !p->parents.empty() && visited.insert(p).second)
                stack.emplace_back(p, 0);
            continue;
        }
        order.push_back(node);
        stack.pop_back();
    }

    root.node()->grad_buffer()[0] += 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && !n->grad.empty())
            n->backward(*n);
    }
}

GradResult grad(const std::function<Var(const NamedVars&)>& f, const NamedTensors& params)
{
    NamedVars vars;
    for (const auto& [name, t] : params)
        vars.emplace(name, parameter(t));
    const Var out = f(vars);
    if (out.value().size() != 1)
        throw ShapeError("grad: function must return a scalar");
    backward(out);
    GradResult r;
    r.value = out.value()[0];
    for (const auto& [name, v] : vars)
        r.grads.emplace(name, v.grad().empty() ? Tensor(v.shape()) : v.grad());
    return r;
}

namespace {

bool wants(const Node& n, std::size_t i)
{
    return n.parents[i] && n.parents[i]->requires_grad;
}

template <typename F, typename DF>
Var unary(const Var& a, F f, DF df)
{
    Tensor out(a.shape());
    const Tensor& x = a.value();
    for (std::size_t i = 0; i < x.size(); ++i)
        out[i] = f(x[i]);
    require_finite(out, "elementwise op");
    return make_node(std::move(out), {a}, [df](Node& n) {
        const Tensor& x = n.parents[0]->value;
        Tensor& g = n.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < x.size(); ++i)
            g[i] += n.grad[i] * df(x[i]);
    });
}

void accumulate(Node& parent, const Tensor& contribution)
{
    Tensor& g = parent.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
        g[i] += contribution[i];
}

} // namespace

Var add(const Var& a, const Var& b)
{
    require_same_shape(a.value(), b.value(), "add");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a.value()[i] + b.value()[i];
    return make_node(std::move(out), {a, b}, [](Node& n) {
        for (std::size_t p = 0; p < 2; ++p)
            if (wants(n, p))
                accumulate(*n.parents[p], n.grad);
    });
}

Var sub(const Var& a, const Var& b)
{
    require_same_shape(a.value(), b.value(), "sub");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a.value()[i] - b.value()[i];
    return make_node(std::move(out), {a, b}, [](Node& n) {
        if (wants(n, 0))
            accumulate(*n.parents[0], n.grad);
        if (wants(n, 1)) {
            Tensor& g = n.parents[1]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] -= n.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b)
{
    require_same_shape(a.value(), b.value(), "mul");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a.value()[i] * b.value()[i];
    return make_node(std::move(out), {a, b}, [](Node& n) {
        const Tensor& av = n.parents[0]->value;
        const Tensor& bv = n.parents[1]->value;
        if (wants(n, 0)) {
            Tensor& g = n.parents[0]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] += n.grad[i] * bv[i];
        }
        if (wants(n, 1)) {
            Tensor& g = n.parents[1]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] += n.grad[i] * av[i];
        }
    });
}

Var scale(const Var& a, float s)
{
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a.value()[i] * s;
    return make_node(std::move(out), {a}, [s](Node& n) {
        Tensor& g = n.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += n.grad[i] * s;
    });
}

Var neg(const Var& a)
{
    return scale(a, -1.0f);
}

Var exp(const Var& a)
{
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = std::exp(a.value()[i]);
    require_finite(out, "exp");
    return make_node(std::move(out), {a}, [](Node& n) {
        Tensor& g = n.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += n.grad[i] * n.value[i];
    });
}

Var softplus(const Var& a)
{
    return unary(a, [](float x) { return mvsr::softplus(x); }, [](float x) { return mvsr::sigmoid(x); });
}

Var silu(const Var& a)
{
    return unary(a, [](float x) { return mvsr::silu(x); }, [](float x) { return mvsr::silu_grad(x); });
}

Var gelu(const Var& a)
{
    return unary(a, [](float x) { return mvsr::gelu(x); }, [](float x) { return mvsr::gelu_grad(x); });
}

Var leaky_relu(const Var& a, float slope)
{
    return unary(
        a, [slope](float x) { return mvsr::leaky_relu(x, slope); },
        [slope](float x) { return x >= 0.0f ? 1.0f : slope; });
}

Var add_broadcast(const Var& a, const Var& b)
{
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (bs.size() > as.size() || !std::equal(bs.rbegin(), bs.rend(), as.rbegin()))
        throw ShapeError("add_broadcast: " + to_string(bs) + " is not a suffix of " + to_string(as));
    const std::size_t inner = b.value().size();
    Tensor out(as);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a.value()[i] + b.value()[i % inner];
    return make_node(std::move(out), {a, b}, [inner](Node& n) {
        if (wants(n, 0))
            accumulate(*n.parents[0], n.grad);
        if (wants(n, 1)) {
            Tensor& g = n.parents[1]->grad_buffer();
            for (std::size_t i = 0; i < n.grad.size(); ++i)
                g[i % inner] += n.grad[i];
        }
    });
}

Var scale_channels(const Var& x, const Var& g)
{
    const int c = x.dim(0);
    if (g.value().size() != static_cast<std::size_t>(c))
        throw ShapeError("scale_channels: gain length must equal channel count");
    const std::size_t plane = x.value().size() / c;
    Tensor out(x.shape());
    for (int ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < plane; ++i)
            out[ch * plane + i] = x.value()[ch * plane + i] * g.value()[ch];
    return make_node(std::move(out), {x, g}, [c, plane](Node& n) {
        const Tensor& xv = n.parents[0]->value;
        const Tensor& gv = n.parents[1]->value;
        if (wants(n, 0)) {
            Tensor& gx = n.parents[0]->grad_buffer();
            for (int ch = 0; ch < c; ++ch)
                for (std::size_t i = 0; i < plane; ++i)
                    gx[ch * plane + i] += n.grad[ch * plane + i] * gv[ch];
        }
        if (wants(n, 1)) {
            Tensor& gg = n.parents[1]->grad_buffer();
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (std::size_t i = 0; i < plane; ++i)
                    acc += static_cast<double>(n.grad[ch * plane + i]) * xv[ch * plane + i];
                gg[ch] += static_cast<float>(acc);
            }
        }
    });
}

namespace {

Var conv_impl(const Var& x, const Var& w, const Var& bias, int stride, int padding, bool any_k)
{
    const Tensor empty;
    const Tensor& bv = bias.defined() ? bias.value() : empty;
    Tensor out = any_k ? mvsr::detail::conv2d_any(x.value(), w.value(), bv, stride, padding)
                       : mvsr::conv2d(x.value(), w.value(), bv, stride, padding);
    std::vector<Var> parents{x, w};
    if (bias.defined())
        parents.push_back(bias);
    return make_node(std::move(out), std::move(parents), [stride, padding](Node& n) {
        const Tensor& xv = n.parents[0]->value;
        const Tensor& wv = n.parents[1]->value;
        if (wants(n, 0))
            accumulate(*n.parents[0],
                       mvsr::detail::conv2d_grad_input(n.grad, wv, xv.shape(), stride, padding));
        if (wants(n, 1))
            accumulate(*n.parents[1],
                       mvsr::detail::conv2d_grad_weight(n.grad, xv, wv.shape(), stride, padding));
        if (n.parents.size() > 2 && wants(n, 2)) {
            Tensor& gb = n.parents[2]->grad_buffer();
            const int cout = n.grad.dim(0);
            const std::size_t plane = n.grad.size() / cout;
            for (int o = 0; o < cout; ++o) {
                double acc = 0.0;
                for (std::size_t i = 0; i < plane; ++i)
                    acc += n.grad[o * plane + i];
                gb[o] += static_cast<float>(acc);
            }
        }
    });
}

} // namespace

Var conv2d(const Var& x, const Var& w, const Var& bias, int stride, int padding)
{
    return conv_impl(x, w, bias, stride, padding, false);
}

Var conv2d_any(const Var& x, const Var& w, const Var& bias, int stride, int padding)
{
    return conv_impl(x, w, bias, stride, padding, true);
}

Var linear(const Var& x, const Var& w, const Var& bias)
{
    const Tensor empty;
    Tensor out = mvsr::linear(x.value(), w.value(), bias.defined() ? bias.value() : empty);
    std::vector<Var> parents{x, w};
    if (bias.defined())
        parents.push_back(bias);
    return make_node(std::move(out), std::move(parents), [](Node& n) {
        const Tensor& xv = n.parents[0]->value;
        const Tensor& wv = n.parents[1]->value;
        const int rows = xv.dim(0), cin = xv.dim(1), cout = wv.dim(0);
        if (wants(n, 0)) {
            Tensor& gx = n.parents[0]->grad_buffer();
            for (int r = 0; r < rows; ++r)
                for (int o = 0; o < cout; ++o) {
                    const float g = n.grad.at(r, o);
                    if (g == 0.0f)
                        continue;
                    const float* wp = wv.data() + static_cast<std::size_t>(o) * cin;
                    float* gp = gx.data() + static_cast<std::size_t>(r) * cin;
                    for (int i = 0; i < cin; ++i)
                        gp[i] += g * wp[i];
                }
        }
        if (wants(n, 1)) {
            Tensor& gw = n.parents[1]->grad_buffer();
            for (int o = 0; o < cout; ++o)
                for (int i = 0; i < cin; ++i) {
                    double acc = 0.0;
                    for (int r = 0; r < rows; ++r)
                        acc += static_cast<double>(n.grad.at(r, o)) * xv.at(r, i);
                    gw.at(o, i) += static_cast<float>(acc);
                }
        }
        if (n.parents.size() > 2 && wants(n, 2)) {
            Tensor& gb = n.parents[2]->grad_buffer();
            for (int o = 0; o < cout; ++o) {
                double acc = 0.0;
                for (int r = 0; r < rows; ++r)
                    acc += n.grad.at(r, o);
                gb[o] += static_cast<float>(acc);
            }
        }
    });
}

Var bmm(const Var& a, const Var& b, bool trans_a, bool trans_b)
{
    Tensor out = mvsr::bmm(a.value(), b.value(), trans_a, trans_b);
    return make_node(std::move(out), {a, b}, [trans_a, trans_b](Node& n) {
        const Tensor& av = n.parents[0]->value;
        const Tensor& bv = n.parents[1]->value;
        // C = op(A) op(B)
        if (wants(n, 0)) {
            // d op(A) = dC op(B)^T
            Tensor g = trans_a ? mvsr::bmm(bv, n.grad, trans_b, true)   // dA = op(B) dC^T
                               : mvsr::bmm(n.grad, bv, false, !trans_b);
            accumulate(*n.parents[0], g);
        }
        if (wants(n, 1)) {
            // d op(B) = op(A)^T dC
            Tensor g = trans_b ? mvsr::bmm(n.grad, av, true, trans_a)   // dB = dC^T op(A)
                               : mvsr::bmm(av, n.grad, !trans_a, false);
            accumulate(*n.parents[1], g);
        }
    });
}

Var softmax_last(const Var& x)
{
    Tensor out = mvsr::softmax(x.value(), -1);
    return make_node(std::move(out), {x}, [](Node& n) {
        const int c = n.value.dim(-1);
        const std::size_t rows = n.value.size() / c;
        Tensor& gx = n.parents[0]->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
            const float* y = n.value.data() + r * c;
            const float* gy = n.grad.data() + r * c;
            double dot = 0.0;
            for (int j = 0; j < c; ++j)
                dot += static_cast<double>(gy[j]) * y[j];
            float* g = gx.data() + r * c;
            for (int j = 0; j < c; ++j)
                g[j] += y[j] * static_cast<float>(gy[j] - dot);
        }
    });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, float eps)
{
    Tensor out = mvsr::layer_norm(x.value(), gamma.value(), beta.value(), eps);
    return make_node(std::move(out), {x, gamma, beta}, [eps](Node& n) {
        const Tensor& xv = n.parents[0]->value;
        const Tensor& gv = n.parents[1]->value;
        const int c = xv.dim(-1);
        const std::size_t rows = xv.size() / c;
        std::vector<double> xhat(c), dxhat(c);
        Tensor* gx = wants(n, 0) ? &n.parents[0]->grad_buffer() : nullptr;
        Tensor* gg = wants(n, 1) ? &n.parents[1]->grad_buffer() : nullptr;
        Tensor* gb = wants(n, 2) ? &n.parents[2]->grad_buffer() : nullptr;
        for (std::size_t r = 0; r < rows; ++r) {
            const float* xp = xv.data() + r * c;
            const float* gy = n.grad.data() + r * c;
            double mean = 0.0;
            for (int j = 0; j < c; ++j)
                mean += xp[j];
            mean /= c;
            double var = 0.0;
            for (int j = 0; j < c; ++j)
                var += (xp[j] - mean) * (xp[j] - mean);
            var /= c;
            const double inv = 1.0 / std::sqrt(var + eps);
            double m1 = 0.0, m2 = 0.0;
            for (int j = 0; j < c; ++j) {
                xhat[j] = (xp[j] - mean) * inv;
                dxhat[j] = static_cast<double>(gy[j]) * gv[j];
                m1 += dxhat[j];
                m2 += dxhat[j] * xhat[j];
                if (gg)
                    (*gg)[j] += static_cast<float>(gy[j] * xhat[j]);
                if (gb)
                    (*gb)[j] += gy[j];
            }
            m1 /= c;
            m2 /= c;
            if (gx) {
                float* g = gx->data() + r * c;
                for (int j = 0; j < c; ++j)
                    g[j] += static_cast<float>(inv * (dxhat[j] - m1 - xhat[j] * m2));
            }
        }
    });
}

Var gather(const Var& x, IndexMap index, Shape out_shape)
{
    Tensor out = mvsr::gather(x.value(), *index, std::move(out_shape));
    return make_node(std::move(out), {x}, [index](Node& n) {
        Tensor& g = n.parents[0]->grad_buffer();
        const auto& idx = *index;
        for (std::size_t i = 0; i < idx.size(); ++i)
            if (idx[i] >= 0)
                g[static_cast<std::size_t>(idx[i])] += n.grad[i];
    });
}

Var reshape(const Var& x, Shape shape)
{
    Tensor out = x.value().reshape(std::move(shape));
    return make_node(std::move(out), {x}, [](Node& n) { accumulate(*n.parents[0], n.grad); });
}

Var concat0(const std::vector<Var>& parts)
{
    if (parts.empty())
        throw ShapeError("concat0: no inputs");
    Shape shape = parts[0].shape();
    int total = 0;
    for (const auto& p : parts) {
        Shape tail(p.shape().begin() + 1, p.shape().end());
        if (!std::equal(tail.begin(), tail.end(), shape.begin() + 1, shape.end()) ||
            p.shape().size() != shape.size())
            throw ShapeError("concat0: trailing shapes differ");
        total += p.dim(0);
    }
    shape[0] = total;
    Tensor out(shape);
    std::size_t off = 0;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        offsets.push_back(off);
        std::copy(p.value().values().begin(), p.value().values().end(), out.data() + off);
        off += p.value().size();
    }
    return make_node(std::move(out), parts, [offsets](Node& n) {
        for (std::size_t k = 0; k < n.parents.size(); ++k) {
            if (!wants(n, k))
                continue;
            Tensor& g = n.parents[k]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] += n.grad[offsets[k] + i];
        }
    });
}

Var slice0(const Var& x, int begin, int end)
{
    if (begin < 0 || end > x.dim(0) || begin >= end)
        throw ShapeError("slice0: invalid range");
    Shape shape = x.shape();
    shape[0] = end - begin;
    const std::size_t inner = x.value().size() / x.dim(0);
    Tensor out(shape);
    std::copy(x.value().data() + begin * inner, x.value().data() + end * inner, out.data());
    const std::size_t off = begin * inner;
    return make_node(std::move(out), {x}, [off](Node& n) {
        Tensor& g = n.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            g[off + i] += n.grad[i];
    });
}

Var pixel_shuffle(const Var& x, int r)
{
    auto idx = std::make_shared<const std::vector<int>>(mvsr::pixel_shuffle_index(x.shape(), r));
    return gather(x, idx, Shape{x.dim(0) / (r * r), x.dim(1) * r, x.dim(2) * r});
}

Var bilinear_warp(const Var& x, const Tensor& flow)
{
    Tensor out = mvsr::bilinear_warp(x.value(), flow);
    return make_node(std::move(out), {x}, [flow](Node& n) {
        accumulate(*n.parents[0],
                   mvsr::detail::bilinear_warp_grad_input(n.grad, flow, n.parents[0]->value.shape()));
    });
}

Var sum(const Var& x)
{
    double acc = 0.0;
    for (float v : x.value().values())
        acc += v;
    return make_node(Tensor::scalar(static_cast<float>(acc)), {x}, [](Node& n) {
        Tensor& g = n.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += n.grad[0];
    });
}

Var charbonnier_loss(const Var& sr, const Tensor& hr, const CharbonnierConfig& cfg)
{
    const float loss = mvsr::charbonnier_loss(sr.value(), hr, cfg);
    return make_node(Tensor::scalar(loss), {sr}, [hr, loss](Node& n) {
        const Tensor& s = n.parents[0]->value;
        Tensor& g = n.parents[0]->grad_buffer();
        const double k = static_cast<double>(n.grad[0]) / loss;
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += static_cast<float>(k * (static_cast<double>(s[i]) - hr[i]));
    });
}

Var charbonnier_mean(const Var& sr, const Tensor& hr, const CharbonnierConfig& cfg)
{
    const float loss = mvsr::charbonnier_mean(sr.value(), hr, cfg);
    const double eps2 = static_cast<double>(cfg.epsilon) * cfg.epsilon;
    return make_node(Tensor::scalar(loss), {sr}, [hr, eps2](Node& n) {
        const Tensor& s = n.parents[0]->value;
        Tensor& g = n.parents[0]->grad_buffer();
        const double k = static_cast<double>(n.grad[0]) / static_cast<double>(s.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double d = static_cast<double>(s[i]) - hr[i];
            g[i] += static_cast<float>(k * d / std::sqrt(d * d + eps2));
        }
    });
}

} // namespace mvsr::ag
