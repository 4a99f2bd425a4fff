#pragma once

#include "mambavsr/ops.hpp"
#include "mambavsr/tensor.hpp"

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

// Minimal tape-free reverse-mode differentiation over a closed op set.
//
// Each Var owns a node holding its forward value. Nodes created from at least
// one parent that requires a gradient record their parents and a backward
// closure; everything else is a plain value and costs nothing extra. Calling
// backward() on a scalar walks the recorded DAG in reverse topological order.
//
// Ops outside this header (the selective scan, for one) extend the set via
// make_node().
namespace mvsr::ag {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward;

    // Zero-initialized on first use.
    Tensor& grad_buffer();
};

class Var {
public:
    Var() = default;
    explicit Var(NodePtr node) : node_(std::move(node)) {}

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Tensor& value() const { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    int dim(int axis) const { return node_->value.dim(axis); }
    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
    // Empty tensor if no gradient reached this node.
    const Tensor& grad() const { return node_->grad; }
    const NodePtr& node() const noexcept { return node_; }

private:
    NodePtr node_;
};

Var constant(Tensor t);
Var parameter(Tensor t);

// Builds a result node. `backward` is dropped when no parent requires grad.
// Inside `backward`, read node.grad and accumulate into
// node.parents[i]->grad_buffer() for parents that require grad.
Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward);

// Seeds d(root)/d(root) = 1 and propagates. root must hold one element.
void backward(const Var& root);

using NamedTensors = std::map<std::string, Tensor>;
using NamedVars = std::map<std::string, Var>;

struct GradResult {
    float value = 0.0f;
    NamedTensors grads;
};

// Evaluates f on leaf parameters built from `params` and returns the value of
// f together with d f / d param for every entry (zeros where f does not
// depend on a parameter).
GradResult grad(const std::function<Var(const NamedVars&)>& f, const NamedTensors& params);

// ---------------------------------------------------------------------------
// Differentiable ops.
// ---------------------------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, float s);
Var neg(const Var& a);
Var exp(const Var& a);
Var softplus(const Var& a);
Var silu(const Var& a);
Var gelu(const Var& a);
Var leaky_relu(const Var& a, float slope);

// b has the shape of the trailing dimensions of a and is broadcast over the
// leading ones.
Var add_broadcast(const Var& a, const Var& b);
// x: [C, ...], g: [C]; scales every element of channel c by g[c].
Var scale_channels(const Var& x, const Var& g);

// bias may be an undefined Var.
Var conv2d(const Var& x, const Var& w, const Var& bias, int stride, int padding);
Var conv2d_any(const Var& x, const Var& w, const Var& bias, int stride, int padding);
Var linear(const Var& x, const Var& w, const Var& bias);
Var bmm(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);
Var softmax_last(const Var& x);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, float eps);

using IndexMap = std::shared_ptr<const std::vector<int>>;
Var gather(const Var& x, IndexMap index, Shape out_shape);
Var reshape(const Var& x, Shape shape);
Var concat0(const std::vector<Var>& parts);
Var slice0(const Var& x, int begin, int end);
Var pixel_shuffle(const Var& x, int r);

// Differentiable in x only; the flow is data.
Var bilinear_warp(const Var& x, const Tensor& flow);

Var sum(const Var& x);
Var charbonnier_loss(const Var& sr, const Tensor& hr, const CharbonnierConfig& cfg = {});
Var charbonnier_mean(const Var& sr, const Tensor& hr, const CharbonnierConfig& cfg = {});

} // namespace mvsr::ag
