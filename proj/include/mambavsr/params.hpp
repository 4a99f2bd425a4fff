#pragma once

#include "mambavsr/autograd.hpp"
#include "mambavsr/rng.hpp"
#include "mambavsr/tensor.hpp"

#include <string>
#include <vector>

namespace mvsr {

enum class Init {
    zeros,
    ones,
    trunc_normal,   // std 0.02, clipped at 2 std
    fan_in_uniform, // U(-1/sqrt(fan_in), 1/sqrt(fan_in)), fan_in = numel / dim(0)
    a_log,          // row n-th entry log(n+1)
    dt_bias,        // softplus^-1(0.1)
};

struct ParamSpec {
    std::string name;
    Shape shape;
    Init init = Init::zeros;
};

Tensor init_tensor(const ParamSpec& spec, Rng& rng);

// Named parameter lookup used by the forward passes.
class ParamSource {
public:
    explicit ParamSource(ag::NamedVars vars) : vars_(std::move(vars)) {}
    static ParamSource constants(const ag::NamedTensors& tensors);

    // Throws ModelMismatchError if `name` is absent.
    const ag::Var& get(const std::string& name) const;
    bool has(const std::string& name) const { return vars_.count(name) != 0; }
    const ag::NamedVars& vars() const noexcept { return vars_; }

private:
    ag::NamedVars vars_;
};

} // namespace mvsr
