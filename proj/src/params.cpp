#include "mambavsr/params.hpp"

#include "mambavsr/errors.hpp"

#include <cmath>

namespace mvsr {

Tensor init_tensor(const ParamSpec& spec, Rng& rng)
{
    Tensor t(spec.shape);
    switch (spec.init) {
    case Init::zeros:
        break;
    case Init::ones:
        t.fill(1.0f);
        break;
    case Init::trunc_normal:
        for (auto& v : t.values())
            v = static_cast<float>(rng.truncated_normal(0.02));
        break;
    case Init::fan_in_uniform: {
        const double fan_in = static_cast<double>(t.size()) / spec.shape[0];
        const double bound = 1.0 / std::sqrt(fan_in);
        for (auto& v : t.values())
            v = static_cast<float>(rng.uniform(-bound, bound));
        break;
    }
    case Init::a_log:
        if (t.rank() != 2)
            throw ShapeError("init a_log: expected [C,N] for " + spec.name);
        for (int c = 0; c < t.dim(0); ++c)
            for (int n = 0; n < t.dim(1); ++n)
                t.at(c, n) = std::log(static_cast<float>(n + 1));
        break;
    case Init::dt_bias:
        t.fill(std::log(std::expm1(0.1f)));
        break;
    }
    return t;
}

ParamSource ParamSource::constants(const ag::NamedTensors& tensors)
{
    ag::NamedVars vars;
    for (const auto& [name, t] : tensors)
        vars.emplace(name, ag::constant(t));
    return ParamSource(std::move(vars));
}

const ag::Var& ParamSource::get(const std::string& name) const
{
    auto it = vars_.find(name);
    if (it == vars_.end())
        throw ModelMismatchError("missing parameter '" + name + "'");
    return it->second;
}

} // namespace mvsr
