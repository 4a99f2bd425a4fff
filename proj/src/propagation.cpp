#include "mambavsr/propagation.hpp"

#include "mambavsr/errors.hpp"

#include <algorithm>
#include <string>

namespace mvsr::prop {

namespace {

Tensor frame_of(const Tensor& stack, int i)
{
    const int h = stack.dim(2), w = stack.dim(3);
    const std::size_t per = static_cast<std::size_t>(2) * h * w;
    return Tensor(Shape{2, h, w}, std::vector<float>(stack.data() + i * per, stack.data() + (i + 1) * per));
}

Tensor reverse_frames(const Tensor& stack)
{
    Tensor out(stack.shape());
    const int t = stack.dim(0);
    const std::size_t per = stack.size() / t;
    for (int i = 0; i < t; ++i)
        std::copy(stack.data() + (t - 1 - i) * per, stack.data() + (t - i) * per, out.data() + i * per);
    return out;
}

} // namespace

void FlowSet::validate(int frames, int h, int w) const
{
    for (const auto* f : {&forward, &backward}) {
        if (!f->has_value())
            continue;
        if ((*f)->shape() != Shape{std::max(frames - 1, 0), 2, h, w})
            throw ShapeError("flows " + to_string((*f)->shape()) + " do not match [" +
                             std::to_string(frames - 1) + ",2," + std::to_string(h) + "," +
                             std::to_string(w) + "]");
        require_finite(**f, "flow");
    }
}

FlowSet reversed(const FlowSet& flows)
{
    FlowSet r;
    if (flows.backward)
        r.forward = reverse_frames(*flows.backward);
    if (flows.forward)
        r.backward = reverse_frames(*flows.forward);
    return r;
}

std::string stage_prefix(int stage) { return "stage" + std::to_string(stage) + "."; }

std::vector<ag::Var> propagate_stage(const std::vector<ag::Var>& inputs, const FlowSet& flows,
                                     Direction dir, int stage, const ScanOrder& order,
                                     const PropagationConfig& cfg, const ParamSource& p)
{
    const int t = static_cast<int>(inputs.size());
    if (t < 1)
        throw ShapeError("propagate: empty clip");
    const int c = inputs[0].dim(0), h = inputs[0].dim(1), w = inputs[0].dim(2);
    flows.validate(t, h, w);

    std::vector<int> seq(t);
    for (int i = 0; i < t; ++i)
        seq[i] = dir == Direction::forward ? i : t - 1 - i;

    // Flow that warps the frame one step earlier in processing order onto
    // frame `at`; nullopt means zero motion.
    auto step_flow = [&](int at) -> std::optional<Tensor> {
        if (dir == Direction::forward)
            return flows.forward ? std::optional<Tensor>(frame_of(*flows.forward, at - 1)) : std::nullopt;
        return flows.backward ? std::optional<Tensor>(frame_of(*flows.backward, at)) : std::nullopt;
    };

    const std::string prefix = stage_prefix(stage);
    const ag::Var zeros = ag::constant(Tensor(Shape{c, h, w}));
    std::vector<ag::Var> out(t);
    for (int i = 0; i < t; ++i) {
        const int cur = seq[i];
        ag::Var p1 = zeros, p2 = zeros;
        if (i >= 1) {
            const auto f1 = step_flow(cur);
            p1 = f1 ? ag::bilinear_warp(out[seq[i - 1]], *f1) : out[seq[i - 1]];
            if (i >= 2) {
                const auto f0 = step_flow(seq[i - 1]);
                std::optional<Tensor> f2;
                if (f1 && f0) {
                    Tensor composed = bilinear_warp(*f0, *f1);
                    for (std::size_t k = 0; k < composed.size(); ++k)
                        composed[k] += (*f1)[k];
                    f2 = std::move(composed);
                } else if (f1 || f0) {
                    f2 = f1 ? *f1 : *f0;
                }
                p2 = f2 ? ag::bilinear_warp(out[seq[i - 2]], *f2) : out[seq[i - 2]];
            }
        }
        const ag::Var fused = ag::add(
            inputs[cur], ag::conv2d(ag::concat0({inputs[cur], p1, p2}), p.get(prefix + "fuse.weight"),
                                    p.get(prefix + "fuse.bias"), 1, 1));

        std::vector<ag::Var> window;
        int current = 0;
        if (cfg.scan_mode == ScanMode::content_aware) {
            window = {inputs[seq[std::max(i - 1, 0)]], fused, inputs[seq[std::min(i + 1, t - 1)]]};
            current = 1;
        } else {
            window = {fused};
        }
        for (int b = 0; b < cfg.blocks_per_stage; ++b)
            window = block::glssb_forward(window, current, order, cfg.block, p,
                                          prefix + "block" + std::to_string(b) + ".");
        out[cur] = window[current];
    }
    return out;
}

std::vector<ag::Var> propagate(const std::vector<ag::Var>& features, const FlowSet& flows,
                               const ScanOrder& order, const PropagationConfig& cfg,
                               const ParamSource& p)
{
    std::vector<ag::Var> x = features;
    for (int s = 0; s < cfg.stages; ++s)
        x = propagate_stage(x, flows, stage_direction(s), s, order, cfg, p);
    return x;
}

std::vector<ParamSpec> propagation_param_specs(const PropagationConfig& cfg)
{
    std::vector<ParamSpec> specs;
    const int c = cfg.channels;
    for (int s = 0; s < cfg.stages; ++s) {
        const std::string prefix = stage_prefix(s);
        specs.push_back({prefix + "fuse.weight", {c, 3 * c, 3, 3}, Init::zeros});
        specs.push_back({prefix + "fuse.bias", {c}, Init::zeros});
        for (int b = 0; b < cfg.blocks_per_stage; ++b) {
            auto more = block::block_param_specs(cfg.block, prefix + "block" + std::to_string(b) + ".");
            specs.insert(specs.end(), more.begin(), more.end());
        }
    }
    return specs;
}

} // namespace mvsr::prop
