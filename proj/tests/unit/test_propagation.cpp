#include "mambavsr/errors.hpp"
#include "mambavsr/propagation.hpp"
#include "oracles.hpp"

#include <doctest.h>

using namespace mvsr;
using namespace mvsr::prop;

namespace {

PropagationConfig small_config(ScanMode mode, int stages = 2, int blocks = 1)
{
    PropagationConfig cfg;
    cfg.channels = 8;
    cfg.stages = stages;
    cfg.blocks_per_stage = blocks;
    cfg.scan_mode = mode;
    cfg.block.window = {8, 4, 2, 2};
    cfg.block.glssm.channels = 8;
    cfg.block.glssm.state_dim = 4;
    cfg.block.glssm.patch = 4;
    cfg.block.glssm.radius = 1;
    cfg.block.glssm.align = mode == ScanMode::content_aware;
    return cfg;
}

ag::NamedTensors make_params(const PropagationConfig& cfg, std::uint64_t seed, double rand_scale = 0.0)
{
    Rng rng(seed);
    ag::NamedTensors out;
    for (const auto& s : propagation_param_specs(cfg))
        out.emplace(s.name, init_tensor(s, rng));
    if (rand_scale > 0.0)
        for (auto& [name, t] : out)
            if (name.find("A_log") == std::string::npos && name.find("dt.bias") == std::string::npos)
                for (auto& v : t.values())
                    v = static_cast<float>(rng.uniform(-rand_scale, rand_scale));
    return out;
}

std::vector<ag::Var> vars(const std::vector<Tensor>& ts)
{
    std::vector<ag::Var> out;
    for (const auto& t : ts)
        out.push_back(ag::constant(t));
    return out;
}

std::vector<Tensor> random_clip(Rng& rng, int t, int c, int h, int w)
{
    std::vector<Tensor> out;
    for (int i = 0; i < t; ++i)
        out.push_back(oracle::random_tensor(rng, {c, h, w}));
    return out;
}

Tensor uniform_flow(int t, int h, int w, float dx, float dy)
{
    Tensor f(Shape{t, 2, h, w});
    for (int i = 0; i < t; ++i)
        for (int k = 0; k < h * w; ++k) {
            f[(i * 2) * h * w + k] = dx;
            f[(i * 2 + 1) * h * w + k] = dy;
        }
    return f;
}

// Column shift with border clamping: out[c,y,x] = in[c,y,min(x+s,W-1)].
std::vector<double> shift_cols(const std::vector<double>& in, int c, int h, int w, int s)
{
    std::vector<double> out(in.size());
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                out[(ch * h + y) * w + x] = in[(ch * h + y) * w + std::min(x + s, w - 1)];
    return out;
}

} // namespace

TEST_CASE("stage directions alternate, starting backward")
{
    CHECK(stage_direction(0) == Direction::backward);
    CHECK(stage_direction(1) == Direction::forward);
    CHECK(stage_direction(2) == Direction::backward);
}

TEST_CASE("first- and second-order terms against a recurrence oracle")
{
    // No blocks; the fuse conv picks one propagated input through its centre
    // tap, so each stage reduces to out_i = in_i + warp(out_{i-k}).
    Rng rng(1);
    const int t = 4, c = 2, h = 3, w = 6;
    for (int order : {1, 2}) {
        PropagationConfig cfg = small_config(ScanMode::raster, 1, 0);
        cfg.channels = c;
        auto p = make_params(cfg, 2);
        for (int ch = 0; ch < c; ++ch)
            p["stage0.fuse.weight"].at(ch, order * c + ch, 1, 1) = 1.0f;
        const auto clip = random_clip(rng, t, c, h, w);
        FlowSet flows;
        flows.forward = uniform_flow(t - 1, h, w, 1.0f, 0.0f);
        const auto out = propagate_stage(vars(clip), flows, Direction::forward, 0, raster_order(h, w), cfg,
                                         ParamSource::constants(p));
        std::vector<std::vector<double>> ref;
        for (int i = 0; i < t; ++i) {
            auto cur = oracle::to_f64(clip[i]);
            if (i >= order) {
                const auto prev = shift_cols(ref[i - order], c, h, w, order);
                for (std::size_t k = 0; k < cur.size(); ++k)
                    cur[k] += prev[k];
            }
            ref.push_back(cur);
            CHECK(oracle::max_abs_diff(ref[i], out[i].value()) <= 1e-5);
        }
    }
}

TEST_CASE("absent flows equal explicit zero flows")
{
    Rng rng(3);
    const auto cfg = small_config(ScanMode::raster);
    const auto p = ParamSource::constants(make_params(cfg, 4, 0.2));
    const auto clip = random_clip(rng, 3, 8, 8, 8);
    FlowSet zero;
    zero.forward = Tensor(Shape{2, 2, 8, 8});
    zero.backward = Tensor(Shape{2, 2, 8, 8});
    const auto order = windowed_order(raster_order(8, 8), 4);
    const auto a = propagate(vars(clip), FlowSet{}, order, cfg, p);
    const auto b = propagate(vars(clip), zero, order, cfg, p);
    for (int i = 0; i < 3; ++i)
        CHECK(identical(a[i].value(), b[i].value()));
}

TEST_CASE("single frame and identical frames")
{
    Rng rng(5);
    for (auto mode : {ScanMode::raster, ScanMode::content_aware}) {
        const auto cfg = small_config(mode);
        const auto p = ParamSource::constants(make_params(cfg, 6));
        const auto order = windowed_order(raster_order(8, 8), 4);
        const Tensor x = oracle::random_tensor(rng, {8, 8, 8});

        const auto one = propagate(vars({x}), FlowSet{}, order, cfg, p);
        REQUIRE(one.size() == 1);
        CHECK(one[0].shape() == Shape{8, 8, 8});
        CHECK(one[0].value().all_finite());

        // With the initial (zero) fusion every frame of a static clip comes out
        // the same, whatever its position.
        const auto many = propagate(vars({x, x, x, x}), FlowSet{}, order, cfg, p);
        for (int i = 1; i < 4; ++i)
            CHECK(identical(many[i].value(), many[0].value()));
    }
}

TEST_CASE("backward stage mirrors the forward stage on the reversed clip")
{
    Rng rng(7);
    for (auto mode : {ScanMode::raster, ScanMode::content_aware}) {
        const auto cfg = small_config(mode, 1);
        const auto p = ParamSource::constants(make_params(cfg, 8, 0.2));
        const auto order = windowed_order(raster_order(8, 8), 4);
        const auto clip = random_clip(rng, 4, 8, 8, 8);
        FlowSet flows;
        flows.forward = oracle::random_tensor(rng, {3, 2, 8, 8}, -1.5, 1.5);
        flows.backward = oracle::random_tensor(rng, {3, 2, 8, 8}, -1.5, 1.5);

        const auto bwd = propagate_stage(vars(clip), flows, Direction::backward, 0, order, cfg, p);
        const std::vector<Tensor> rclip(clip.rbegin(), clip.rend());
        const auto fwd = propagate_stage(vars(rclip), reversed(flows), Direction::forward, 0, order, cfg, p);
        for (int i = 0; i < 4; ++i)
            CHECK(identical(bwd[i].value(), fwd[3 - i].value()));
    }
}

TEST_CASE("stage count and flows change the output")
{
    Rng rng(9);
    const auto clip = random_clip(rng, 3, 8, 8, 8);
    const auto order = windowed_order(raster_order(8, 8), 4);
    const auto one = small_config(ScanMode::raster, 1), two = small_config(ScanMode::raster, 2);
    const auto p2 = make_params(two, 10, 0.2);
    const auto a = propagate(vars(clip), FlowSet{}, order, one, ParamSource::constants(p2));
    const auto b = propagate(vars(clip), FlowSet{}, order, two, ParamSource::constants(p2));
    CHECK(max_abs_diff(a[1].value(), b[1].value()) > 1e-4);

    FlowSet moved;
    moved.forward = uniform_flow(2, 8, 8, 1.0f, 0.5f);
    const auto m = propagate(vars(clip), moved, order, two, ParamSource::constants(p2));
    CHECK(max_abs_diff(m[2].value(), b[2].value()) > 1e-4);
    // Forward flows never reach frame 0: the backward stage ignores them and
    // frame 0 opens the forward stage.
    CHECK(identical(m[0].value(), b[0].value()));
}

TEST_CASE("flow shape errors")
{
    Rng rng(11);
    const auto cfg = small_config(ScanMode::raster, 1);
    const auto p = ParamSource::constants(make_params(cfg, 12));
    FlowSet bad;
    bad.backward = Tensor(Shape{3, 2, 8, 8});
    CHECK_THROWS_AS(propagate(vars(random_clip(rng, 3, 8, 8, 8)), bad, raster_order(8, 8), cfg, p), ShapeError);
    CHECK_THROWS_AS(propagate({}, FlowSet{}, raster_order(8, 8), cfg, p), ShapeError);
}

TEST_CASE("parameter layout")
{
    const auto cfg = small_config(ScanMode::raster, 2, 2);
    const auto p = make_params(cfg, 0);
    CHECK(p.count("stage0.fuse.weight") == 1);
    CHECK(p.count("stage1.block1.wfsab.qkv.weight") == 1);
    CHECK(p.count("stage1.block1.glssm.A_log") == 1);
    CHECK(p.count("stage2.fuse.weight") == 0);
    CHECK(p.at("stage0.fuse.weight").shape() == Shape{8, 24, 3, 3});
    for (float v : p.at("stage1.fuse.weight").values())
        CHECK(v == 0.0f);
}
