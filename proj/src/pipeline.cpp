#include "mambavsr/pipeline.hpp"

#include "mambavsr/errors.hpp"
#include "mambavsr/mvt_io.hpp"
#include "mambavsr/ops.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

namespace mvsr::model {

namespace {

constexpr float kSlope = 0.1f;
constexpr char kMagic[] = "MVSRW1";
constexpr std::size_t kMagicLen = 6;
const std::string kMetaHash = "meta.config_hash";
const std::string kMetaSeed = "meta.seed";

std::string lower(std::string s)
{
    for (auto& ch : s)
        ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return s;
}

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
        return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

Tensor limbs(std::uint64_t v)
{
    Tensor t(Shape{4});
    for (int i = 0; i < 4; ++i)
        t[i] = static_cast<float>((v >> (16 * i)) & 0xffffu);
    return t;
}

std::uint64_t from_limbs(const Tensor& t, const std::string& name)
{
    if (t.shape() != Shape{4})
        throw FormatError("metadata entry '" + name + "' must have shape [4]");
    std::uint64_t v = 0;
    for (int i = 0; i < 4; ++i) {
        const float f = t[i];
        if (!(f >= 0.0f && f <= 65535.0f) || f != std::floor(f))
            throw FormatError("metadata entry '" + name + "' holds a non-integer limb");
        v |= static_cast<std::uint64_t>(f) << (16 * i);
    }
    return v;
}

void hash_bytes(std::uint64_t& h, const std::string& s)
{
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
}

// Largest divisor of both extents not above `want`.
int fitting_patch(int h, int w, int want)
{
    const int g = std::gcd(h, w);
    for (int p = std::min(want, g); p > 1; --p)
        if (g % p == 0)
            return p;
    return 1;
}

} // namespace

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void ModelConfig::validate() const
{
    auto need = [](bool ok, const std::string& what) {
        if (!ok)
            throw ShapeError("config: " + what);
    };
    need(scale == 4, "only scale = 4 is supported");
    need(channels >= 1, "channels must be positive");
    need(window >= 1, "window must be positive");
    need(heads >= 1 && channels % heads == 0, "channels must be divisible by heads");
    need(state_dim >= 1, "state_dim must be positive");
    need(stages >= 1, "stages must be positive");
    need(blocks_per_stage >= 1, "blocks_per_stage must be positive");
    need(compass_factor >= 1, "compass_factor must be positive");
    need(top_k >= 1, "top_k must be positive");
    need(blend >= 0.0f && blend <= 1.0f, "blend must lie in [0,1]");
    need(temperature > 0.0f, "temperature must be positive");
    need(patch >= 1 && radius >= 0, "patch must be positive and radius non-negative");
}

std::uint64_t ModelConfig::architecture_hash() const
{
    std::ostringstream s;
    s << "scale=" << scale << ";channels=" << channels << ";window=" << window << ";heads=" << heads
      << ";state_dim=" << state_dim << ";stages=" << stages << ";blocks_per_stage=" << blocks_per_stage
      << ";block=" << to_string(block) << ";gamma_mode=" << to_string(gamma_mode)
      << ";compass_factor=" << compass_factor;
    std::uint64_t h = 0xcbf29ce484222325ULL;
    hash_bytes(h, s.str());
    return h;
}

prop::PropagationConfig ModelConfig::propagation() const
{
    prop::PropagationConfig p;
    p.channels = channels;
    p.stages = stages;
    p.blocks_per_stage = blocks_per_stage;
    p.scan_mode = scan_mode;
    p.block.variant = block;
    p.block.gamma = gamma_mode;
    p.block.window = {channels, window, heads, 2};
    p.block.glssm.channels = channels;
    p.block.glssm.state_dim = state_dim;
    p.block.glssm.align = scan_mode == ScanMode::content_aware;
    p.block.glssm.patch = patch;
    p.block.glssm.radius = radius;
    return p;
}

compass::CompassConfig ModelConfig::compass() const
{
    compass::CompassConfig c;
    c.factor = compass_factor;
    c.similarity.top_k = top_k;
    c.similarity.blend = blend;
    c.similarity.temperature = temperature;
    c.solve.seed = seed ^ 0x5eedf1ed1e2ULL;
    return c;
}

ScanMode parse_scan_mode(const std::string& s)
{
    const std::string v = lower(trim(s));
    if (v == "raster" || v == "raster-based scanning")
        return ScanMode::raster;
    if (v == "fiedler" || v == "fiedler-based scanning" || v == "fielder-based scanning")
        return ScanMode::fiedler;
    if (v == "content_aware" || v == "content-aware" || v == "content-aware scanning")
        return ScanMode::content_aware;
    throw ShapeError("unknown scan mode '" + s + "'");
}

namespace {

struct VariantName {
    block::Variant variant;
    std::optional<block::GammaMode> gamma;
};

VariantName parse_variant_name(const std::string& s)
{
    std::string v = lower(trim(s));
    // Accept the Greek gamma and an ASCII spelling.
    const std::string greek = "\xce\xb3";
    for (auto pos = v.find(greek); pos != std::string::npos; pos = v.find(greek))
        v.replace(pos, greek.size(), "gamma");
    if (v == "wfsab")
        return {block::Variant::wfsab, std::nullopt};
    if (v == "wfsab-wfsab" || v == "wfsab_wfsab")
        return {block::Variant::wfsab_wfsab, std::nullopt};
    if (v == "wfsab-glssm" || v == "wfsab_glssm")
        return {block::Variant::wfsab_glssm, std::nullopt};
    if (v == "wfsab-glssm w/ gamma")
        return {block::Variant::wfsab_glssm, block::GammaMode::learnable};
    if (v == "wfsab-glssm w/o gamma")
        return {block::Variant::wfsab_glssm, block::GammaMode::frozen_one};
    if (v == "glssm-glssm" || v == "glssm_glssm")
        return {block::Variant::glssm_glssm, std::nullopt};
    throw ShapeError("unknown block configuration '" + s + "'");
}

} // namespace

block::Variant parse_variant(const std::string& s) { return parse_variant_name(s).variant; }

block::GammaMode parse_gamma_mode(const std::string& s)
{
    const std::string v = lower(trim(s));
    if (v == "learnable")
        return block::GammaMode::learnable;
    if (v == "frozen_one")
        return block::GammaMode::frozen_one;
    if (v == "zero")
        return block::GammaMode::zero;
    throw ShapeError("unknown gamma_mode '" + s + "'");
}

std::string to_string(ScanMode m)
{
    switch (m) {
    case ScanMode::raster: return "raster";
    case ScanMode::fiedler: return "fiedler";
    case ScanMode::content_aware: return "content_aware";
    }
    return "?";
}

std::string to_string(block::Variant v)
{
    switch (v) {
    case block::Variant::wfsab: return "wfsab";
    case block::Variant::wfsab_wfsab: return "wfsab_wfsab";
    case block::Variant::wfsab_glssm: return "wfsab_glssm";
    case block::Variant::glssm_glssm: return "glssm_glssm";
    }
    return "?";
}

std::string to_string(block::GammaMode g)
{
    switch (g) {
    case block::GammaMode::learnable: return "learnable";
    case block::GammaMode::frozen_one: return "frozen_one";
    case block::GammaMode::zero: return "zero";
    }
    return "?";
}

ModelConfig parse_config(const std::string& text)
{
    ModelConfig cfg;
    std::optional<block::GammaMode> block_gamma, explicit_gamma;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    std::set<std::string> seen;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        line = trim(line);
        if (line.empty())
            continue;
        const auto eq = line.find('=');
        const std::string where = "config line " + std::to_string(lineno);
        if (eq == std::string::npos)
            throw ShapeError(where + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (!seen.insert(key).second)
            throw ShapeError(where + ": duplicate key '" + key + "'");
        auto as_int = [&]() {
            std::size_t used = 0;
            int v = 0;
            try {
                v = std::stoi(val, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used == 0 || used != val.size())
                throw ShapeError(where + ": '" + key + "' expects an integer, got '" + val + "'");
            return v;
        };
        auto as_float = [&]() {
            std::size_t used = 0;
            float v = 0;
            try {
                v = std::stof(val, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used == 0 || used != val.size())
                throw ShapeError(where + ": '" + key + "' expects a number, got '" + val + "'");
            return v;
        };
        try {
            if (key == "scale") cfg.scale = as_int();
            else if (key == "channels") cfg.channels = as_int();
            else if (key == "window") cfg.window = as_int();
            else if (key == "heads") cfg.heads = as_int();
            else if (key == "state_dim") cfg.state_dim = as_int();
            else if (key == "scan_mode") cfg.scan_mode = parse_scan_mode(val);
            else if (key == "stages") cfg.stages = as_int();
            else if (key == "blocks_per_stage") cfg.blocks_per_stage = as_int();
            else if (key == "block") {
                const auto vn = parse_variant_name(val);
                cfg.block = vn.variant;
                block_gamma = vn.gamma;
            } else if (key == "gamma_mode") explicit_gamma = parse_gamma_mode(val);
            else if (key == "seed") {
                std::size_t used = 0;
                cfg.seed = std::stoull(val, &used);
                if (used != val.size())
                    throw ShapeError("bad seed");
            } else if (key == "compass_factor") cfg.compass_factor = as_int();
            else if (key == "top_k") cfg.top_k = as_int();
            else if (key == "blend") cfg.blend = as_float();
            else if (key == "temperature") cfg.temperature = as_float();
            else if (key == "patch") cfg.patch = as_int();
            else if (key == "radius") cfg.radius = as_int();
            else throw ShapeError("unknown key '" + key + "'");
        } catch (const ShapeError& e) {
            const std::string msg = e.what();
            throw ShapeError(msg.rfind("config line", 0) == 0 ? msg : where + ": " + msg);
        } catch (const std::exception&) {
            throw ShapeError(where + ": bad value for '" + key + "'");
        }
    }
    if (explicit_gamma)
        cfg.gamma_mode = *explicit_gamma;
    else if (block_gamma)
        cfg.gamma_mode = *block_gamma;
    cfg.validate();
    return cfg;
}

ModelConfig load_config(const std::filesystem::path& path)
{
    const auto bytes = io::read_file(path);
    return parse_config(std::string(bytes.begin(), bytes.end()));
}

std::string to_text(const ModelConfig& cfg)
{
    std::ostringstream s;
    s << "scale = " << cfg.scale << "\n"
      << "channels = " << cfg.channels << "\n"
      << "window = " << cfg.window << "\n"
      << "heads = " << cfg.heads << "\n"
      << "state_dim = " << cfg.state_dim << "\n"
      << "scan_mode = " << to_string(cfg.scan_mode) << "\n"
      << "stages = " << cfg.stages << "\n"
      << "blocks_per_stage = " << cfg.blocks_per_stage << "\n"
      << "block = " << to_string(cfg.block) << "\n"
      << "gamma_mode = " << to_string(cfg.gamma_mode) << "\n"
      << "seed = " << cfg.seed << "\n"
      << "compass_factor = " << cfg.compass_factor << "\n"
      << "top_k = " << cfg.top_k << "\n"
      << "blend = " << cfg.blend << "\n"
      << "temperature = " << cfg.temperature << "\n"
      << "patch = " << cfg.patch << "\n"
      << "radius = " << cfg.radius << "\n";
    return s.str();
}

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

bool operator==(const ModelWeights& a, const ModelWeights& b)
{
    if (a.config_hash != b.config_hash || a.seed != b.seed || a.tensors.size() != b.tensors.size())
        return false;
    for (auto ia = a.tensors.begin(), ib = b.tensors.begin(); ia != a.tensors.end(); ++ia, ++ib)
        if (ia->first != ib->first || !identical(ia->second, ib->second))
            return false;
    return true;
}

std::vector<std::uint8_t> encode_weights(const ModelWeights& w)
{
    std::vector<std::pair<std::string, const Tensor*>> entries;
    Tensor hash_t, seed_t;
    if (w.config_hash) {
        hash_t = limbs(*w.config_hash);
        entries.emplace_back(kMetaHash, &hash_t);
    }
    if (w.seed) {
        seed_t = limbs(*w.seed);
        entries.emplace_back(kMetaSeed, &seed_t);
    }
    for (const auto& [name, t] : w.tensors) {
        if (name.rfind("meta.", 0) == 0)
            throw FormatError("tensor name '" + name + "' uses the reserved meta. prefix");
        entries.emplace_back(name, &t);
    }

    std::vector<std::uint8_t> out(kMagic, kMagic + kMagicLen);
    io::put_u32(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, t] : entries) {
        if (name.size() > 0xffff)
            throw FormatError("tensor name too long: " + name.substr(0, 32) + "...");
        io::put_u16(out, static_cast<std::uint16_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        io::put_u8(out, static_cast<std::uint8_t>(t->rank()));
        for (int d : t->shape())
            io::put_u32(out, static_cast<std::uint32_t>(d));
        for (float v : t->values())
            io::put_f32(out, v);
    }
    return out;
}

ModelWeights decode_weights(std::span<const std::uint8_t> bytes)
{
    io::ByteReader r(bytes);
    if (!r.has(kMagicLen) || !std::equal(kMagic, kMagic + kMagicLen, bytes.begin()))
        throw MagicMismatchError("weights: bad magic (expected MVSRW1)");
    r.bytes(kMagicLen, "magic");
    const std::uint32_t count = r.u32("entry count");
    ModelWeights w;
    std::set<std::string> names;
    for (std::uint32_t e = 0; e < count; ++e) {
        const std::string idx = "entry " + std::to_string(e);
        const std::uint16_t len = r.u16(idx + " name length");
        const auto nb = r.bytes(len, idx + " name");
        const std::string name(nb.begin(), nb.end());
        const std::string ctx = idx + " '" + name + "'";
        if (!names.insert(name).second)
            throw DuplicateNameError("weights: duplicate entry name '" + name + "'");
        const int rank = r.u8(ctx + " rank");
        Shape shape(rank);
        std::size_t n = 1;
        for (int d = 0; d < rank; ++d) {
            const std::uint32_t ext = r.u32(ctx + " extents");
            if (ext > 0x7fffffffu)
                throw FormatError("weights: extent too large in " + ctx);
            shape[d] = static_cast<int>(ext);
            n *= ext;
        }
        if (n > r.remaining() / 4)
            throw TruncatedFileError("weights: payload of " + ctx + " is truncated");
        std::vector<float> vals(n);
        for (auto& v : vals)
            v = r.f32(ctx + " payload");
        Tensor t(std::move(shape), std::move(vals));
        if (name == kMetaHash)
            w.config_hash = from_limbs(t, name);
        else if (name == kMetaSeed)
            w.seed = from_limbs(t, name);
        else
            w.tensors.emplace(name, std::move(t));
    }
    if (r.remaining() != 0)
        throw FormatError("weights: " + std::to_string(r.remaining()) + " trailing bytes");
    return w;
}

void save_weights(const ModelWeights& w, const std::filesystem::path& path)
{
    io::write_file(path, encode_weights(w));
}

ModelWeights load_weights(const std::filesystem::path& path)
{
    return decode_weights(io::read_file(path));
}

std::int64_t count_params(const ModelWeights& w)
{
    std::int64_t n = 0;
    for (const auto& [name, t] : w.tensors)
        n += static_cast<std::int64_t>(t.size());
    return n;
}

std::vector<ParamSpec> param_specs(const ModelConfig& cfg)
{
    cfg.validate();
    const int c = cfg.channels, f = cfg.compass_factor;
    std::vector<ParamSpec> specs = {
        {"shallow.weight", {c, 3, 3, 3}, Init::fan_in_uniform},
        {"shallow.bias", {c}, Init::zeros},
        {"compass.embed.weight", {c, c, f, f}, Init::fan_in_uniform},
        {"compass.embed.bias", {c}, Init::zeros},
    };
    auto more = prop::propagation_param_specs(cfg.propagation());
    specs.insert(specs.end(), more.begin(), more.end());
    specs.push_back({"recon.up1.weight", {4 * c, c, 3, 3}, Init::fan_in_uniform});
    specs.push_back({"recon.up1.bias", {4 * c}, Init::zeros});
    specs.push_back({"recon.up2.weight", {4 * c, c, 3, 3}, Init::fan_in_uniform});
    specs.push_back({"recon.up2.bias", {4 * c}, Init::zeros});
    specs.push_back({"recon.out.weight", {3, c, 3, 3}, Init::zeros});
    specs.push_back({"recon.out.bias", {3}, Init::zeros});
    return specs;
}

ModelWeights init_weights(const ModelConfig& cfg)
{
    ModelWeights w;
    Rng rng(cfg.seed);
    for (const auto& spec : param_specs(cfg))
        w.tensors.emplace(spec.name, init_tensor(spec, rng));
    w.config_hash = cfg.architecture_hash();
    w.seed = cfg.seed;
    return w;
}

void check_compatible(const ModelWeights& w, const ModelConfig& cfg)
{
    if (w.config_hash && *w.config_hash != cfg.architecture_hash())
        throw ModelMismatchError("weights were created for a different architecture (config hash mismatch)");
    const auto specs = param_specs(cfg);
    for (const auto& s : specs) {
        auto it = w.tensors.find(s.name);
        if (it == w.tensors.end())
            throw ModelMismatchError("weights lack '" + s.name + "'");
        if (it->second.shape() != s.shape)
            throw ModelMismatchError("'" + s.name + "' has shape " + mvsr::to_string(it->second.shape()) +
                                     ", config expects " + mvsr::to_string(s.shape));
    }
    if (w.tensors.size() != specs.size()) {
        std::set<std::string> expected;
        for (const auto& s : specs)
            expected.insert(s.name);
        for (const auto& [name, t] : w.tensors)
            if (!expected.count(name))
                throw ModelMismatchError("weights hold unexpected entry '" + name + "'");
    }
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

ScanOrder scan_order(const Tensor& center_feat, const ModelConfig& cfg, const ParamSource& p)
{
    const int h = center_feat.dim(1), w = center_feat.dim(2);
    if (cfg.scan_mode == ScanMode::raster)
        return windowed_order(raster_order(h, w), cfg.window);
    const ScanOrder o = compass::build_compass(center_feat, p.get("compass.embed.weight").value(),
                                               p.get("compass.embed.bias").value(), cfg.compass());
    return windowed_order(o, cfg.window);
}

std::vector<ag::Var> forward(const std::vector<Tensor>& lr, const FlowSet& flows,
                             const ModelConfig& cfg, const ParamSource& p)
{
    cfg.validate();
    if (lr.empty())
        throw ShapeError("forward: empty clip");
    for (const auto& f : lr) {
        if (f.rank() != 3 || f.dim(0) != 3 || f.shape() != lr[0].shape())
            throw ShapeError("forward: frames must share shape [3,H,W]");
        require_finite(f, "forward input");
    }
    const int t = static_cast<int>(lr.size()), h = lr[0].dim(1), w = lr[0].dim(2);
    flows.validate(t, h, w);

    std::vector<ag::Var> feats;
    for (const auto& f : lr)
        feats.push_back(ag::leaky_relu(
            ag::conv2d(ag::constant(f), p.get("shallow.weight"), p.get("shallow.bias"), 1, 1), kSlope));

    const ScanOrder order = scan_order(feats[t / 2].value(), cfg, p);
    auto pc = cfg.propagation();
    pc.block.glssm.patch = fitting_patch(h, w, cfg.patch);
    const auto props = prop::propagate(feats, flows, order, pc, p);

    std::vector<ag::Var> out;
    for (int i = 0; i < t; ++i) {
        ag::Var r = ag::conv2d(props[i], p.get("recon.up1.weight"), p.get("recon.up1.bias"), 1, 1);
        r = ag::leaky_relu(ag::pixel_shuffle(r, 2), kSlope);
        r = ag::conv2d(r, p.get("recon.up2.weight"), p.get("recon.up2.bias"), 1, 1);
        r = ag::leaky_relu(ag::pixel_shuffle(r, 2), kSlope);
        r = ag::conv2d(r, p.get("recon.out.weight"), p.get("recon.out.bias"), 1, 1);
        out.push_back(ag::add(ag::constant(bicubic_resize(lr[i], 4.0f)), r));
    }
    return out;
}

std::vector<Tensor> split_frames(const Tensor& clip)
{
    if (clip.rank() != 4 || clip.dim(0) < 1)
        throw ShapeError("expected a clip [T,C,H,W], got " + mvsr::to_string(clip.shape()));
    const int t = clip.dim(0);
    const Shape fs{clip.dim(1), clip.dim(2), clip.dim(3)};
    const std::size_t per = numel(fs);
    std::vector<Tensor> out;
    for (int i = 0; i < t; ++i)
        out.emplace_back(fs, std::vector<float>(clip.data() + i * per, clip.data() + (i + 1) * per));
    return out;
}

Tensor stack_frames(const std::vector<Tensor>& frames)
{
    if (frames.empty())
        throw ShapeError("stack_frames: no frames");
    Shape s = frames[0].shape();
    s.insert(s.begin(), static_cast<int>(frames.size()));
    Tensor out(s);
    std::size_t off = 0;
    for (const auto& f : frames) {
        if (f.shape() != frames[0].shape())
            throw ShapeError("stack_frames: frames differ in shape");
        std::copy(f.values().begin(), f.values().end(), out.data() + off);
        off += f.size();
    }
    return out;
}

Tensor forward(const Tensor& lr_clip, const FlowSet& flows, const ModelConfig& cfg,
               const ModelWeights& w)
{
    check_compatible(w, cfg);
    const auto out = forward(split_frames(lr_clip), flows, cfg, ParamSource::constants(w.tensors));
    std::vector<Tensor> frames;
    for (const auto& v : out)
        frames.push_back(v.value());
    return stack_frames(frames);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

ag::Var loss_var(const std::vector<TrainSample>& batch, const ModelConfig& cfg, const ParamSource& p)
{
    if (batch.empty())
        throw ShapeError("train: empty batch");
    ag::Var total;
    for (const auto& s : batch) {
        if (s.lr.rank() != 4 || s.hr.rank() != 4 || s.hr.dim(0) != s.lr.dim(0) || s.hr.dim(1) != 3 ||
            s.hr.dim(2) != 4 * s.lr.dim(2) || s.hr.dim(3) != 4 * s.lr.dim(3))
            throw ShapeError("train: hr must be [T,3,4H,4W] for lr [T,3,H,W]");
        const auto sr = forward(split_frames(s.lr), s.flows, cfg, p);
        const ag::Var stacked = sr.size() == 1 ? sr[0] : ag::concat0(sr);
        const Tensor hr = s.hr.reshape(stacked.shape());
        const ag::Var l = ag::charbonnier_mean(stacked, hr);
        total = total.defined() ? ag::add(total, l) : l;
    }
    return batch.size() == 1 ? total : ag::scale(total, 1.0f / static_cast<float>(batch.size()));
}

} // namespace

float batch_loss(const std::vector<TrainSample>& batch, const ModelConfig& cfg, const ModelWeights& w)
{
    check_compatible(w, cfg);
    return loss_var(batch, cfg, ParamSource::constants(w.tensors)).value()[0];
}

float train_step(const std::vector<TrainSample>& batch, const ModelConfig& cfg, ModelWeights& w,
                 AdamState& state, float lr_rate, const AdamConfig& adam)
{
    check_compatible(w, cfg);
    ag::NamedVars vars;
    for (const auto& [name, t] : w.tensors)
        vars.emplace(name, ag::parameter(t));
    const ag::Var loss = loss_var(batch, cfg, ParamSource(vars));
    const float value = loss.value()[0];
    if (!std::isfinite(value))
        throw NumericError("train_step: non-finite loss at step " + std::to_string(state.step + 1));
    ag::backward(loss);

    ++state.step;
    const double bc1 = 1.0 - std::pow(static_cast<double>(adam.beta1), static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(static_cast<double>(adam.beta2), static_cast<double>(state.step));
    for (auto& [name, t] : w.tensors) {
        const ag::Var& v = vars.at(name);
        Tensor& m1 = state.m.try_emplace(name, Tensor(t.shape())).first->second;
        Tensor& m2 = state.v.try_emplace(name, Tensor(t.shape())).first->second;
        const bool has_grad = !v.grad().empty();
        if (has_grad)
            require_finite(v.grad(), "gradient of " + name);
        for (std::size_t i = 0; i < t.size(); ++i) {
            const float g = has_grad ? v.grad()[i] : 0.0f;
            m1[i] = adam.beta1 * m1[i] + (1.0f - adam.beta1) * g;
            m2[i] = adam.beta2 * m2[i] + (1.0f - adam.beta2) * g * g;
            if (lr_rate != 0.0f) {
                const double mhat = m1[i] / bc1, vhat = m2[i] / bc2;
                t[i] = static_cast<float>(t[i] - lr_rate * mhat / (std::sqrt(vhat) + adam.eps));
            }
        }
    }
    return value;
}

float cosine_lr(float base, std::int64_t step, std::int64_t total, float min_rate)
{
    if (total <= 0)
        return base;
    const double frac = std::clamp(static_cast<double>(step) / static_cast<double>(total), 0.0, 1.0);
    return static_cast<float>(min_rate + 0.5 * (base - min_rate) * (1.0 + std::cos(std::numbers::pi * frac)));
}

} // namespace mvsr::model
