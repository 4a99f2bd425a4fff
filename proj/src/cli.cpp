#include "mambavsr/cli.hpp"

#include "mambavsr/errors.hpp"
#include "mambavsr/image_io.hpp"
#include "mambavsr/metrics.hpp"
#include "mambavsr/mvt_io.hpp"
#include "mambavsr/ops.hpp"
#include "mambavsr/pipeline.hpp"
#include "mambavsr/scan_compass.hpp"
#include "mambavsr/sequentialize.hpp"
#include "mambavsr/ssm_kernel.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;

namespace mvsr::cli {

namespace {

std::string fmt(double v, int digits = 6)
{
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string metrics_csv(const metrics::MetricReport& r)
{
    std::ostringstream s;
    s << "frame,psnr_db,ssim\n";
    for (std::size_t i = 0; i < r.psnr.size(); ++i)
        s << i << "," << fmt(r.psnr[i]) << "," << fmt(r.ssim[i], 8) << "\n";
    s << "mean," << fmt(r.mean_psnr) << "," << fmt(r.mean_ssim, 8) << "\n";
    return s.str();
}

void write_text(const fs::path& path, const std::string& text)
{
    io::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

metrics::ChannelMode parse_channel(const std::string& s)
{
    if (s == "rgb")
        return metrics::ChannelMode::rgb;
    if (s == "y")
        return metrics::ChannelMode::y;
    throw ShapeError("--channel must be rgb or y");
}

Tensor load_frame(const fs::path& p)
{
    return p.extension() == ".mvt" ? io::read_mvt(p) : io::read_png(p);
}

std::vector<Tensor> load_frames(const fs::path& p)
{
    if (fs::is_directory(p))
        return io::load_clip(p).frames;
    return {load_frame(p)};
}

fs::path output_name(const std::string& name)
{
    return fs::path(name).replace_extension(".png");
}

model::FlowSet load_flows(const fs::path& dir, int frames)
{
    model::FlowSet flows;
    auto load = [&](const char* stem) -> std::optional<Tensor> {
        char first[64];
        std::snprintf(first, sizeof first, "%s_%04d.mvt", stem, 0);
        if (frames < 2 || !fs::exists(dir / first))
            return std::nullopt;
        std::vector<Tensor> parts;
        for (int i = 0; i + 1 < frames; ++i) {
            char name[64];
            std::snprintf(name, sizeof name, "%s_%04d.mvt", stem, i);
            if (!fs::exists(dir / name))
                throw IoError("flow file '" + (dir / name).string() + "' is missing");
            parts.push_back(io::read_mvt(dir / name));
        }
        return model::stack_frames(parts);
    };
    if (!fs::is_directory(dir))
        throw IoError("flow directory '" + dir.string() + "' does not exist");
    flows.forward = load("flow_fwd");
    flows.backward = load("flow_bwd");
    return flows;
}

// ---------------------------------------------------------------------------

struct SrArgs {
    std::string input, output, weights, config, scan_mode, flows, gt, channel = "rgb";
    std::optional<std::uint64_t> seed;
};

int cmd_sr(const SrArgs& a, std::ostream& out)
{
    model::ModelConfig cfg = model::load_config(a.config);
    if (!a.scan_mode.empty())
        cfg.scan_mode = model::parse_scan_mode(a.scan_mode);
    if (a.seed)
        cfg.seed = *a.seed;
    const model::ModelWeights w = model::load_weights(a.weights);
    model::check_compatible(w, cfg);

    const io::Clip clip = io::load_clip(a.input);
    const int t = static_cast<int>(clip.frames.size());
    model::FlowSet flows;
    if (!a.flows.empty())
        flows = load_flows(a.flows, t);
    const Tensor sr = model::forward(model::stack_frames(clip.frames), flows, cfg, w);
    require_finite(sr, "super-resolved output");

    fs::create_directories(a.output);
    std::vector<Tensor> written;
    for (int i = 0; i < t; ++i) {
        const Tensor frame = model::split_frames(sr)[i];
        io::write_png(fs::path(a.output) / output_name(clip.names[i]), frame);
        written.push_back(io::quantize8(frame));
    }
    out << "wrote " << t << " frames to " << a.output << "\n";

    if (!a.gt.empty()) {
        const io::Clip gt = io::load_clip(a.gt);
        const auto mode = parse_channel(a.channel);
        const auto report = metrics::evaluate(written, gt.frames, mode);
        write_text(fs::path(a.output) / "metrics.csv", metrics_csv(report));
        std::vector<Tensor> bic;
        for (const auto& f : clip.frames)
            bic.push_back(io::quantize8(bicubic_resize(f, 4.0f)));
        const auto base = metrics::evaluate(bic, gt.frames, mode);
        out << "mean PSNR " << fmt(report.mean_psnr, 4) << " dB (bicubic " << fmt(base.mean_psnr, 4)
            << " dB), mean SSIM " << fmt(report.mean_ssim, 6) << "\n";
    }
    return ok;
}

int cmd_psnr_ssim(const std::string& a, const std::string& b, const std::string& channel,
                  const std::string& csv, std::ostream& out)
{
    const auto mode = parse_channel(channel);
    const auto report = metrics::evaluate(load_frames(a), load_frames(b), mode);
    const std::string text = metrics_csv(report);
    if (!csv.empty())
        write_text(csv, text);
    out << text;
    return ok;
}

int cmd_scan_viz(const std::string& input, const std::string& config, const std::string& prefix,
                 std::ostream& out)
{
    const model::ModelConfig cfg = config.empty() ? model::ModelConfig{} : model::load_config(config);
    const Tensor frame = load_frame(input);
    const auto ccfg = cfg.compass();
    const Tensor embed = compass::averaging_embedding(frame.dim(0), ccfg.factor);
    const ScanOrder order = compass::build_compass(frame, embed, Tensor(Shape{frame.dim(0)}), ccfg);

    const int h = frame.dim(1), w = frame.dim(2), l = order.size();
    std::ostringstream csv;
    csv << "site_index,rank\n";
    std::vector<std::uint8_t> px(l);
    for (int site = 0; site < l; ++site) {
        const int rank = order.inv()[site];
        csv << site << "," << rank << "\n";
        px[site] = static_cast<std::uint8_t>(
            l > 1 ? std::lround(255.0 * rank / static_cast<double>(l - 1)) : 0);
    }
    write_text(prefix + ".csv", csv.str());
    io::write_png_gray(prefix + ".png", px, h, w);
    out << "scan order over " << h << "x" << w << " written to " << prefix << ".{csv,png}\n";
    return ok;
}

int cmd_bench(int l, int c, int n, int chunk, std::uint64_t seed, int repeat, std::ostream& out)
{
    if (l < 1 || c < 1 || n < 1 || chunk < 1 || repeat < 1)
        throw ShapeError("bench: L, C, N, chunk and repeat must be positive");
    Rng rng(seed);
    auto rnd = [&](Shape s, double lo, double hi) {
        Tensor t(std::move(s));
        for (auto& v : t.values())
            v = static_cast<float>(rng.uniform(lo, hi));
        return t;
    };
    const Tensor x = rnd({l, c}, -1, 1), delta = rnd({l, c}, 0.01, 0.2), bm = rnd({l, n}, -1, 1),
                 cm = rnd({l, n}, -1, 1), d = rnd({c}, -1, 1);
    Tensor a = rnd({c, n}, 0.1, 2.0);
    for (auto& v : a.values())
        v = -v;

    const Tensor ref = ssm::scan(x, delta, a, bm, cm, d);
    Tensor y;
    const auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < repeat; ++r)
        y = ssm::scan_chunked(x, delta, a, bm, cm, d, chunk);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const double dev = max_abs_diff(y, ref);
    const double tps = secs > 0 ? static_cast<double>(l) * repeat / secs : 0.0;
    out << "L,C,N,chunk,tokens_per_s,max_dev,status\n"
        << l << "," << c << "," << n << "," << chunk << "," << fmt(tps, 1) << "," << dev << ","
        << (dev <= 1e-5 ? "OK" : "FAILED") << "\n";
    return dev <= 1e-5 ? ok : numeric_failure;
}

int cmd_degrade(const std::string& input, const std::string& output, int scale, std::ostream& out)
{
    if (scale < 1)
        throw ShapeError("--scale must be positive");
    const io::Clip clip = io::load_clip(input);
    fs::create_directories(output);
    for (std::size_t i = 0; i < clip.frames.size(); ++i)
        io::write_png(fs::path(output) / output_name(clip.names[i]),
                      bicubic_resize(clip.frames[i], 1.0f / static_cast<float>(scale)));
    out << "degraded " << clip.frames.size() << " frames by x1/" << scale << "\n";
    return ok;
}

int cmd_align(const std::string& ref, const std::string& nbr, int patch, int radius,
              const std::string& prefix, std::ostream& out)
{
    const auto r = seq::patch_align(load_frame(ref), load_frame(nbr), patch, radius);
    io::write_mvt(prefix + ".mvt", r.alignment.displacements);
    const auto s = seq::summarize(r);
    write_text(prefix + ".csv", "mean_abs_displacement,tie_rate\n" + fmt(s.mean_abs_displacement) +
                                    "," + fmt(s.tie_rate) + "\n");
    out << "mean |displacement| " << fmt(s.mean_abs_displacement, 4) << ", tie rate "
        << fmt(s.tie_rate, 4) << "\n";
    return ok;
}

int cmd_init(const std::string& config, const std::string& output, std::optional<std::uint64_t> seed,
             std::ostream& out)
{
    model::ModelConfig cfg = model::load_config(config);
    if (seed)
        cfg.seed = *seed;
    const auto w = model::init_weights(cfg);
    model::save_weights(w, output);
    out << "initialized " << model::count_params(w) << " parameters -> " << output << "\n";
    return ok;
}

struct TrainArgs {
    std::string config, weights_in, lr_dir, hr_dir, output, flows;
    int steps = 100;
    float rate = 2e-4f;
    bool cosine = false;
    int log_every = 10;
};

int cmd_train(const TrainArgs& a, std::ostream& out)
{
    const model::ModelConfig cfg = model::load_config(a.config);
    model::ModelWeights w = a.weights_in.empty() ? model::init_weights(cfg) : model::load_weights(a.weights_in);
    model::check_compatible(w, cfg);
    const io::Clip lr = io::load_clip(a.lr_dir), hr = io::load_clip(a.hr_dir);
    model::TrainSample s{model::stack_frames(lr.frames), model::stack_frames(hr.frames), {}};
    if (!a.flows.empty())
        s.flows = load_flows(a.flows, static_cast<int>(lr.frames.size()));
    const std::vector<model::TrainSample> batch{s};
    model::AdamState state;
    for (int i = 0; i < a.steps; ++i) {
        const float rate = a.cosine ? model::cosine_lr(a.rate, i, a.steps) : a.rate;
        const float loss = model::train_step(batch, cfg, w, state, rate);
        if (a.log_every > 0 && (i % a.log_every == 0 || i + 1 == a.steps))
            out << "step " << i << " loss " << fmt(loss, 8) << "\n";
    }
    model::save_weights(w, a.output);
    out << "saved " << a.output << "\n";
    return ok;
}

int cmd_verify(std::uint64_t seed, std::ostream& out)
{
    Rng rng(seed);
    bool all = true;
    auto report = [&](const std::string& name, bool pass, const std::string& detail) {
        out << (pass ? "PASS " : "FAIL ") << name << " (" << detail << ")\n";
        all = all && pass;
    };

    {
        const int l = 256, c = 8, n = 16;
        auto rnd = [&](Shape s, double lo, double hi) {
            Tensor t(std::move(s));
            for (auto& v : t.values())
                v = static_cast<float>(rng.uniform(lo, hi));
            return t;
        };
        const Tensor x = rnd({l, c}, -1, 1), delta = rnd({l, c}, 0.01, 0.2), bm = rnd({l, n}, -1, 1),
                     cm = rnd({l, n}, -1, 1), d = rnd({c}, -1, 1);
        Tensor a = rnd({c, n}, 0.1, 2.0);
        for (auto& v : a.values())
            v = -v;
        const Tensor ref = ssm::scan(x, delta, a, bm, cm, d);
        double worst = 0;
        for (int chunk : {1, 7, 32, 256})
            worst = std::max<double>(worst, max_abs_diff(ssm::scan_chunked(x, delta, a, bm, cm, d, chunk), ref));
        report("chunked scan vs sequential", worst <= 1e-5, "max dev " + std::to_string(worst));
    }
    {
        bool pass = true;
        for (int n = 3; n <= 16; ++n) {
            compass::DenseMatrix lm(n);
            for (int i = 0; i + 1 < n; ++i) {
                lm(i, i) += 1;
                lm(i + 1, i + 1) += 1;
                lm(i, i + 1) = lm(i + 1, i) = -1;
            }
            std::vector<double> u(n, 1.0 / std::sqrt(static_cast<double>(n)));
            const auto r = compass::fiedler_vector(lm, u, {});
            const auto o = compass::order_from_fiedler(r.vector, {1, n});
            for (int k = 0; k < n; ++k)
                pass = pass && o.perm()[k] == n - 1 - k;
            pass = pass && r.residual <= 1e-6;
        }
        report("Fiedler order of path graphs", pass, "n = 3..16");
    }
    {
        bool pass = true;
        for (int trial = 0; trial < 50; ++trial) {
            const int t = rng.uniform_int(1, 4), h = rng.uniform_int(1, 8), w = rng.uniform_int(1, 8);
            std::vector<int> perm(h * w);
            for (int i = 0; i < h * w; ++i)
                perm[i] = i;
            for (int i = h * w - 1; i > 0; --i)
                std::swap(perm[i], perm[rng.uniform_int(0, i)]);
            const auto order = ScanOrder::from_perm(perm, {h, w}, {h, w});
            std::vector<Tensor> frames;
            for (int f = 0; f < t; ++f) {
                Tensor x(Shape{2, h, w});
                for (auto& v : x.values())
                    v = static_cast<float>(rng.normal());
                frames.push_back(x);
            }
            const auto back = seq::desequentialize(seq::interleave(frames, order));
            for (int f = 0; f < t; ++f)
                pass = pass && identical(back[f], frames[f]);
        }
        report("interleave round-trip", pass, "50 random clips");
    }
    return all ? ok : numeric_failure;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"MambaVSR desk-scale toolkit", "mambavsr"};
    app.require_subcommand(1);

    SrArgs sr;
    std::uint64_t sr_seed = 0;
    auto* c_sr = app.add_subcommand("sr", "super-resolve a clip x4");
    c_sr->add_option("--input", sr.input, "directory of LR frames")->required();
    c_sr->add_option("--output", sr.output, "output directory")->required();
    c_sr->add_option("--weights", sr.weights, "MVSRW1 weights file")->required();
    c_sr->add_option("--config", sr.config, "model config")->required();
    c_sr->add_option("--scan-mode", sr.scan_mode, "raster | fiedler | content_aware");
    c_sr->add_option("--flows", sr.flows, "directory of flow_fwd_/flow_bwd_ MVT1 files");
    c_sr->add_option("--gt", sr.gt, "ground-truth HR frames; enables metrics.csv");
    c_sr->add_option("--channel", sr.channel, "metric channel: rgb | y");
    auto* sr_seed_opt = c_sr->add_option("--seed", sr_seed, "override config seed");

    std::string pa, pb, pchannel = "rgb", pcsv;
    auto* c_ps = app.add_subcommand("psnr-ssim", "compare two frames or clips");
    c_ps->add_option("a", pa)->required();
    c_ps->add_option("b", pb)->required();
    c_ps->add_option("--channel", pchannel, "rgb | y");
    c_ps->add_option("--csv", pcsv, "also write the CSV here");

    std::string vin, vcfg, vprefix = "scan";
    auto* c_viz = app.add_subcommand("scan-viz", "export the scan order of one frame");
    c_viz->add_option("--input", vin)->required();
    c_viz->add_option("--config", vcfg);
    c_viz->add_option("--output", vprefix, "output prefix for .csv/.png");

    int bl = 256, bc = 8, bn = 16, bchunk = 32, brepeat = 10;
    std::uint64_t bseed = 0;
    auto* c_bench = app.add_subcommand("bench", "chunked scan throughput and deviation");
    c_bench->add_option("--L", bl);
    c_bench->add_option("--C", bc);
    c_bench->add_option("--N", bn);
    c_bench->add_option("--chunk", bchunk);
    c_bench->add_option("--seed", bseed);
    c_bench->add_option("--repeat", brepeat);

    std::string din, dout;
    int dscale = 4;
    auto* c_deg = app.add_subcommand("degrade", "bicubic downsample a clip");
    c_deg->add_option("--input", din)->required();
    c_deg->add_option("--output", dout)->required();
    c_deg->add_option("--scale", dscale);

    std::string aref, anbr, aprefix = "align";
    int apatch = 8, aradius = 2;
    auto* c_align = app.add_subcommand("align", "patch-align a neighbour frame onto a reference");
    c_align->add_option("--ref", aref)->required();
    c_align->add_option("--nbr", anbr)->required();
    c_align->add_option("--patch", apatch);
    c_align->add_option("--radius", aradius);
    c_align->add_option("--output", aprefix, "output prefix for .mvt/.csv");

    std::string icfg, iout;
    std::uint64_t iseed = 0;
    auto* c_init = app.add_subcommand("init", "write freshly initialized weights");
    c_init->add_option("--config", icfg)->required();
    c_init->add_option("--output", iout)->required();
    auto* iseed_opt = c_init->add_option("--seed", iseed);

    TrainArgs tr;
    auto* c_train = app.add_subcommand("train", "overfit a clip with Adam");
    c_train->add_option("--config", tr.config)->required();
    c_train->add_option("--lr-dir", tr.lr_dir)->required();
    c_train->add_option("--hr-dir", tr.hr_dir)->required();
    c_train->add_option("--output", tr.output)->required();
    c_train->add_option("--weights", tr.weights_in, "start from these weights");
    c_train->add_option("--flows", tr.flows);
    c_train->add_option("--steps", tr.steps);
    c_train->add_option("--rate", tr.rate, "learning rate");
    c_train->add_flag("--cosine", tr.cosine, "cosine-annealed learning rate");
    c_train->add_option("--log-every", tr.log_every);

    std::uint64_t vseed = 0;
    auto* c_verify = app.add_subcommand("verify", "run the built-in oracle fixtures");
    c_verify->add_option("--seed", vseed);

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? ok : bad_args;
    }

    try {
        if (c_sr->parsed()) {
            if (*sr_seed_opt)
                sr.seed = sr_seed;
            return cmd_sr(sr, out);
        }
        if (c_ps->parsed())
            return cmd_psnr_ssim(pa, pb, pchannel, pcsv, out);
        if (c_viz->parsed())
            return cmd_scan_viz(vin, vcfg, vprefix, out);
        if (c_bench->parsed())
            return cmd_bench(bl, bc, bn, bchunk, bseed, brepeat, out);
        if (c_deg->parsed())
            return cmd_degrade(din, dout, dscale, out);
        if (c_align->parsed())
            return cmd_align(aref, anbr, apatch, aradius, aprefix, out);
        if (c_init->parsed())
            return cmd_init(icfg, iout, *iseed_opt ? std::optional<std::uint64_t>(iseed) : std::nullopt, out);
        if (c_train->parsed())
            return cmd_train(tr, out);
        if (c_verify->parsed())
            return cmd_verify(vseed, out);
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return io_failure;
    } catch (const FormatError& e) {
        err << "error: " << e.what() << "\n";
        return io_failure;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return io_failure;
    } catch (const ModelMismatchError& e) {
        err << "error: " << e.what() << "\n";
        return model_mismatch;
    } catch (const NumericError& e) {
        err << "error: " << e.what() << "\n";
        return numeric_failure;
    } catch (const ShapeError& e) {
        err << "error: " << e.what() << "\n";
        return bad_args;
    }
    return bad_args;
}

int main(int argc, char** argv)
{
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

} // namespace mvsr::cli
