#include "mambavsr/cli.hpp"
#include "mambavsr/image_io.hpp"
#include "mambavsr/metrics.hpp"
#include "mambavsr/mvt_io.hpp"
#include "mambavsr/ops.hpp"
#include "mambavsr/pipeline.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace mvsr;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result run(const std::vector<std::string>& args)
{
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("mvsr_test_cli_" + name))
    {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::string> lines(const std::string& text)
{
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);)
        out.push_back(l);
    return out;
}

void write_clip(const fs::path& dir, const std::vector<Tensor>& frames)
{
    fs::create_directories(dir);
    for (std::size_t i = 0; i < frames.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%04zu.png", i);
        io::write_png(dir / name, frames[i]);
    }
}

const char* kSmallConfig = "channels = 8\nwindow = 4\nheads = 2\nstate_dim = 4\nblocks_per_stage = 1\n"
                           "compass_factor = 2\ntop_k = 4\npatch = 4\nradius = 1\n";

} // namespace

TEST_CASE("argument errors exit with 2")
{
    CHECK(run({}).code == cli::bad_args);
    CHECK(run({"frobnicate"}).code == cli::bad_args);
    CHECK(run({"bench", "--L", "zero"}).code == cli::bad_args);
    CHECK(run({"bench", "--L", "0"}).code == cli::bad_args);
    CHECK(run({"sr", "--input", "x"}).code == cli::bad_args);
    CHECK(run({"--help"}).code == cli::ok);
}

TEST_CASE("bench output format")
{
    auto r = run({"bench", "--L", "256", "--C", "8", "--N", "16", "--chunk", "32"});
    CHECK(r.code == cli::ok);
    auto ls = lines(r.out);
    REQUIRE(ls.size() == 2);
    CHECK(ls[0] == "L,C,N,chunk,tokens_per_s,max_dev,status");
    CHECK(ls[1].rfind("256,8,16,32,", 0) == 0);
    CHECK(ls[1].substr(ls[1].size() - 3) == ",OK");

    r = run({"bench", "--L", "64", "--C", "2", "--N", "4", "--chunk", "64"});
    ls = lines(r.out);
    REQUIRE(ls.size() == 2);
    CHECK(ls[1].find(",0,OK") != std::string::npos);
}

TEST_CASE("psnr-ssim on tensor fixtures")
{
    TempDir dir("psnr");
    io::write_mvt(dir / "a.mvt", Tensor(Shape{3, 16, 16}, 0.5f));
    io::write_mvt(dir / "b.mvt", Tensor(Shape{3, 16, 16}, 0.25f));
    auto r = run({"psnr-ssim", dir / "a.mvt", dir / "b.mvt", "--csv", dir / "m.csv"});
    REQUIRE(r.code == cli::ok);
    auto ls = lines(slurp(dir / "m.csv"));
    REQUIRE(ls.size() == 3);
    CHECK(ls[0] == "frame,psnr_db,ssim");
    CHECK(ls[1].rfind("0,12.041200,", 0) == 0);
    CHECK(ls[2].rfind("mean,12.041200,", 0) == 0);

    r = run({"psnr-ssim", dir / "a.mvt", dir / "a.mvt"});
    ls = lines(r.out);
    CHECK(ls[1] == "0,inf,1.00000000");
    CHECK(ls[2] == "mean,inf,1.00000000");

    io::write_mvt(dir / "c.mvt", Tensor(Shape{3, 16, 12}, 0.5f));
    CHECK(run({"psnr-ssim", dir / "a.mvt", dir / "c.mvt"}).code == cli::bad_args);
    CHECK(run({"psnr-ssim", dir / "a.mvt", dir / "missing.mvt"}).code == cli::io_failure);
    CHECK(run({"psnr-ssim", dir / "a.mvt", dir / "a.mvt", "--channel", "lab"}).code == cli::bad_args);
}

TEST_CASE("scan-viz rank maps")
{
    TempDir dir("viz");
    io::write_png(dir / "flat.png", Tensor(Shape{3, 16, 16}, 0.5f));
    REQUIRE(run({"scan-viz", "--input", dir / "flat.png", "--output", dir / "flat"}).code == cli::ok);
    auto ls = lines(slurp(dir / "flat.csv"));
    REQUIRE(ls.size() == 257);
    CHECK(ls[0] == "site_index,rank");
    for (int s = 0; s < 256; ++s)
        CHECK(ls[s + 1] == std::to_string(s) + "," + std::to_string(s));
    CHECK(io::read_png(dir / "flat.png").dim(1) == 16);

    Tensor two(Shape{3, 16, 24}, 0.1f);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 12; ++x)
                two.at(c, y, x) = 0.9f;
    io::write_png(dir / "two.png", two);
    REQUIRE(run({"scan-viz", "--input", dir / "two.png", "--output", dir / "two"}).code == cli::ok);
    ls = lines(slurp(dir / "two.csv"));
    REQUIRE(ls.size() == 16 * 24 + 1);
    std::vector<int> by_rank(16 * 24, -1);
    for (std::size_t i = 1; i < ls.size(); ++i) {
        int site = 0, rank = 0;
        REQUIRE(std::sscanf(ls[i].c_str(), "%d,%d", &site, &rank) == 2);
        REQUIRE(rank >= 0);
        REQUIRE(rank < 16 * 24);
        CHECK(by_rank[rank] == -1);
        by_rank[rank] = site;
    }
    int same = 0;
    for (int k = 0; k + 1 < 16 * 24; ++k)
        same += ((by_rank[k] % 24) < 12) == ((by_rank[k + 1] % 24) < 12);
    CHECK(same >= 0.9 * (16 * 24 - 1));
}

TEST_CASE("degrade and align")
{
    TempDir dir("degrade");
    Rng rng(1);
    write_clip(dir.path / "hr", {oracle::random_tensor(rng, {3, 32, 32}, 0, 1), oracle::random_tensor(rng, {3, 32, 32}, 0, 1)});
    REQUIRE(run({"degrade", "--input", dir / "hr", "--output", dir / "lr"}).code == cli::ok);
    const auto lr = io::load_clip(dir.path / "lr");
    REQUIRE(lr.frames.size() == 2);
    CHECK(lr.frames[0].shape() == Shape{3, 8, 8});
    CHECK(lr.names[1] == "0001.png");

    // Neighbour = reference shifted right by one 4-pixel patch.
    const Tensor ref = oracle::random_tensor(rng, {3, 16, 16});
    Tensor nbr(ref.shape());
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x)
                nbr.at(c, y, x) = ref.at(c, y, std::max(x - 4, 0));
    io::write_mvt(dir / "ref.mvt", ref);
    io::write_mvt(dir / "nbr.mvt", nbr);
    REQUIRE(run({"align", "--ref", dir / "ref.mvt", "--nbr", dir / "nbr.mvt", "--patch", "4", "--radius", "2",
                 "--output", dir / "al"})
                .code == cli::ok);
    const Tensor disp = io::read_mvt(dir / "al.mvt");
    REQUIRE(disp.shape() == Shape{2, 4, 4});
    for (int py = 0; py < 4; ++py)
        for (int px = 0; px < 3; ++px) {
            CHECK(disp.at(0, py, px) == 1.0f);
            CHECK(disp.at(1, py, px) == 0.0f);
        }
    CHECK(lines(slurp(dir / "al.csv"))[0] == "mean_abs_displacement,tie_rate");
}

TEST_CASE("sr end to end: bicubic identity, metrics, determinism, error codes")
{
    TempDir dir("sr");
    Rng rng(2);
    std::vector<Tensor> hr, lr;
    for (int i = 0; i < 2; ++i) {
        hr.push_back(io::quantize8(oracle::random_tensor(rng, {3, 32, 32}, 0, 1)));
        lr.push_back(io::quantize8(bicubic_resize(hr.back(), 0.25f)));
    }
    write_clip(dir.path / "lr", lr);
    write_clip(dir.path / "hr", hr);
    {
        std::ofstream(dir / "model.cfg") << kSmallConfig;
    }
    REQUIRE(run({"init", "--config", dir / "model.cfg", "--output", dir / "w.mvsrw"}).code == cli::ok);

    const std::vector<std::string> sr_args{"sr",         "--input", dir / "lr",  "--config", dir / "model.cfg",
                                           "--weights",  dir / "w.mvsrw", "--gt", dir / "hr"};
    auto with_output = [&](const std::string& out) {
        auto a = sr_args;
        a.push_back("--output");
        a.push_back(out);
        return a;
    };
    auto r = run(with_output(dir / "out1"));
    REQUIRE(r.code == cli::ok);
    REQUIRE(run(with_output(dir / "out2")).code == cli::ok);
    for (const std::string f : {"0000.png", "0001.png", "metrics.csv"})
        CHECK(slurp(dir.path / "out1" / f) == slurp(dir.path / "out2" / f));

    // Initialized weights reproduce the bicubic baseline metrics.
    std::vector<Tensor> bic;
    for (const auto& f : io::load_clip(dir.path / "lr").frames)
        bic.push_back(io::quantize8(bicubic_resize(f, 4.0f)));
    const auto base = metrics::evaluate(bic, hr, metrics::ChannelMode::rgb);
    const auto ls = lines(slurp(dir.path / "out1" / "metrics.csv"));
    REQUIRE(ls.size() == 4);
    CHECK(ls[0] == "frame,psnr_db,ssim");
    double mean_psnr = 0;
    REQUIRE(std::sscanf(ls[3].c_str(), "mean,%lf", &mean_psnr) == 1);
    CHECK(std::abs(mean_psnr - base.mean_psnr) <= 0.01);

    // Output against itself.
    r = run({"psnr-ssim", dir / "out1/0000.png", dir / "out1/0000.png"});
    CHECK(lines(r.out)[1] == "0,inf,1.00000000");

    // Error codes.
    auto bad = sr_args;
    bad[2] = dir / "nowhere";
    bad.push_back("--output");
    bad.push_back(dir / "out3");
    CHECK(run(bad).code == cli::io_failure);
    {
        std::ofstream(dir / "wide.cfg") << "channels = 16\nwindow = 4\nheads = 2\n";
    }
    auto mismatch = with_output(dir / "out4");
    mismatch[4] = dir / "wide.cfg";
    CHECK(run(mismatch).code == cli::model_mismatch);
    {
        std::ofstream(dir / "broken.cfg") << "channels = 8\nbogus = 1\n";
    }
    auto broken = with_output(dir / "out5");
    broken[4] = dir / "broken.cfg";
    CHECK(run(broken).code == cli::bad_args);
    {
        std::ofstream(dir / "trunc.mvsrw") << "MVSRW1";
    }
    auto trunc = with_output(dir / "out6");
    trunc[6] = dir / "trunc.mvsrw";
    CHECK(run(trunc).code == cli::io_failure);

    // Non-finite weights surface as a numeric failure.
    auto w = model::load_weights(dir / "w.mvsrw");
    w.tensors.at("recon.out.bias")[0] = std::numeric_limits<float>::infinity();
    model::save_weights(w, dir / "inf.mvsrw");
    auto nonfinite = with_output(dir / "out7");
    nonfinite[6] = dir / "inf.mvsrw";
    CHECK(run(nonfinite).code == cli::numeric_failure);
}

TEST_CASE("train then verify")
{
    TempDir dir("train");
    Rng rng(3);
    std::vector<Tensor> hr, lr;
    for (int i = 0; i < 2; ++i) {
        hr.push_back(io::quantize8(oracle::random_tensor(rng, {3, 32, 32}, 0, 1)));
        lr.push_back(io::quantize8(bicubic_resize(hr.back(), 0.25f)));
    }
    write_clip(dir.path / "lr", lr);
    write_clip(dir.path / "hr", hr);
    {
        std::ofstream(dir / "model.cfg") << kSmallConfig;
    }
    const auto r = run({"train", "--config", dir / "model.cfg", "--lr-dir", dir / "lr", "--hr-dir", dir / "hr",
                        "--output", dir / "t.mvsrw", "--steps", "3", "--rate", "1e-3", "--log-every", "1"});
    REQUIRE(r.code == cli::ok);
    const auto ls = lines(r.out);
    REQUIRE(ls.size() == 4);
    CHECK(ls[0].rfind("step 0 loss ", 0) == 0);
    const auto w = model::load_weights(dir / "t.mvsrw");
    CHECK_NOTHROW(model::check_compatible(w, model::load_config(dir / "model.cfg")));

    const auto v = run({"verify"});
    CHECK(v.code == cli::ok);
    CHECK(v.out.find("FAIL") == std::string::npos);
}
