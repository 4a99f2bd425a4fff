#include "mambavsr/errors.hpp"
#include "mambavsr/metrics.hpp"
#include "mambavsr/ops.hpp"
#include "mambavsr/pipeline.hpp"
#include "mambavsr/scan_compass.hpp"
#include "mambavsr/sequentialize.hpp"
#include "mambavsr/ssm_kernel.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace mvsr;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a)
{
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t)
{
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    Array out(shape);
    std::copy(t.data(), t.data() + t.size(), out.mutable_data());
    return out;
}

std::vector<Tensor> frames_of(const Array& clip, const char* what, int rank = 4)
{
    if (clip.ndim() != rank)
        throw ShapeError(std::string(what) + ": expected a [T,C,H,W] array");
    return model::split_frames(to_tensor(clip));
}

ScanOrder order_of(const std::vector<int>& perm, int h, int w) { return ScanOrder::from_perm(perm, {h, w}, {h, w}); }

} // namespace

PYBIND11_MODULE(_core, m)
{
    m.doc() = "Video super-resolution with content-aware state-space scans";

    m.def("scan",
          [](const Array& x, const Array& delta, const Array& a, const Array& b, const Array& c, const Array& d) {
              return to_array(ssm::scan(to_tensor(x), to_tensor(delta), to_tensor(a), to_tensor(b), to_tensor(c),
                                        to_tensor(d)));
          },
          py::arg("x"), py::arg("delta"), py::arg("A"), py::arg("B"), py::arg("C"), py::arg("D"),
          "Sequential selective scan. x, delta: [L,C]; A: [C,N]; B, C: [L,N]; D: [C].");
    m.def("scan_chunked",
          [](const Array& x, const Array& delta, const Array& a, const Array& b, const Array& c, const Array& d,
             int chunk) {
              return to_array(ssm::scan_chunked(to_tensor(x), to_tensor(delta), to_tensor(a), to_tensor(b),
                                                to_tensor(c), to_tensor(d), chunk));
          },
          py::arg("x"), py::arg("delta"), py::arg("A"), py::arg("B"), py::arg("C"), py::arg("D"), py::arg("chunk"));

    m.def("fiedler",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& w) {
              if (w.ndim() != 2 || w.shape(0) != w.shape(1))
                  throw ShapeError("fiedler: expected a square affinity matrix");
              const int n = static_cast<int>(w.shape(0));
              compass::SimilarityGraph g{compass::DenseMatrix(n), Grid{1, n}};
              std::copy(w.data(), w.data() + w.size(), g.weights.a.begin());
              const auto lap = compass::laplacian(g);
              const auto r = compass::fiedler_vector(lap, {});
              const auto order = compass::order_from_fiedler(compass::cut_embedding(lap, r.vector), Grid{1, n});
              return py::make_tuple(r.eigenvalue, r.vector, order.perm());
          },
          py::arg("weights"),
          "Fiedler pair of the normalized Laplacian of an affinity matrix. Returns (eigenvalue, vector, order).");
    m.def("compass_order",
          [](const Array& feat, int factor, int top_k, float blend, float temperature) {
              const Tensor f = to_tensor(feat);
              if (f.rank() != 3)
                  throw ShapeError("compass_order: expected [C,H,W]");
              compass::CompassConfig cfg;
              cfg.factor = factor;
              cfg.similarity = {top_k, blend, temperature};
              return compass::build_compass(f, compass::averaging_embedding(f.dim(0), factor), Tensor(Shape{f.dim(0)}),
                                            cfg)
                  .perm();
          },
          py::arg("feat"), py::arg("factor") = 4, py::arg("top_k") = 8, py::arg("blend") = 0.5f,
          py::arg("temperature") = 0.1f, "Scan order over H*W sites from a block-averaged similarity graph.");

    m.def("interleave",
          [](const Array& clip, const std::vector<int>& perm) {
              const auto frames = frames_of(clip, "interleave");
              return to_array(seq::interleave(frames, order_of(perm, frames[0].dim(1), frames[0].dim(2))).data);
          },
          py::arg("clip"), py::arg("perm"), "[T,C,H,W] -> [T*H*W, C], position-major.");
    m.def("desequentialize",
          [](const Array& tokens, const std::vector<int>& perm, int frames, int h, int w) {
              seq::TokenSequence s{to_tensor(tokens), order_of(perm, h, w), frames};
              return to_array(model::stack_frames(seq::desequentialize(s)));
          },
          py::arg("tokens"), py::arg("perm"), py::arg("frames"), py::arg("height"), py::arg("width"));
    m.def("patch_align",
          [](const Array& ref, const Array& nbr, int patch, int radius) {
              const auto r = seq::patch_align(to_tensor(ref), to_tensor(nbr), patch, radius);
              return py::make_tuple(to_array(r.aligned), to_array(r.alignment.displacements));
          },
          py::arg("ref"), py::arg("nbr"), py::arg("patch") = 8, py::arg("radius") = 2,
          "Returns (aligned neighbour, [2,H/p,W/p] displacements in patches, dx then dy).");

    m.def("bicubic_resize", [](const Array& x, float scale) { return to_array(bicubic_resize(to_tensor(x), scale)); },
          py::arg("x"), py::arg("scale"));
    m.def("charbonnier", [](const Array& a, const Array& b) { return charbonnier_loss(to_tensor(a), to_tensor(b)); },
          py::arg("sr"), py::arg("hr"));
    m.def("psnr", [](const Array& a, const Array& b) { return metrics::psnr(to_tensor(a), to_tensor(b)); },
          py::arg("a"), py::arg("b"));
    m.def("ssim", [](const Array& a, const Array& b) { return metrics::ssim(to_tensor(a), to_tensor(b)); },
          py::arg("a"), py::arg("b"));

    py::class_<model::ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_static("parse", &model::parse_config, py::arg("text"))
        .def("to_text", [](const model::ModelConfig& c) { return model::to_text(c); })
        .def_readwrite("scale", &model::ModelConfig::scale)
        .def_readwrite("channels", &model::ModelConfig::channels)
        .def_readwrite("window", &model::ModelConfig::window)
        .def_readwrite("heads", &model::ModelConfig::heads)
        .def_readwrite("state_dim", &model::ModelConfig::state_dim)
        .def_readwrite("stages", &model::ModelConfig::stages)
        .def_readwrite("blocks_per_stage", &model::ModelConfig::blocks_per_stage)
        .def_readwrite("patch", &model::ModelConfig::patch)
        .def_readwrite("seed", &model::ModelConfig::seed)
        .def_property(
            "scan_mode", [](const model::ModelConfig& c) { return model::to_string(c.scan_mode); },
            [](model::ModelConfig& c, const std::string& s) { c.scan_mode = model::parse_scan_mode(s); })
        .def_property(
            "block", [](const model::ModelConfig& c) { return model::to_string(c.block); },
            [](model::ModelConfig& c, const std::string& s) { c.block = model::parse_variant(s); })
        .def_property(
            "gamma_mode", [](const model::ModelConfig& c) { return model::to_string(c.gamma_mode); },
            [](model::ModelConfig& c, const std::string& s) { c.gamma_mode = model::parse_gamma_mode(s); });

    py::class_<model::ModelWeights>(m, "ModelWeights")
        .def_static("init", &model::init_weights, py::arg("config"))
        .def_static("load", &model::load_weights, py::arg("path"))
        .def("save", [](const model::ModelWeights& w, const std::filesystem::path& p) { model::save_weights(w, p); })
        .def("num_params", &model::count_params)
        .def("names",
             [](const model::ModelWeights& w) {
                 std::vector<std::string> out;
                 for (const auto& [k, v] : w.tensors)
                     out.push_back(k);
                 return out;
             })
        .def("get", [](const model::ModelWeights& w, const std::string& k) { return to_array(w.tensors.at(k)); })
        .def("set", [](model::ModelWeights& w, const std::string& k, const Array& a) {
            Tensor t = to_tensor(a);
            require_same_shape(w.tensors.at(k), t, "ModelWeights.set " + k);
            w.tensors[k] = std::move(t);
        });

    m.def("forward",
          [](const Array& lr, const model::ModelConfig& cfg, const model::ModelWeights& w) {
              if (lr.ndim() != 4)
                  throw ShapeError("forward: expected a [T,3,h,w] array");
              const Tensor clip = to_tensor(lr);
              Tensor out;
              {
                  py::gil_scoped_release release;
                  out = model::forward(clip, {}, cfg, w);
              }
              return to_array(out);
          },
          py::arg("lr"), py::arg("config"), py::arg("weights"), "Super-resolve a [T,3,h,w] clip in [0,1].");
}
