#include "mambavsr/sequentialize.hpp"

#include "mambavsr/errors.hpp"

#include <cmath>
#include <cstdlib>
#include <string>

namespace mvsr::seq {

namespace {

double zncc(const Tensor& a, int ay, int ax, const Tensor& b, int by, int bx, int patch)
{
    const int c = a.dim(0);
    const double n = static_cast<double>(c) * patch * patch;
    double ma = 0.0, mb = 0.0;
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < patch; ++y)
            for (int x = 0; x < patch; ++x) {
                ma += a.at(ch, ay + y, ax + x);
                mb += b.at(ch, by + y, bx + x);
            }
    ma /= n;
    mb /= n;
    double num = 0.0, da = 0.0, db = 0.0;
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < patch; ++y)
            for (int x = 0; x < patch; ++x) {
                const double va = a.at(ch, ay + y, ax + x) - ma;
                const double vb = b.at(ch, by + y, bx + x) - mb;
                num += va * vb;
                da += va * va;
                db += vb * vb;
            }
    const double den = std::sqrt(da * db);
    if (!(den > 1e-12))
        return 0.0;
    return num / den;
}

} // namespace

AlignResult patch_align(const Tensor& ref, const Tensor& nbr, int patch, int radius)
{
    require_same_shape(ref, nbr, "patch_align");
    if (ref.rank() != 3)
        throw ShapeError("patch_align: expected [C,H,W] features");
    if (patch < 1 || radius < 0)
        throw ShapeError("patch_align: patch must be >= 1 and radius >= 0");
    const int c = ref.dim(0), h = ref.dim(1), w = ref.dim(2);
    if (h % patch != 0 || w % patch != 0)
        throw ShapeError("patch_align: extents " + to_string(ref.shape()) +
                         " not divisible by patch " + std::to_string(patch));
    require_finite(ref, "patch_align ref");
    require_finite(nbr, "patch_align nbr");
    const int gh = h / patch, gw = w / patch;

    AlignResult r;
    r.alignment.patch = patch;
    r.alignment.radius = radius;
    r.alignment.displacements = Tensor(Shape{2, gh, gw});
    r.source_index.resize(ref.size());
    r.aligned = Tensor(ref.shape());

    for (int py = 0; py < gh; ++py) {
        for (int px = 0; px < gw; ++px) {
            double best = -2.0;
            int best_l1 = 0, bdx = 0, bdy = 0;
            bool tied = false;
            for (int dy = -radius; dy <= radius; ++dy) {
                for (int dx = -radius; dx <= radius; ++dx) {
                    const int qy = py + dy, qx = px + dx;
                    if (qy < 0 || qy >= gh || qx < 0 || qx >= gw)
                        continue;
                    const double s = zncc(ref, py * patch, px * patch, nbr, qy * patch, qx * patch, patch);
                    const int l1 = std::abs(dx) + std::abs(dy);
                    if (s > best) {
                        best = s;
                        best_l1 = l1;
                        bdx = dx;
                        bdy = dy;
                        tied = false;
                    } else if (s == best) {
                        tied = true;
                        if (l1 < best_l1) {
                            best_l1 = l1;
                            bdx = dx;
                            bdy = dy;
                        }
                    }
                }
            }
            r.ties += tied ? 1 : 0;
            r.alignment.displacements.at(0, py, px) = static_cast<float>(bdx);
            r.alignment.displacements.at(1, py, px) = static_cast<float>(bdy);
            for (int ch = 0; ch < c; ++ch)
                for (int y = 0; y < patch; ++y)
                    for (int x = 0; x < patch; ++x) {
                        const int oy = py * patch + y, ox = px * patch + x;
                        const int sy = (py + bdy) * patch + y, sx = (px + bdx) * patch + x;
                        const int dst = (ch * h + oy) * w + ox;
                        const int src = (ch * h + sy) * w + sx;
                        r.source_index[dst] = src;
                        r.aligned[dst] = nbr[src];
                    }
        }
    }
    return r;
}

ag::Var apply_alignment(const ag::Var& nbr, const AlignResult& r)
{
    auto idx = std::make_shared<const std::vector<int>>(r.source_index);
    return ag::gather(nbr, idx, nbr.shape());
}

AlignmentSummary summarize(const AlignResult& r)
{
    const Tensor& d = r.alignment.displacements;
    const int n = d.dim(1) * d.dim(2);
    AlignmentSummary s;
    double total = 0.0;
    for (int i = 0; i < n; ++i)
        total += std::abs(d[i]) + std::abs(d[n + i]);
    s.mean_abs_displacement = n ? total / n : 0.0;
    s.tie_rate = n ? static_cast<double>(r.ties) / n : 0.0;
    return s;
}

std::vector<int> interleave_index(int frames, int channels, const ScanOrder& order)
{
    const int l = order.size();
    std::vector<int> idx(static_cast<std::size_t>(frames) * l * channels);
    std::size_t o = 0;
    for (int j = 0; j < l; ++j) {
        const int site = order.perm()[j];
        for (int f = 0; f < frames; ++f)
            for (int c = 0; c < channels; ++c)
                idx[o++] = (f * channels + c) * l + site;
    }
    return idx;
}

std::vector<int> desequentialize_index(int frames, int channels, const ScanOrder& order)
{
    const int l = order.size();
    std::vector<int> idx(static_cast<std::size_t>(frames) * l * channels);
    std::size_t o = 0;
    for (int f = 0; f < frames; ++f)
        for (int c = 0; c < channels; ++c)
            for (int site = 0; site < l; ++site)
                idx[o++] = (order.inv()[site] * frames + f) * channels + c;
    return idx;
}

namespace {

void check_frames(const std::vector<Shape>& shapes, const ScanOrder& order)
{
    if (shapes.empty())
        throw ShapeError("interleave: need at least one frame");
    for (const auto& s : shapes) {
        if (s.size() != 3 || s != shapes[0])
            throw ShapeError("interleave: frames must share one [C,H,W] shape");
    }
    const Grid g = order.target_grid();
    if (g.h != shapes[0][1] || g.w != shapes[0][2])
        throw ShapeError("interleave: scan order grid " + std::to_string(g.h) + "x" +
                         std::to_string(g.w) + " does not match frames " + to_string(shapes[0]));
}

} // namespace

TokenSequence interleave(const std::vector<Tensor>& frames, const ScanOrder& order)
{
    std::vector<Shape> shapes;
    for (const auto& f : frames)
        shapes.push_back(f.shape());
    check_frames(shapes, order);
    const int t = static_cast<int>(frames.size()), c = frames[0].dim(0);
    Tensor stacked(Shape{t, c, frames[0].dim(1), frames[0].dim(2)});
    std::size_t off = 0;
    for (const auto& f : frames) {
        std::copy(f.values().begin(), f.values().end(), stacked.data() + off);
        off += f.size();
    }
    const auto idx = interleave_index(t, c, order);
    TokenSequence s;
    s.data = gather(stacked, idx, Shape{t * order.size(), c});
    s.order = order;
    s.frames = t;
    return s;
}

std::vector<Tensor> desequentialize(const TokenSequence& seq)
{
    if (seq.frames < 1 || seq.data.rank() != 2 || seq.data.dim(0) % seq.frames != 0)
        throw ShapeError("desequentialize: sequence length not divisible by frame count");
    const int l = seq.data.dim(0) / seq.frames, c = seq.data.dim(1);
    if (l != seq.order.size())
        throw ShapeError("desequentialize: sequence length does not match scan order");
    const Grid g = seq.order.target_grid();
    const auto idx = desequentialize_index(seq.frames, c, seq.order);
    const Tensor stacked = gather(seq.data, idx, Shape{seq.frames, c, g.h, g.w});
    std::vector<Tensor> out;
    const std::size_t per = static_cast<std::size_t>(c) * l;
    for (int f = 0; f < seq.frames; ++f)
        out.emplace_back(Shape{c, g.h, g.w},
                         std::vector<float>(stacked.data() + f * per, stacked.data() + (f + 1) * per));
    return out;
}

ag::Var interleave(const std::vector<ag::Var>& frames, const ScanOrder& order)
{
    std::vector<Shape> shapes;
    for (const auto& f : frames)
        shapes.push_back(f.shape());
    check_frames(shapes, order);
    const int t = static_cast<int>(frames.size()), c = frames[0].dim(0);
    const ag::Var stacked = t == 1 ? frames[0] : ag::concat0(frames);
    auto idx = std::make_shared<const std::vector<int>>(interleave_index(t, c, order));
    return ag::gather(stacked, idx, Shape{t * order.size(), c});
}

std::vector<ag::Var> desequentialize(const ag::Var& seq, int frames, const ScanOrder& order)
{
    if (frames < 1 || seq.shape().size() != 2 || seq.dim(0) != frames * order.size())
        throw ShapeError("desequentialize: sequence length not divisible by frame count");
    const int c = seq.dim(1);
    const Grid g = order.target_grid();
    auto idx = std::make_shared<const std::vector<int>>(desequentialize_index(frames, c, order));
    const ag::Var stacked = ag::gather(seq, idx, Shape{frames * c, g.h, g.w});
    if (frames == 1)
        return {stacked};
    std::vector<ag::Var> out;
    for (int f = 0; f < frames; ++f)
        out.push_back(ag::slice0(stacked, f * c, (f + 1) * c));
    return out;
}

} // namespace mvsr::seq
