#pragma once

#include "mambavsr/autograd.hpp"
#include "mambavsr/scan_order.hpp"
#include "mambavsr/tensor.hpp"

#include <vector>

// Content-aware sequentialization: coarse patch alignment of neighbour
// features onto the current frame, then position-major interleaving of all
// frames along a shared scan order.
namespace mvsr::seq {

struct PatchAlignment {
    int patch = 8;
    int radius = 2;
    // [2, H/patch, W/patch]; channel 0 = dx, channel 1 = dy, in patches.
    Tensor displacements;
};

struct AlignResult {
    Tensor aligned;
    PatchAlignment alignment;
    // Gather map: aligned[i] = nbr[source_index[i]].
    std::vector<int> source_index;
    // Patches whose best score was matched exactly by another candidate.
    int ties = 0;
};

// For every patch of `ref`, picks the whole-patch displacement within
// [-radius, radius]^2 whose `nbr` patch maximizes zero-mean normalized
// cross-correlation (all channels pooled). Flat patches score 0. Ties go to the
// smaller L1 displacement, then to the earlier candidate in raster order
// (dy outer, dx inner). Candidates falling outside the patch grid are skipped.
AlignResult patch_align(const Tensor& ref, const Tensor& nbr, int patch, int radius);

// Differentiable copy through a precomputed alignment; the displacement
// choice itself carries no gradient.
ag::Var apply_alignment(const ag::Var& nbr, const AlignResult& r);

struct AlignmentSummary {
    double mean_abs_displacement = 0.0;  // mean of |dx| + |dy| over patches
    double tie_rate = 0.0;
};
AlignmentSummary summarize(const AlignResult& r);

enum class Layout { position_major_frame_minor };

struct TokenSequence {
    Tensor data;  // [T*L, C]
    ScanOrder order;
    int frames = 0;
    Layout layout = Layout::position_major_frame_minor;
};

// Gather maps between stacked frames [T,C,H,W] and the sequence [T*L,C].
// Token j*T + f holds frame f at site order.perm()[j].
std::vector<int> interleave_index(int frames, int channels, const ScanOrder& order);
std::vector<int> desequentialize_index(int frames, int channels, const ScanOrder& order);

TokenSequence interleave(const std::vector<Tensor>& frames, const ScanOrder& order);
std::vector<Tensor> desequentialize(const TokenSequence& seq);

ag::Var interleave(const std::vector<ag::Var>& frames, const ScanOrder& order);
std::vector<ag::Var> desequentialize(const ag::Var& seq, int frames, const ScanOrder& order);

} // namespace mvsr::seq
