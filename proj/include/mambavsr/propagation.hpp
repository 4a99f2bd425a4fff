#pragma once

#include "mambavsr/autograd.hpp"
#include "mambavsr/glssb.hpp"
#include "mambavsr/params.hpp"
#include "mambavsr/scan_order.hpp"
#include "mambavsr/tensor.hpp"

#include <optional>
#include <string>
#include <vector>

// Bidirectional second-order recurrent propagation of per-frame features.
namespace mvsr::prop {

enum class ScanMode { raster, fiedler, content_aware };
enum class Direction { backward, forward };

// forward[i] ([2,H,W]) warps frame i into the coordinates of frame i+1;
// backward[i] warps frame i+1 into frame i. Absent flows mean zero motion.
struct FlowSet {
    std::optional<Tensor> forward;   // [T-1, 2, H, W]
    std::optional<Tensor> backward;  // [T-1, 2, H, W]

    bool zero_forward() const { return !forward.has_value(); }
    bool zero_backward() const { return !backward.has_value(); }
    // Throws ShapeError unless present flows are [T-1, 2, h, w].
    void validate(int frames, int h, int w) const;
};

struct PropagationConfig {
    int channels = 64;
    int stages = 2;
    int blocks_per_stage = 2;
    ScanMode scan_mode = ScanMode::content_aware;
    block::BlockConfig block;
};

// Stage s runs backward for even s and forward for odd s.
inline Direction stage_direction(int s) { return s % 2 == 0 ? Direction::backward : Direction::forward; }

// One stage over inputs [C,H,W] x T. `order` is the window-grouped scan order
// used by the state-space branch.
std::vector<ag::Var> propagate_stage(const std::vector<ag::Var>& inputs, const FlowSet& flows,
                                     Direction dir, int stage, const ScanOrder& order,
                                     const PropagationConfig& cfg, const ParamSource& p);

std::vector<ag::Var> propagate(const std::vector<ag::Var>& features, const FlowSet& flows,
                               const ScanOrder& order, const PropagationConfig& cfg,
                               const ParamSource& p);

// Swaps flow roles for a time-reversed clip.
FlowSet reversed(const FlowSet& flows);

std::vector<ParamSpec> propagation_param_specs(const PropagationConfig& cfg);
std::string stage_prefix(int stage);

} // namespace mvsr::prop
