#pragma once

#include "mambavsr/autograd.hpp"
#include "mambavsr/glssb.hpp"
#include "mambavsr/propagation.hpp"
#include "mambavsr/scan_compass.hpp"
#include "mambavsr/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mvsr::model {

using prop::FlowSet;
using prop::ScanMode;

struct ModelConfig {
    int scale = 4;
    int channels = 64;
    int window = 8;
    int heads = 4;
    int state_dim = 16;
    ScanMode scan_mode = ScanMode::content_aware;
    int stages = 2;
    int blocks_per_stage = 2;
    block::Variant block = block::Variant::wfsab_glssm;
    block::GammaMode gamma_mode = block::GammaMode::learnable;
    std::uint64_t seed = 0;

    int compass_factor = 4;
    int top_k = 8;
    float blend = 0.5f;
    float temperature = 0.1f;
    int patch = 8;
    int radius = 2;

    // Throws ShapeError on inconsistent values.
    void validate() const;
    // FNV-1a over the fields that decide parameter names and shapes.
    std::uint64_t architecture_hash() const;

    prop::PropagationConfig propagation() const;
    compass::CompassConfig compass() const;
};

// Flat "key = value" text, '#' starts a comment. Unknown keys and malformed
// values raise ShapeError naming the line.
ModelConfig parse_config(const std::string& text);
ModelConfig load_config(const std::filesystem::path& path);
std::string to_text(const ModelConfig& cfg);

ScanMode parse_scan_mode(const std::string& s);
block::Variant parse_variant(const std::string& s);
block::GammaMode parse_gamma_mode(const std::string& s);
std::string to_string(ScanMode m);
std::string to_string(block::Variant v);
std::string to_string(block::GammaMode g);

struct ModelWeights {
    std::map<std::string, Tensor> tensors;
    std::optional<std::uint64_t> config_hash;
    std::optional<std::uint64_t> seed;

    friend bool operator==(const ModelWeights& a, const ModelWeights& b);
};

// Container "MVSRW1": magic, u32 entry count, then per entry u16 name length,
// UTF-8 name, u8 rank, u32 extents, f32 payload (little-endian). Metadata is
// stored as entries "meta.config_hash" and "meta.seed" holding the 64-bit
// value as four 16-bit limbs, least significant first.
std::vector<std::uint8_t> encode_weights(const ModelWeights& w);
ModelWeights decode_weights(std::span<const std::uint8_t> bytes);
void save_weights(const ModelWeights& w, const std::filesystem::path& path);
ModelWeights load_weights(const std::filesystem::path& path);

std::int64_t count_params(const ModelWeights& w);

std::vector<ParamSpec> param_specs(const ModelConfig& cfg);
ModelWeights init_weights(const ModelConfig& cfg);
// Throws ModelMismatchError if names/shapes or the stored hash disagree.
void check_compatible(const ModelWeights& w, const ModelConfig& cfg);

// Differentiable forward over one clip. lr: per-frame [3,H,W].
std::vector<ag::Var> forward(const std::vector<Tensor>& lr, const FlowSet& flows,
                             const ModelConfig& cfg, const ParamSource& p);

// lr_clip [T,3,H,W] -> [T,3,4H,4W].
Tensor forward(const Tensor& lr_clip, const FlowSet& flows, const ModelConfig& cfg,
               const ModelWeights& w);

// Scan order used by the state-space branch for a clip of extent h x w, given
// the centre frame's shallow features.
ScanOrder scan_order(const Tensor& center_feat, const ModelConfig& cfg, const ParamSource& p);

std::vector<Tensor> split_frames(const Tensor& clip);
Tensor stack_frames(const std::vector<Tensor>& frames);

struct AdamConfig {
    float beta1 = 0.9f;
    float beta2 = 0.99f;
    float eps = 1e-8f;
};

struct AdamState {
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
    std::int64_t step = 0;
};

struct TrainSample {
    Tensor lr;  // [T,3,H,W]
    Tensor hr;  // [T,3,4H,4W]
    FlowSet flows;
};

// Mean-per-pixel Charbonnier loss averaged over the batch.
float batch_loss(const std::vector<TrainSample>& batch, const ModelConfig& cfg, const ModelWeights& w);

// One Adam update; returns the loss before the update. Throws NumericError on
// a non-finite loss.
float train_step(const std::vector<TrainSample>& batch, const ModelConfig& cfg, ModelWeights& w,
                 AdamState& state, float lr_rate, const AdamConfig& adam = {});

// Cosine annealing from base to min_rate over total steps.
float cosine_lr(float base, std::int64_t step, std::int64_t total, float min_rate = 0.0f);

} // namespace mvsr::model
