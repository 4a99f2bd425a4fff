#pragma once

#include "mambavsr/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mvsr::io {

// 8-bit PNG -> [3,H,W] in [0,1]. Gray, palette, alpha and 16-bit inputs are
// converted to 8-bit RGB.
Tensor read_png(const std::filesystem::path& path);

// [3,H,W] or [1,H,W] in [0,1] -> 8-bit PNG (values clamped, rounded to
// nearest).
void write_png(const std::filesystem::path& path, const Tensor& img);
void write_png_gray(const std::filesystem::path& path, const std::vector<std::uint8_t>& pixels, int h, int w);

// Quantizes to 8 bits and back, exactly as write_png + read_png would.
Tensor quantize8(const Tensor& img);

struct Clip {
    std::vector<std::string> names;
    std::vector<Tensor> frames;
};

// Every *.png or *.mvt file in `dir`, lexicographic order. All frames must
// share one shape.
Clip load_clip(const std::filesystem::path& dir);

} // namespace mvsr::io
