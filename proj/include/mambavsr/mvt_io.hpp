#pragma once

#include "mambavsr/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace mvsr::io {

// Raw tensor format "MVT1":
//   4 bytes  magic "MVT1"
//   u8       rank
//   rank x u32 little-endian extents
//   f32 little-endian payload, row-major
std::vector<std::uint8_t> encode_mvt(const Tensor& t);
Tensor decode_mvt(std::span<const std::uint8_t> bytes);

void write_mvt(const std::filesystem::path& path, const Tensor& t);
Tensor read_mvt(const std::filesystem::path& path);

// Little-endian primitives shared with the weights container.
void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v);
void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v);
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_f32(std::vector<std::uint8_t>& out, float v);

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    bool has(std::size_t n) const noexcept { return pos_ + n <= bytes_.size(); }
    std::size_t position() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

    // Each getter throws TruncatedFileError with `context` when short.
    std::uint8_t u8(const std::string& context);
    std::uint16_t u16(const std::string& context);
    std::uint32_t u32(const std::string& context);
    float f32(const std::string& context);
    std::span<const std::uint8_t> bytes(std::size_t n, const std::string& context);

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

} // namespace mvsr::io
