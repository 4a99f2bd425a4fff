#include "mambavsr/mvt_io.hpp"

#include "mambavsr/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace mvsr::io {

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v)
{
    out.push_back(v);
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v)
{
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f32(std::vector<std::uint8_t>& out, float v)
{
    put_u32(out, std::bit_cast<std::uint32_t>(v));
}

std::uint8_t ByteReader::u8(const std::string& context)
{
    return bytes(1, context)[0];
}

std::uint16_t ByteReader::u16(const std::string& context)
{
    const auto b = bytes(2, context);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t ByteReader::u32(const std::string& context)
{
    const auto b = bytes(4, context);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

float ByteReader::f32(const std::string& context)
{
    return std::bit_cast<float>(u32(context));
}

std::span<const std::uint8_t> ByteReader::bytes(std::size_t n, const std::string& context)
{
    if (!has(n))
        throw TruncatedFileError("truncated data while reading " + context + " at byte " +
                                 std::to_string(pos_));
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
}

std::vector<std::uint8_t> encode_mvt(const Tensor& t)
{
    if (t.rank() > 255)
        throw FormatError("MVT1: rank exceeds 255");
    std::vector<std::uint8_t> out{'M', 'V', 'T', '1'};
    out.reserve(5 + 4 * t.shape().size() + 4 * t.size());
    put_u8(out, static_cast<std::uint8_t>(t.rank()));
    for (int d : t.shape())
        put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t.values())
        put_f32(out, v);
    return out;
}

Tensor decode_mvt(std::span<const std::uint8_t> bytes)
{
    ByteReader r(bytes);
    const auto magic = r.bytes(4, "MVT1 magic");
    if (std::memcmp(magic.data(), "MVT1", 4) != 0)
        throw MagicMismatchError("not an MVT1 tensor (bad magic)");
    const int rank = r.u8("MVT1 rank");
    Shape shape(rank);
    for (int i = 0; i < rank; ++i)
        shape[i] = static_cast<int>(r.u32("MVT1 extent " + std::to_string(i)));
    const std::size_t n = numel(shape);
    if (r.remaining() < 4 * n)
        throw TruncatedFileError("MVT1 payload truncated: expected " + std::to_string(4 * n) +
                                 " bytes, found " + std::to_string(r.remaining()));
    std::vector<float> values(n);
    for (std::size_t i = 0; i < n; ++i)
        values[i] = r.f32("MVT1 payload");
    if (r.remaining() != 0)
        throw FormatError("MVT1: trailing bytes after payload");
    return Tensor(std::move(shape), std::move(values));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw IoError("write failed for " + path.string());
}

void write_mvt(const std::filesystem::path& path, const Tensor& t)
{
    write_file(path, encode_mvt(t));
}

Tensor read_mvt(const std::filesystem::path& path)
{
    return decode_mvt(read_file(path));
}

} // namespace mvsr::io
