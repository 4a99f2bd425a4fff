#include "mambavsr/image_io.hpp"

#include "mambavsr/errors.hpp"
#include "mambavsr/mvt_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

namespace mvsr::io {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::uint8_t to_byte(float v)
{
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

void write_rows(const std::filesystem::path& path, int h, int w, int color_type, int channels,
                const std::vector<std::uint8_t>& pixels)
{
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f)
        throw IoError("cannot open '" + path.string() + "' for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed to encode '" + path.string() + "'");
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < h; ++y)
        png_write_row(png, const_cast<png_bytep>(pixels.data() + static_cast<std::size_t>(y) * w * channels));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    if (std::fflush(f.get()) != 0)
        throw IoError("failed to write '" + path.string() + "'");
}

} // namespace

Tensor read_png(const std::filesystem::path& path)
{
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f)
        throw IoError("cannot open '" + path.string() + "'");
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
        throw IoError("'" + path.string() + "' is not a PNG file");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng initialization failed");
    }
    std::vector<std::uint8_t> buf;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("failed to decode '" + path.string() + "'");
    }
    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    if (png_get_bit_depth(png, info) == 16)
        png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE)
        png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
        png_set_expand_gray_1_2_4_to_8(png);
        png_set_gray_to_rgb(png);
    }
    if (color & PNG_COLOR_MASK_ALPHA)
        png_set_strip_alpha(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    if (rowbytes != static_cast<std::size_t>(w) * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("'" + path.string() + "': unsupported PNG layout");
    }
    buf.resize(rowbytes * h);
    std::vector<png_bytep> rows(h);
    for (int y = 0; y < h; ++y)
        rows[y] = buf.data() + rowbytes * y;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Tensor t(Shape{3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                t.at(c, y, x) = buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0f;
    return t;
}

void write_png(const std::filesystem::path& path, const Tensor& img)
{
    if (img.rank() != 3 || (img.dim(0) != 3 && img.dim(0) != 1))
        throw ShapeError("write_png: expected [3,H,W] or [1,H,W], got " + to_string(img.shape()));
    const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
    std::vector<std::uint8_t> px(static_cast<std::size_t>(h) * w * c);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch)
                px[(static_cast<std::size_t>(y) * w + x) * c + ch] = to_byte(img.at(ch, y, x));
    write_rows(path, h, w, c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, c, px);
}

void write_png_gray(const std::filesystem::path& path, const std::vector<std::uint8_t>& pixels, int h, int w)
{
    if (pixels.size() != static_cast<std::size_t>(h) * w)
        throw ShapeError("write_png_gray: pixel count does not match extents");
    write_rows(path, h, w, PNG_COLOR_TYPE_GRAY, 1, pixels);
}

Tensor quantize8(const Tensor& img)
{
    Tensor out(img.shape());
    for (std::size_t i = 0; i < img.size(); ++i)
        out[i] = to_byte(img[i]) / 255.0f;
    return out;
}

Clip load_clip(const std::filesystem::path& dir)
{
    std::error_code ec;
    if (!std::filesystem::is_directory(dir, ec))
        throw IoError("'" + dir.string() + "' is not a directory");
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        const auto ext = e.path().extension().string();
        if (e.is_regular_file() && (ext == ".png" || ext == ".mvt"))
            files.push_back(e.path());
    }
    std::sort(files.begin(), files.end(),
              [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });
    if (files.empty())
        throw IoError("no .png or .mvt frames in '" + dir.string() + "'");
    Clip clip;
    for (const auto& p : files) {
        clip.names.push_back(p.filename().string());
        clip.frames.push_back(p.extension() == ".png" ? read_png(p) : read_mvt(p));
        if (clip.frames.back().shape() != clip.frames[0].shape())
            throw ShapeError("frame '" + clip.names.back() + "' has shape " +
                             to_string(clip.frames.back().shape()) + ", expected " +
                             to_string(clip.frames[0].shape()));
    }
    return clip;
}

} // namespace mvsr::io
