#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <png.h>

#include "hazeforge/core.hpp"

namespace hazeforge {

// ---------------------------------------------------------------------------
// 8-bit RGB PNG
// ---------------------------------------------------------------------------

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FileHandle = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] inline void png_error_handler(png_structp png, png_const_charp msg) {
    // longjmp back into the reader/writer; message retrieved there
    (void)msg;
    longjmp(png_jmpbuf(png), 1);
}

inline void png_warning_handler(png_structp, png_const_charp) {}

} // namespace detail

// Reads an 8-bit RGB PNG into an Image with values in [0, 1]. Grayscale and
// palette files are expanded to RGB; an alpha channel is dropped.
inline Image load_image(const std::filesystem::path& path) {
    detail::FileHandle file(std::fopen(path.string().c_str(), "rb"));
    if (!file)
        throw IoError("cannot open \"" + path.string() + "\" for reading");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                             detail::png_error_handler, detail::png_warning_handler);
    if (!png)
        throw IoError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png_create_info_struct failed");
    }

    std::vector<std::uint8_t> bytes;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("failed to decode PNG \"" + path.string() + "\"");
    }

    png_init_io(png, file.get());
    png_read_info(png, info);

    png_set_strip_16(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS))
        png_set_tRNS_to_alpha(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
        png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const int height = static_cast<int>(png_get_image_height(png, info));
    const int width = static_cast<int>(png_get_image_width(png, info));
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    if (rowbytes != static_cast<std::size_t>(width) * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("unexpected PNG layout in \"" + path.string() + "\"");
    }

    bytes.resize(static_cast<std::size_t>(height) * rowbytes);
    rows.resize(height);
    for (int y = 0; y < height; ++y)
        rows[y] = bytes.data() + static_cast<std::size_t>(y) * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Grid g(height, width, 3);
    for (std::size_t i = 0; i < bytes.size(); ++i)
        g.values()[i] = bytes[i] / 255.0;
    return Image(std::move(g));
}

// Writes an Image as an 8-bit RGB PNG; values are scaled by 255 and rounded
// to nearest. Output bytes are deterministic for identical pixel data.
inline void save_image(const std::filesystem::path& path, const Image& image) {
    detail::FileHandle file(std::fopen(path.string().c_str(), "wb"));
    if (!file)
        throw IoError("cannot open \"" + path.string() + "\" for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                              detail::png_error_handler, detail::png_warning_handler);
    if (!png)
        throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png_create_info_struct failed");
    }

    const int height = image.height();
    const int width = image.width();
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(height) * width * 3);
    const auto& v = image.grid().values();
    for (std::size_t i = 0; i < bytes.size(); ++i)
        bytes[i] = static_cast<std::uint8_t>(std::lround(v[i] * 255.0));

    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y)
        rows[y] = bytes.data() + static_cast<std::size_t>(y) * width * 3;

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed to encode PNG \"" + path.string() + "\"");
    }

    png_init_io(png, file.get());
    png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_set_compression_level(png, 6);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// ---------------------------------------------------------------------------
// Parameter-map file format (HFPM)
//
// 16-byte header: magic "HFPM", u8 channels, u8 reserved, u16 reserved,
// u32 height, u32 width (little-endian), then row-major float32 data.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

} // namespace detail

inline void save_map(const std::filesystem::path& path, const Grid& grid) {
    std::vector<std::uint8_t> buf;
    buf.reserve(16 + grid.size() * 4);
    buf.insert(buf.end(), {'H', 'F', 'P', 'M'});
    buf.push_back(static_cast<std::uint8_t>(grid.channels()));
    buf.push_back(0);
    detail::put_u16(buf, 0);
    detail::put_u32(buf, static_cast<std::uint32_t>(grid.height()));
    detail::put_u32(buf, static_cast<std::uint32_t>(grid.width()));
    for (double d : grid.values()) {
        const float f = static_cast<float>(d);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        detail::put_u32(buf, bits);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot open \"" + path.string() + "\" for writing");
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out)
        throw IoError("short write to \"" + path.string() + "\"");
}

inline Grid load_map(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open \"" + path.string() + "\" for reading");
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 16 || std::memcmp(buf.data(), "HFPM", 4) != 0)
        throw IoError("\"" + path.string() + "\" is not a parameter-map file");
    const int channels = buf[4];
    const int height = static_cast<int>(detail::get_u32(buf.data() + 8));
    const int width = static_cast<int>(detail::get_u32(buf.data() + 12));
    const std::size_t count = static_cast<std::size_t>(height) * width * channels;
    if (buf.size() != 16 + count * 4)
        throw IoError("\"" + path.string() + "\": payload size does not match header");
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint32_t bits = detail::get_u32(buf.data() + 16 + i * 4);
        float f;
        std::memcpy(&f, &bits, 4);
        values[i] = static_cast<double>(f);
    }
    return Grid(height, width, channels, std::move(values));
}

} // namespace hazeforge
