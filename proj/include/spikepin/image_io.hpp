#pragma once

// PNG (via libpng's simplified API) and binary PGM (P5) file IO.

#include <png.h>

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "spikepin/errors.hpp"
#include "spikepin/image.hpp"

namespace spikepin::io {

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& path, const void* data, std::size_t n) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline bool is_png(const std::vector<std::uint8_t>& bytes) {
    return bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0;
}

// Decodes a PNG to grayscale. Colour inputs are converted with BT.601 luma.
inline ImageU8 decode_png_gray(const std::vector<std::uint8_t>& bytes) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
        throw IoError(std::string("png decode: ") + image.message);

    const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
    image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&image);
        throw IoError(std::string("png decode: ") + image.message);
    }
    const int w = static_cast<int>(image.width), h = static_cast<int>(image.height);
    if (color) return to_grayscale(ImageRgb{w, h, std::move(buf)});
    ImageU8 out;
    out.width = w;
    out.height = h;
    out.data = std::move(buf);
    return out;
}

inline std::vector<std::uint8_t> encode_png(const ImageU8& img) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width);
    image.height = static_cast<png_uint_32>(img.height);
    image.format = PNG_FORMAT_GRAY;
    png_alloc_size_t size = 0;
    if (!png_image_write_get_memory_size(image, size, 0, img.data.data(), 0, nullptr))
        throw IoError(std::string("png encode: ") + image.message);
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.data.data(), 0, nullptr))
        throw IoError(std::string("png encode: ") + image.message);
    out.resize(size);
    return out;
}

inline std::vector<std::uint8_t> encode_png_rgb(const ImageRgb& img) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width);
    image.height = static_cast<png_uint_32>(img.height);
    image.format = PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_get_memory_size(image, size, 0, img.data.data(), 0, nullptr))
        throw IoError(std::string("png encode: ") + image.message);
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.data.data(), 0, nullptr))
        throw IoError(std::string("png encode: ") + image.message);
    out.resize(size);
    return out;
}

namespace detail {

inline int pgm_token(const std::vector<std::uint8_t>& b, std::size_t& pos) {
    for (;;) {
        while (pos < b.size() && std::isspace(b[pos])) ++pos;
        if (pos < b.size() && b[pos] == '#') {
            while (pos < b.size() && b[pos] != '\n') ++pos;
            continue;
        }
        break;
    }
    if (pos >= b.size() || !std::isdigit(b[pos])) throw IoError("pgm decode: malformed header");
    long v = 0;
    while (pos < b.size() && std::isdigit(b[pos])) {
        v = v * 10 + (b[pos++] - '0');
        if (v > 1 << 24) throw IoError("pgm decode: header value too large");
    }
    return static_cast<int>(v);
}

}  // namespace detail

inline ImageU8 decode_pgm(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw IoError("pgm decode: not a binary P5 file");
    std::size_t pos = 2;
    const int w = detail::pgm_token(bytes, pos);
    const int h = detail::pgm_token(bytes, pos);
    const int maxval = detail::pgm_token(bytes, pos);
    if (maxval <= 0 || maxval > 255) throw IoError("pgm decode: only 8-bit maxval supported");
    ++pos;  // single whitespace before raster
    const std::size_t n = static_cast<std::size_t>(w) * h;
    if (w <= 0 || h <= 0 || bytes.size() < pos + n) throw IoError("pgm decode: truncated raster");
    ImageU8 out(w, h);
    for (std::size_t i = 0; i < n; ++i)
        out.data[i] = static_cast<std::uint8_t>(maxval == 255 ? bytes[pos + i] : bytes[pos + i] * 255 / maxval);
    return out;
}

inline std::vector<std::uint8_t> encode_pgm(const ImageU8& img) {
    const std::string header = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), img.data.begin(), img.data.end());
    return out;
}

inline ImageU8 read_gray(const std::filesystem::path& path) {
    const auto bytes = read_bytes(path);
    if (is_png(bytes)) return decode_png_gray(bytes);
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return decode_pgm(bytes);
    throw IoError("'" + path.string() + "' is neither PNG nor binary PGM");
}

inline void write_png(const std::filesystem::path& path, const ImageU8& img) {
    const auto bytes = encode_png(img);
    write_bytes(path, bytes.data(), bytes.size());
}

inline void write_pgm(const std::filesystem::path& path, const ImageU8& img) {
    const auto bytes = encode_pgm(img);
    write_bytes(path, bytes.data(), bytes.size());
}

}  // namespace spikepin::io
