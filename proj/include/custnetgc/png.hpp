#pragma once

// Minimal PNG codec for the subset this project writes: 8-bit RGB/RGBA,
// non-interlaced. The encoder uses filter type 0 on every row and a fixed
// zlib level, so output bytes are stable across runs. The decoder handles
// all five standard row filters.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "custnetgc/common.hpp"

namespace custnetgc {

struct RawImage {
    int width = 0;
    int height = 0;
    int channels = 0;                  // 3 = RGB, 4 = RGBA
    std::vector<unsigned char> pixels; // row-major, interleaved
};

namespace detail {

inline void png_put_u32be(std::string& s, std::uint32_t v) {
    s.push_back(static_cast<char>((v >> 24) & 0xFF));
    s.push_back(static_cast<char>((v >> 16) & 0xFF));
    s.push_back(static_cast<char>((v >> 8) & 0xFF));
    s.push_back(static_cast<char>(v & 0xFF));
}

inline std::uint32_t png_read_u32be(const unsigned char* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

inline void png_chunk(std::string& out, const char type[4], const std::string& body) {
    png_put_u32be(out, static_cast<std::uint32_t>(body.size()));
    const std::size_t crc_start = out.size();
    out.append(type, 4);
    out += body;
    const auto crc = crc32(0, reinterpret_cast<const Bytef*>(out.data() + crc_start),
                           static_cast<uInt>(out.size() - crc_start));
    png_put_u32be(out, static_cast<std::uint32_t>(crc));
}

}  // namespace detail

inline void write_png(const std::string& path, const RawImage& img) {
    if (img.channels != 3 && img.channels != 4) throw DataError("write_png: channels must be 3 or 4");
    if (img.width <= 0 || img.height <= 0) throw DataError("write_png: empty image");
    const std::size_t expect = static_cast<std::size_t>(img.width) * img.height * img.channels;
    if (img.pixels.size() != expect) throw DataError("write_png: pixel buffer size mismatch");

    const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
    std::vector<unsigned char> raw((stride + 1) * static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y) {
        raw[static_cast<std::size_t>(y) * (stride + 1)] = 0;  // filter 0: None
        std::memcpy(&raw[static_cast<std::size_t>(y) * (stride + 1) + 1],
                    &img.pixels[static_cast<std::size_t>(y) * stride], stride);
    }

    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> comp(comp_len);
    if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
        throw NumericError("write_png: zlib compress failed");
    }

    std::string out("\x89PNG\r\n\x1a\n", 8);
    std::string ihdr;
    detail::png_put_u32be(ihdr, static_cast<std::uint32_t>(img.width));
    detail::png_put_u32be(ihdr, static_cast<std::uint32_t>(img.height));
    ihdr.push_back(8);                                     // bit depth
    ihdr.push_back(img.channels == 3 ? 2 : 6);             // color type
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);                                     // no interlace
    detail::png_chunk(out, "IHDR", ihdr);
    detail::png_chunk(out, "IDAT",
                      std::string(reinterpret_cast<const char*>(comp.data()), comp_len));
    detail::png_chunk(out, "IEND", "");

    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("short write to " + path);
}

inline RawImage read_png(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open image: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 8 || std::memcmp(bytes.data(), "\x89PNG\r\n\x1a\n", 8) != 0) {
        throw DataError("not a PNG file: " + path);
    }

    RawImage img;
    int bit_depth = 0, color_type = -1;
    std::vector<unsigned char> idat;
    std::size_t pos = 8;
    while (pos + 12 <= bytes.size()) {
        const std::uint32_t len = detail::png_read_u32be(bytes.data() + pos);
        const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
        const unsigned char* body = bytes.data() + pos + 8;
        if (pos + 12 + len > bytes.size()) throw DataError("truncated PNG: " + path);
        if (std::memcmp(type, "IHDR", 4) == 0 && len >= 13) {
            img.width = static_cast<int>(detail::png_read_u32be(body));
            img.height = static_cast<int>(detail::png_read_u32be(body + 4));
            bit_depth = body[8];
            color_type = body[9];
            if (body[12] != 0) throw DataError("interlaced PNG not supported: " + path);
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), body, body + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (bit_depth != 8 || (color_type != 2 && color_type != 6)) {
        throw DataError("unsupported PNG format (need 8-bit RGB/RGBA): " + path);
    }
    img.channels = color_type == 2 ? 3 : 4;
    if (img.width <= 0 || img.height <= 0) throw DataError("bad PNG dimensions: " + path);

    const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
    std::vector<unsigned char> raw((stride + 1) * static_cast<std::size_t>(img.height));
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size()) {
        throw DataError("corrupt PNG image data: " + path);
    }

    const int bpp = img.channels;
    img.pixels.resize(stride * static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y) {
        const unsigned char filter = raw[static_cast<std::size_t>(y) * (stride + 1)];
        const unsigned char* src = &raw[static_cast<std::size_t>(y) * (stride + 1) + 1];
        unsigned char* dst = &img.pixels[static_cast<std::size_t>(y) * stride];
        const unsigned char* prev =
            y > 0 ? &img.pixels[static_cast<std::size_t>(y - 1) * stride] : nullptr;
        for (std::size_t x = 0; x < stride; ++x) {
            const int a = x >= static_cast<std::size_t>(bpp) ? dst[x - bpp] : 0;
            const int b = prev ? prev[x] : 0;
            const int c = (prev && x >= static_cast<std::size_t>(bpp)) ? prev[x - bpp] : 0;
            int v = src[x];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: {
                    const int p = a + b - c;
                    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
                    v += (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : c);
                    break;
                }
                default: throw DataError("bad PNG row filter: " + path);
            }
            dst[x] = static_cast<unsigned char>(v & 0xFF);
        }
    }
    return img;
}

}  // namespace custnetgc
