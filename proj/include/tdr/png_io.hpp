#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "tdr/image.hpp"
#include "tdr/prelude.hpp"

namespace tdr {
namespace detail {

inline uint32_t crc32_of(const unsigned char* data, size_t n, uint32_t seed = 0) {
    return uint32_t(::crc32(seed, data, uInt(n)));
}

inline void put_be32(std::vector<unsigned char>& out, uint32_t v) {
    out.push_back((v >> 24) & 0xff);
    out.push_back((v >> 16) & 0xff);
    out.push_back((v >> 8) & 0xff);
    out.push_back(v & 0xff);
}

inline uint32_t read_be32(const unsigned char* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

inline void append_chunk(std::vector<unsigned char>& out, const char type[4],
                         const std::vector<unsigned char>& payload) {
    put_be32(out, uint32_t(payload.size()));
    std::vector<unsigned char> body(type, type + 4);
    body.insert(body.end(), payload.begin(), payload.end());
    out.insert(out.end(), body.begin(), body.end());
    put_be32(out, crc32_of(body.data(), body.size()));
}

}  // namespace detail

// 8-bit RGB PNG writer. Values are quantized with round-to-nearest.
inline void save_png(const std::string& path, const Image& img) {
    require(img.c == 3 || img.c == 1, "save_png: image must have 1 or 3 channels");
    const int h = img.h, w = img.w;

    std::vector<unsigned char> raw;
    raw.reserve(size_t(h) * (size_t(w) * 3 + 1));
    for (int y = 0; y < h; ++y) {
        raw.push_back(0);  // filter: none
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < 3; ++ch) {
                const float v = img.at(img.c == 3 ? ch : 0, y, x);
                const float q = std::min(1.f, std::max(0.f, v)) * 255.f + 0.5f;
                raw.push_back((unsigned char)(q));
            }
    }

    uLongf zcap = compressBound(uLong(raw.size()));
    std::vector<unsigned char> zdata(zcap);
    require(compress2(zdata.data(), &zcap, raw.data(), uLong(raw.size()), 6) == Z_OK,
            "save_png: deflate failed");
    zdata.resize(zcap);

    std::vector<unsigned char> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    std::vector<unsigned char> ihdr;
    detail::put_be32(ihdr, uint32_t(w));
    detail::put_be32(ihdr, uint32_t(h));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // color type: truecolor
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    detail::append_chunk(out, "IHDR", ihdr);
    detail::append_chunk(out, "IDAT", zdata);
    detail::append_chunk(out, "IEND", {});

    std::ofstream f(path, std::ios::binary);
    require(bool(f), "save_png: cannot open " + path);
    f.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
    require(bool(f), "save_png: write failed for " + path);
}

// Reads 8-bit RGB/RGBA/grayscale PNGs (no interlacing, no palette).
inline Image load_png(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(bool(f), "load_png: cannot open " + path);
    std::vector<unsigned char> data((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    require(data.size() > 8 && data[1] == 'P' && data[2] == 'N' && data[3] == 'G',
            "load_png: not a PNG: " + path);

    int w = 0, h = 0, bit_depth = 0, color_type = 0;
    std::vector<unsigned char> idat;
    size_t pos = 8;
    while (pos + 8 <= data.size()) {
        const uint32_t len = detail::read_be32(&data[pos]);
        const std::string type(reinterpret_cast<const char*>(&data[pos + 4]), 4);
        const unsigned char* payload = &data[pos + 8];
        if (type == "IHDR") {
            w = int(detail::read_be32(payload));
            h = int(detail::read_be32(payload + 4));
            bit_depth = payload[8];
            color_type = payload[9];
            require(payload[12] == 0, "load_png: interlaced PNGs unsupported: " + path);
        } else if (type == "IDAT") {
            idat.insert(idat.end(), payload, payload + len);
        } else if (type == "IEND") {
            break;
        }
        pos += 12 + len;
    }
    require(w > 0 && h > 0 && bit_depth == 8, "load_png: unsupported format in " + path);
    int nch = 0;
    switch (color_type) {
        case 0: nch = 1; break;
        case 2: nch = 3; break;
        case 4: nch = 2; break;
        case 6: nch = 4; break;
        default: fail("load_png: palette PNGs unsupported: " + path);
    }

    const size_t stride = size_t(w) * nch;
    std::vector<unsigned char> raw(size_t(h) * (stride + 1));
    uLongf rawlen = uLongf(raw.size());
    require(uncompress(raw.data(), &rawlen, idat.data(), uLong(idat.size())) == Z_OK &&
                rawlen == raw.size(),
            "load_png: inflate failed for " + path);

    // undo per-scanline filters
    std::vector<unsigned char> px(size_t(h) * stride);
    const int bpp = nch;
    for (int y = 0; y < h; ++y) {
        const unsigned char filter = raw[size_t(y) * (stride + 1)];
        const unsigned char* src = &raw[size_t(y) * (stride + 1) + 1];
        unsigned char* dst = &px[size_t(y) * stride];
        const unsigned char* up = y > 0 ? &px[size_t(y - 1) * stride] : nullptr;
        for (size_t x = 0; x < stride; ++x) {
            const int a = x >= size_t(bpp) ? dst[x - bpp] : 0;
            const int b = up ? up[x] : 0;
            const int cc = (up && x >= size_t(bpp)) ? up[x - bpp] : 0;
            int val = src[x];
            switch (filter) {
                case 0: break;
                case 1: val += a; break;
                case 2: val += b; break;
                case 3: val += (a + b) / 2; break;
                case 4: {
                    const int p = a + b - cc;
                    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - cc);
                    val += (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : cc);
                    break;
                }
                default: fail("load_png: bad filter byte in " + path);
            }
            dst[x] = (unsigned char)(val & 0xff);
        }
    }

    Image img(3, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const unsigned char* p = &px[size_t(y) * stride + size_t(x) * nch];
            for (int ch = 0; ch < 3; ++ch) {
                const unsigned char byte = nch >= 3 ? p[ch] : p[0];
                img.at(ch, y, x) = float(byte) / 255.f;
            }
        }
    return img;
}

}  // namespace tdr
