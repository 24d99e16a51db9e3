#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "tdr/image.hpp"

namespace tdr {
namespace jpegsim {

// Baseline tables from the JPEG standard (Annex K).
inline const int kLumaBase[64] = {
    16, 11, 10, 16, 24,  40,  51,  61,
    12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,
    14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,
    24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99};

inline const int kChromaBase[64] = {
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99};

// IJG quality scaling. The DC step is capped at 8 so flat regions keep their
// level to within half an intensity step at every quality.
inline std::array<double, 64> scaled_table(const int* base, int quality) {
    quality = std::min(100, std::max(1, quality));
    const double scale = quality < 50 ? 5000.0 / quality : 200.0 - 2.0 * quality;
    std::array<double, 64> q{};
    for (int i = 0; i < 64; ++i) {
        double v = std::floor((base[i] * scale + 50.0) / 100.0);
        q[size_t(i)] = std::min(255.0, std::max(1.0, v));
    }
    q[0] = std::min(q[0], 8.0);
    return q;
}

struct CosTable {
    double c[8][8];  // c[u][x] = C(u) * cos((2x+1) u pi / 16) / 2
    CosTable() {
        for (int u = 0; u < 8; ++u) {
            const double cu = u == 0 ? 1.0 / std::sqrt(2.0) : 1.0;
            for (int x = 0; x < 8; ++x)
                c[u][x] = 0.5 * cu * std::cos((2 * x + 1) * u * 3.14159265358979323846 / 16.0);
        }
    }
};

inline const CosTable& cs() {
    static const CosTable t;
    return t;
}

inline void dct8x8(const double in[64], double out[64]) {
    double tmp[64];
    for (int u = 0; u < 8; ++u)
        for (int y = 0; y < 8; ++y) {
            double s = 0;
            for (int x = 0; x < 8; ++x) s += cs().c[u][x] * in[y * 8 + x];
            tmp[y * 8 + u] = s;
        }
    for (int v = 0; v < 8; ++v)
        for (int u = 0; u < 8; ++u) {
            double s = 0;
            for (int y = 0; y < 8; ++y) s += cs().c[v][y] * tmp[y * 8 + u];
            out[v * 8 + u] = s;
        }
}

inline void idct8x8(const double in[64], double out[64]) {
    double tmp[64];
    for (int x = 0; x < 8; ++x)
        for (int v = 0; v < 8; ++v) {
            double s = 0;
            for (int u = 0; u < 8; ++u) s += cs().c[u][x] * in[v * 8 + u];
            tmp[v * 8 + x] = s;
        }
    for (int x = 0; x < 8; ++x)
        for (int y = 0; y < 8; ++y) {
            double s = 0;
            for (int v = 0; v < 8; ++v) s += cs().c[v][y] * tmp[v * 8 + x];
            out[y * 8 + x] = s;
        }
}

// One plane, values in intensity levels [0,255]: blockwise DCT, quantize,
// dequantize, inverse DCT. The plane is edge-padded to a multiple of 8.
inline std::vector<double> roundtrip_plane(const std::vector<double>& plane, int h, int w,
                                           const std::array<double, 64>& qt) {
    const int ph = (h + 7) / 8 * 8, pw = (w + 7) / 8 * 8;
    std::vector<double> pad(size_t(ph) * pw);
    for (int y = 0; y < ph; ++y)
        for (int x = 0; x < pw; ++x)
            pad[size_t(y) * pw + x] = plane[size_t(std::min(y, h - 1)) * w + std::min(x, w - 1)];

    double block[64], coef[64], rec[64];
    for (int by = 0; by < ph; by += 8)
        for (int bx = 0; bx < pw; bx += 8) {
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x)
                    block[y * 8 + x] = pad[size_t(by + y) * pw + bx + x] - 128.0;
            dct8x8(block, coef);
            for (int i = 0; i < 64; ++i)
                coef[i] = std::round(coef[i] / qt[size_t(i)]) * qt[size_t(i)];
            idct8x8(coef, rec);
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x)
                    pad[size_t(by + y) * pw + bx + x] = rec[y * 8 + x] + 128.0;
        }

    std::vector<double> out(size_t(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out[size_t(y) * w + x] = pad[size_t(y) * pw + x];
    return out;
}

}  // namespace jpegsim

// JPEG-style compression round trip: YCbCr with 4:2:0 chroma subsampling
// (disabled at quality >= 90, as common encoders do), 8x8 blockwise DCT
// quantization with the baseline tables scaled by quality. Produces the
// artifacts, not an interchange file.
inline Image jpeg_like(const Image& img, int quality) {
    require(quality >= 1 && quality <= 100, "jpeg_like: quality must be in [1,100]");
    require(img.c == 3, "jpeg_like: image must have 3 channels");
    const int h = img.h, w = img.w;
    const bool subsample = quality < 90;

    std::vector<double> Y(size_t(h) * w), Cb(size_t(h) * w), Cr(size_t(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double r = img.at(0, y, x) * 255.0;
            const double g = img.at(1, y, x) * 255.0;
            const double b = img.at(2, y, x) * 255.0;
            const size_t i = size_t(y) * w + x;
            Y[i] = 0.299 * r + 0.587 * g + 0.114 * b;
            Cb[i] = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0;
            Cr[i] = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0;
        }

    // 4:2:0 subsampling: 2x2 box average down, nearest back up
    const int ch2 = subsample ? (h + 1) / 2 : h;
    const int cw2 = subsample ? (w + 1) / 2 : w;
    auto down = [&](const std::vector<double>& p) {
        std::vector<double> d(size_t(ch2) * cw2);
        for (int y = 0; y < ch2; ++y)
            for (int x = 0; x < cw2; ++x) {
                double s = 0;
                int n = 0;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        const int yy = 2 * y + dy, xx = 2 * x + dx;
                        if (yy < h && xx < w) {
                            s += p[size_t(yy) * w + xx];
                            ++n;
                        }
                    }
                d[size_t(y) * cw2 + x] = s / n;
            }
        return d;
    };

    const auto ql = jpegsim::scaled_table(jpegsim::kLumaBase, quality);
    const auto qc = jpegsim::scaled_table(jpegsim::kChromaBase, quality);
    const auto y2 = jpegsim::roundtrip_plane(Y, h, w, ql);
    const auto cb2 = jpegsim::roundtrip_plane(subsample ? down(Cb) : Cb, ch2, cw2, qc);
    const auto cr2 = jpegsim::roundtrip_plane(subsample ? down(Cr) : Cr, ch2, cw2, qc);

    Image out(3, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int cy = subsample ? y / 2 : y, cx = subsample ? x / 2 : x;
            const double yy = y2[size_t(y) * w + x];
            const double cb = cb2[size_t(cy) * cw2 + cx] - 128.0;
            const double cr = cr2[size_t(cy) * cw2 + cx] - 128.0;
            out.at(0, y, x) = float((yy + 1.402 * cr) / 255.0);
            out.at(1, y, x) = float((yy - 0.344136 * cb - 0.714136 * cr) / 255.0);
            out.at(2, y, x) = float((yy + 1.772 * cb) / 255.0);
        }
    out.clamp01();
    return out;
}

}  // namespace tdr
