#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "tdr/prelude.hpp"

namespace tdr {

// Dense channels x height x width image, values in [0,1].
struct Image {
    int c = 0, h = 0, w = 0;
    std::vector<float> v;

    Image() = default;
    Image(int c_, int h_, int w_, float fill = 0.f) : c(c_), h(h_), w(w_), v(size_t(c_) * h_ * w_, fill) {}

    float& at(int ch, int y, int x) { return v[(size_t(ch) * h + y) * w + x]; }
    float at(int ch, int y, int x) const { return v[(size_t(ch) * h + y) * w + x]; }
    long size() const { return long(c) * h * w; }
    bool same_shape(const Image& o) const { return c == o.c && h == o.h && w == o.w; }

    void clamp01() {
        for (auto& x : v) x = std::min(1.f, std::max(0.f, x));
    }
};

// Bilinear resampling with align-corners=false semantics: output sample (i,j)
// reads the source at ((i+0.5)*h/oh - 0.5, (j+0.5)*w/ow - 0.5), edge-clamped.
inline Image resize_bilinear(const Image& in, int oh, int ow) {
    require(oh >= 1 && ow >= 1, "resize_bilinear: target size must be >= 1");
    Image out(in.c, oh, ow);
    const double sy = double(in.h) / oh, sx = double(in.w) / ow;
    for (int y = 0; y < oh; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        fy = std::min(std::max(fy, 0.0), double(in.h - 1));
        const int y0 = int(fy);
        const int y1 = std::min(y0 + 1, in.h - 1);
        const double wy = fy - y0;
        for (int x = 0; x < ow; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            fx = std::min(std::max(fx, 0.0), double(in.w - 1));
            const int x0 = int(fx);
            const int x1 = std::min(x0 + 1, in.w - 1);
            const double wx = fx - x0;
            for (int ch = 0; ch < in.c; ++ch) {
                const double a = in.at(ch, y0, x0) * (1 - wx) + in.at(ch, y0, x1) * wx;
                const double b = in.at(ch, y1, x0) * (1 - wx) + in.at(ch, y1, x1) * wx;
                out.at(ch, y, x) = float(a * (1 - wy) + b * wy);
            }
        }
    }
    return out;
}

// Separable truncated Gaussian, radius ceil(3*sigma), renormalized, edge-clamped.
inline Image gaussian_blur(const Image& in, double sigma) {
    if (sigma < 0.05) return in;
    const int r = int(std::ceil(3.0 * sigma));
    std::vector<double> k(size_t(2 * r + 1));
    double sum = 0;
    for (int i = -r; i <= r; ++i) {
        k[size_t(i + r)] = std::exp(-double(i) * i / (2.0 * sigma * sigma));
        sum += k[size_t(i + r)];
    }
    for (auto& x : k) x /= sum;

    Image tmp(in.c, in.h, in.w), out(in.c, in.h, in.w);
    for (int ch = 0; ch < in.c; ++ch)
        for (int y = 0; y < in.h; ++y)
            for (int x = 0; x < in.w; ++x) {
                double s = 0;
                for (int i = -r; i <= r; ++i) {
                    const int xx = std::min(std::max(x + i, 0), in.w - 1);
                    s += k[size_t(i + r)] * in.at(ch, y, xx);
                }
                tmp.at(ch, y, x) = float(s);
            }
    for (int ch = 0; ch < in.c; ++ch)
        for (int y = 0; y < in.h; ++y)
            for (int x = 0; x < in.w; ++x) {
                double s = 0;
                for (int i = -r; i <= r; ++i) {
                    const int yy = std::min(std::max(y + i, 0), in.h - 1);
                    s += k[size_t(i + r)] * tmp.at(ch, yy, x);
                }
                out.at(ch, y, x) = float(s);
            }
    return out;
}

inline double mse_between(const Image& a, const Image& b) {
    require(a.same_shape(b), "mse: shape mismatch");
    double s = 0;
    for (size_t i = 0; i < a.v.size(); ++i) {
        const double d = double(a.v[i]) - b.v[i];
        s += d * d;
    }
    return s / double(a.v.size());
}

}  // namespace tdr
