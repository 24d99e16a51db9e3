#pragma once

#include <vector>

#include "tdr/autograd.hpp"
#include "tdr/image.hpp"

namespace tdr {

// Low/high frequency decomposition with a per-channel Haar basis. `high` is
// defined as the residual image - low, which keeps low + high == image exact
// even when the borders were padded.
struct FrequencySplit {
    Image low;
    Image high;
    int levels = 0;
};

namespace wavelet_detail {

// One 2D Haar analysis level on a plane with even dims; returns the
// approximation band (orthonormal scaling: LL = (a+b+c+d)/2).
inline std::vector<double> haar_ll(const std::vector<double>& p, int h, int w) {
    std::vector<double> ll(size_t(h / 2) * (w / 2));
    for (int y = 0; y < h / 2; ++y)
        for (int x = 0; x < w / 2; ++x) {
            const double a = p[size_t(2 * y) * w + 2 * x];
            const double b = p[size_t(2 * y) * w + 2 * x + 1];
            const double c = p[size_t(2 * y + 1) * w + 2 * x];
            const double d = p[size_t(2 * y + 1) * w + 2 * x + 1];
            ll[size_t(y) * (w / 2) + x] = 0.5 * (a + b + c + d);
        }
    return ll;
}

// Inverse of one level with the detail bands zeroed.
inline std::vector<double> haar_ll_inverse(const std::vector<double>& ll, int h, int w) {
    std::vector<double> p(size_t(h) * w);
    for (int y = 0; y < h / 2; ++y)
        for (int x = 0; x < w / 2; ++x) {
            const double v = 0.5 * ll[size_t(y) * (w / 2) + x];
            p[size_t(2 * y) * w + 2 * x] = v;
            p[size_t(2 * y) * w + 2 * x + 1] = v;
            p[size_t(2 * y + 1) * w + 2 * x] = v;
            p[size_t(2 * y + 1) * w + 2 * x + 1] = v;
        }
    return p;
}

}  // namespace wavelet_detail

inline FrequencySplit split(const Image& img, int levels) {
    require(levels >= 1, "wavelet split: levels must be >= 1");
    const int m = 1 << levels;
    const int ph = (img.h + m - 1) / m * m;
    const int pw = (img.w + m - 1) / m * m;

    FrequencySplit out;
    out.levels = levels;
    out.low = Image(img.c, img.h, img.w);
    out.high = Image(img.c, img.h, img.w);

    for (int ch = 0; ch < img.c; ++ch) {
        // edge-replicate padding on the right/bottom; keeps the trailing
        // partial blocks constant so band extraction stays exactly idempotent
        std::vector<double> plane(size_t(ph) * pw);
        for (int y = 0; y < ph; ++y) {
            const int sy = std::min(y, img.h - 1);
            for (int x = 0; x < pw; ++x) {
                const int sx = std::min(x, img.w - 1);
                plane[size_t(y) * pw + x] = img.at(ch, sy, sx);
            }
        }

        std::vector<std::vector<double>> pyramid{plane};
        int hh = ph, ww = pw;
        for (int l = 0; l < levels; ++l) {
            pyramid.push_back(wavelet_detail::haar_ll(pyramid.back(), hh, ww));
            hh /= 2;
            ww /= 2;
        }
        std::vector<double> rec = pyramid.back();
        for (int l = levels - 1; l >= 0; --l) {
            hh *= 2;
            ww *= 2;
            rec = wavelet_detail::haar_ll_inverse(rec, hh, ww);
        }

        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) {
                const float low = float(rec[size_t(y) * pw + x]);
                out.low.at(ch, y, x) = low;
                out.high.at(ch, y, x) = img.at(ch, y, x) - low;
            }
    }
    return out;
}

// I_out = H(generated) + L(pre_restored), clamped to [0,1].
inline Image recombine(const Image& generated, const Image& pre_restored, int levels) {
    require(generated.same_shape(pre_restored), "recombine: shape mismatch");
    const FrequencySplit g = split(generated, levels);
    const FrequencySplit p = split(pre_restored, levels);
    Image out(generated.c, generated.h, generated.w);
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = g.high.v[i] + p.low.v[i];
    out.clamp01();
    return out;
}

// Tape version of the low band for training graphs. For the Haar basis the
// k-level approximation is the 2^k block mean, so it is expressed with the
// pooling kernels; spatial dims must be divisible by 2^levels.
template <typename S>
Var<S> low_band(Var<S> x, int levels) {
    require(levels >= 1, "low_band: levels must be >= 1");
    const int m = 1 << levels;
    require(x.shape().size() == 3 && x.shape()[1] % m == 0 && x.shape()[2] % m == 0,
            "low_band: spatial dims of " + shape_str(x.shape()) + " not divisible by " + std::to_string(m));
    return upsample_nearest(avgpool2d(x, m), m);
}

template <typename S>
Var<S> high_band(Var<S> x, int levels) {
    return sub(x, low_band(x, levels));
}

}  // namespace tdr
