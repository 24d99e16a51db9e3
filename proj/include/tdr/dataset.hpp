#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tdr/image.hpp"
#include "tdr/rng.hpp"

namespace tdr {

struct LabeledImage {
    Image img;
    int label = -1;
};

inline const char* kClassNames[4] = {"circle", "square", "triangle", "cross"};

// Procedural labeled corpus: four shape classes on textured backgrounds with
// randomized position, size, rotation and colors. The fine-scale texture puts
// class-relevant energy into high frequencies that heavy degradation removes.
struct ToyCorpus {
    std::vector<LabeledImage> train;
    std::vector<LabeledImage> val;
    uint64_t seed = 0;
    int classes = 4;

    uint64_t hash() const {
        uint64_t h = 1469598103934665603ULL;
        auto mixin = [&](const std::vector<LabeledImage>& set) {
            for (const auto& s : set) {
                h = mix64(h ^ uint64_t(s.label));
                const unsigned char* b = reinterpret_cast<const unsigned char*>(s.img.v.data());
                for (size_t i = 0; i < s.img.v.size() * 4; i += 7) h = mix64(h ^ b[i]);
            }
        };
        mixin(train);
        mixin(val);
        return h;
    }
};

namespace toy_detail {

struct Vec2 {
    double x, y;
};

inline double box_sdf(double dx, double dy, double hx, double hy) {
    const double ax = std::abs(dx) - hx, ay = std::abs(dy) - hy;
    return std::max(ax, ay);
}

inline double shape_sdf(int cls, double x, double y, double r) {
    switch (cls) {
        case 0:  // circle
            return std::sqrt(x * x + y * y) - r;
        case 1:  // square
            return box_sdf(x, y, 0.82 * r, 0.82 * r);
        case 2: {  // triangle pointing up: max of three half-plane distances
            const double v0x = 0.0, v0y = -r;
            const double v1x = -0.95 * r, v1y = 0.62 * r;
            const double v2x = 0.95 * r, v2y = 0.62 * r;
            auto edge = [&](double ax, double ay, double bx, double by) {
                const double ex = bx - ax, ey = by - ay;
                const double len = std::sqrt(ex * ex + ey * ey);
                // outward normal for counter-clockwise vertex order
                return ((x - ax) * ey - (y - ay) * ex) / len;
            };
            return std::max({edge(v0x, v0y, v1x, v1y), edge(v1x, v1y, v2x, v2y),
                             edge(v2x, v2y, v0x, v0y)});
        }
        default:  // cross: union of two bars
            return std::min(box_sdf(x, y, r, 0.34 * r), box_sdf(x, y, 0.34 * r, r));
    }
}

inline LabeledImage make_sample(int cls, int size, Rng& rng) {
    LabeledImage s;
    s.label = cls;
    s.img = Image(3, size, size);

    // colors are random but kept well separated
    double bg[3], fg[3];
    while (true) {
        double d2 = 0;
        for (int c = 0; c < 3; ++c) {
            bg[c] = rng.uniform(0.08, 0.92);
            fg[c] = rng.uniform(0.08, 0.92);
        }
        for (int c = 0; c < 3; ++c) d2 += (bg[c] - fg[c]) * (bg[c] - fg[c]);
        if (d2 > 0.6) break;
    }

    const double r = rng.uniform(0.28, 0.36) * size;
    const double cx = size / 2.0 + rng.uniform(-0.08, 0.08) * size;
    const double cy = size / 2.0 + rng.uniform(-0.08, 0.08) * size;

    // independent high-frequency gratings inside and outside the shape
    const double f_fg = rng.uniform(0.18, 0.38), a_fg = rng.uniform(0.0, 6.283);
    const double f_bg = rng.uniform(0.18, 0.38), a_bg = rng.uniform(0.0, 6.283);
    const double dir_fg = rng.uniform(0.0, 3.1416), dir_bg = rng.uniform(0.0, 3.1416);
    const double amp_fg = 0.10, amp_bg = 0.08, noise_amp = 0.04;

    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double d = shape_sdf(cls, x - cx, y - cy, r);
            const double alpha = std::min(1.0, std::max(0.0, 0.5 - d / 1.5));

            const double tex_fg =
                amp_fg * std::sin(6.283 * f_fg * (x * std::cos(dir_fg) + y * std::sin(dir_fg)) + a_fg);
            const double tex_bg =
                amp_bg * std::sin(6.283 * f_bg * (x * std::cos(dir_bg) + y * std::sin(dir_bg)) + a_bg);
            for (int c = 0; c < 3; ++c) {
                const double base = fg[c] + tex_fg;
                const double back = bg[c] + tex_bg;
                double v = alpha * base + (1 - alpha) * back + noise_amp * (rng.uniform() - 0.5);
                s.img.at(c, y, x) = float(std::min(1.0, std::max(0.0, v)));
            }
        }
    return s;
}

}  // namespace toy_detail

inline ToyCorpus synthesize_corpus(uint64_t seed, int n_train, int n_val, int size = 64) {
    require(n_train >= 4 && n_val >= 4, "corpus: counts must be >= number of classes");
    ToyCorpus corpus;
    corpus.seed = seed;
    corpus.train.reserve(size_t(n_train));
    corpus.val.reserve(size_t(n_val));
    for (int i = 0; i < n_train; ++i) {
        Rng rng = derive_rng(seed, {0x747261696eULL, uint64_t(i)});
        corpus.train.push_back(toy_detail::make_sample(i % 4, size, rng));
    }
    for (int i = 0; i < n_val; ++i) {
        Rng rng = derive_rng(seed, {0x76616cULL, uint64_t(i)});
        corpus.val.push_back(toy_detail::make_sample(i % 4, size, rng));
    }
    return corpus;
}

}  // namespace tdr
