#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "tdr/image.hpp"
#include "tdr/jpeg_sim.hpp"
#include "tdr/rng.hpp"

namespace tdr {

enum class Mixture { A, B };

inline const char* mixture_name(Mixture m) { return m == Mixture::A ? "A" : "B"; }

// One sampled degradation: Gaussian blur, bilinear downsample, additive
// Gaussian noise (std in 8-bit intensity levels), JPEG-style compression.
struct DegradationRecipe {
    double blur_sigma = 0.0;   // [0, 8]
    double scale = 1.0;        // [1, 16]
    double noise_sigma = 0.0;  // [0, 10], in units of 1/255
    int jpeg_quality = 100;    // [1, 100]
    uint64_t seed = 0;

    std::string to_line() const {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%.6f %.6f %.6f %d %llu", blur_sigma, scale, noise_sigma,
                      jpeg_quality, (unsigned long long)seed);
        return buf;
    }

    static DegradationRecipe from_line(const std::string& line) {
        DegradationRecipe r;
        unsigned long long s = 0;
        require(std::sscanf(line.c_str(), "%lf %lf %lf %d %llu", &r.blur_sigma, &r.scale,
                            &r.noise_sigma, &r.jpeg_quality, &s) == 5,
                "recipe: cannot parse line: " + line);
        r.seed = s;
        return r;
    }
};

struct DegradedPair {
    Image hq;
    Image lq;
    DegradationRecipe recipe;
    int label = -1;
};

// Mixture-A is the fixed x8-downsample + q75 recipe; Mixture-B draws each
// field uniformly from its declared range.
inline DegradationRecipe sample_recipe(Mixture mixture, Rng& rng) {
    DegradationRecipe r;
    if (mixture == Mixture::A) {
        r.blur_sigma = 0.0;
        r.scale = 8.0;
        r.noise_sigma = 0.0;
        r.jpeg_quality = 75;
    } else {
        r.blur_sigma = rng.uniform(0.0, 8.0);
        r.scale = rng.uniform(1.0, 16.0);
        r.noise_sigma = rng.uniform(0.0, 10.0);
        r.jpeg_quality = rng.uniform_int(50, 100);
    }
    r.seed = rng.next_u64();
    return r;
}

// Applies the recipe in order: blur, bilinear downsample, Gaussian noise,
// JPEG-style compression, bilinear resize back to the source resolution.
inline Image degrade(const Image& hq, const DegradationRecipe& recipe) {
    require(recipe.scale >= 1.0, "degrade: scale must be >= 1");
    Image img = gaussian_blur(hq, recipe.blur_sigma);

    const int dh = std::max(1, int(std::lround(hq.h / recipe.scale)));
    const int dw = std::max(1, int(std::lround(hq.w / recipe.scale)));
    if (dh != hq.h || dw != hq.w) img = resize_bilinear(img, dh, dw);

    if (recipe.noise_sigma > 0.0) {
        Rng noise_rng = derive_rng(recipe.seed, {0x6e6f697365ULL});
        const float s = float(recipe.noise_sigma / 255.0);
        for (auto& v : img.v) v += s * float(noise_rng.gaussian());
        img.clamp01();
    }

    img = jpeg_like(img, recipe.jpeg_quality);

    if (dh != hq.h || dw != hq.w) img = resize_bilinear(img, hq.h, hq.w);
    img.clamp01();
    return img;
}

}  // namespace tdr
