#include <catch2/catch.hpp>
#include <cmath>

#include "tdr/degradation.hpp"
#include "tdr/metrics.hpp"
#include "tdr/rng.hpp"

using namespace tdr;

namespace {

// smooth "natural" test image: soft gradients plus mild low-frequency texture
Image smooth_image(int h = 64, int w = 64) {
    Image img(3, h, w);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double v = 0.5 + 0.25 * std::sin(0.09 * x + 0.4 * c) * std::cos(0.07 * y) +
                                 0.15 * double(x + y) / (h + w);
                img.at(c, y, x) = float(std::min(1.0, std::max(0.0, v)));
            }
    return img;
}

Image textured_image(int h = 64, int w = 64) {
    Image img = smooth_image(h, w);
    Rng rng(404);
    for (auto& v : img.v)
        v = std::min(1.f, std::max(0.f, v + 0.15f * float(std::sin(rng.uniform(0, 6.28))) ));
    return img;
}

}  // namespace

TEST_CASE("mixture A recipe is the fixed table entry") {
    Rng rng(1);
    auto r = sample_recipe(Mixture::A, rng);
    CHECK(r.blur_sigma == 0.0);
    CHECK(r.scale == 8.0);
    CHECK(r.noise_sigma == 0.0);
    CHECK(r.jpeg_quality == 75);
}

TEST_CASE("mixture B samples stay within the declared ranges") {
    Rng rng(2);
    for (int i = 0; i < 2000; ++i) {
        auto r = sample_recipe(Mixture::B, rng);
        CHECK(r.blur_sigma >= 0.0);
        CHECK(r.blur_sigma <= 8.0);
        CHECK(r.scale >= 1.0);
        CHECK(r.scale <= 16.0);
        CHECK(r.noise_sigma >= 0.0);
        CHECK(r.noise_sigma <= 10.0);
        CHECK(r.jpeg_quality >= 50);
        CHECK(r.jpeg_quality <= 100);
    }
}

TEST_CASE("same seed gives identical recipes") {
    Rng a(42), b(42);
    for (int i = 0; i < 10; ++i) {
        auto ra = sample_recipe(Mixture::B, a);
        auto rb = sample_recipe(Mixture::B, b);
        CHECK(ra.blur_sigma == rb.blur_sigma);
        CHECK(ra.scale == rb.scale);
        CHECK(ra.noise_sigma == rb.noise_sigma);
        CHECK(ra.jpeg_quality == rb.jpeg_quality);
        CHECK(ra.seed == rb.seed);
    }
}

TEST_CASE("degrade is deterministic given (hq, recipe)") {
    Image hq = textured_image();
    Rng rng(3);
    auto recipe = sample_recipe(Mixture::B, rng);
    Image a = degrade(hq, recipe);
    Image b = degrade(hq, recipe);
    CHECK(a.v == b.v);
}

TEST_CASE("near-neutral recipe only costs compression error") {
    Image hq = smooth_image();
    DegradationRecipe r{0.0, 1.0, 0.0, 100, 7};
    Image out = degrade(hq, r);
    CHECK(psnr(hq, out) > 40.0);
}

TEST_CASE("constant image passes through blur and resampling") {
    Image hq(3, 32, 32, 0.42f);
    DegradationRecipe r{0.0, 2.0, 0.0, 100, 7};
    Image out = degrade(hq, r);
    float m = 0;
    for (float v : out.v) m = std::max(m, std::abs(v - 0.42f));
    CHECK(m <= 1.f / 255.f);
}

TEST_CASE("noise std lands near the configured sigma") {
    Image hq(3, 64, 64, 0.5f);
    DegradationRecipe r{0.0, 1.0, 10.0, 100, 99};
    Image out = degrade(hq, r);
    double sum = 0, sumsq = 0;
    for (size_t i = 0; i < out.v.size(); ++i) {
        const double d = double(out.v[i]) - 0.5;
        sum += d;
        sumsq += d * d;
    }
    const double n = double(out.v.size());
    const double stddev = std::sqrt(sumsq / n - (sum / n) * (sum / n));
    const double target = 10.0 / 255.0;
    CHECK(stddev == Approx(target).epsilon(0.15));
}

TEST_CASE("degrade rejects scale below 1") {
    Image hq(3, 16, 16, 0.5f);
    DegradationRecipe r{0.0, 0.5, 0.0, 90, 1};
    CHECK_THROWS(degrade(hq, r));
}

TEST_CASE("quality-monotone PSNR") {
    Image hq = textured_image();
    DegradationRecipe lo{1.0, 2.0, 3.0, 50, 5};
    DegradationRecipe hi{1.0, 2.0, 3.0, 90, 5};
    CHECK(psnr(hq, degrade(hq, hi)) >= psnr(hq, degrade(hq, lo)));
}

TEST_CASE("output shape equals input shape") {
    Rng rng(8);
    for (auto [h, w] : {std::pair{37, 53}, {64, 64}, {16, 48}}) {
        Image hq(3, h, w, 0.f);
        for (auto& v : hq.v) v = float(rng.uniform());
        auto r = sample_recipe(Mixture::B, rng);
        Image out = degrade(hq, r);
        CHECK(out.h == h);
        CHECK(out.w == w);
        CHECK(out.c == 3);
        for (float v : out.v) {
            REQUIRE(v >= 0.f);
            REQUIRE(v <= 1.f);
        }
    }
}

TEST_CASE("jpeg_like at quality 100 is nearly lossless") {
    Image img = smooth_image();
    CHECK(psnr(img, jpeg_like(img, 100)) > 45.0);
}

TEST_CASE("jpeg_like keeps constant images constant at any quality") {
    for (int q : {1, 35, 50, 75, 100}) {
        for (float level : {0.13f, 0.5f, 0.86f}) {
            Image img(3, 24, 24, level);
            Image out = jpeg_like(img, q);
            float m = 0;
            for (float v : out.v) m = std::max(m, std::abs(v - level));
            CHECK(m <= 1.f / 255.f);
        }
    }
}

TEST_CASE("jpeg_like double compression settles down") {
    Image img = textured_image();
    Image once = jpeg_like(img, 50);
    Image twice = jpeg_like(once, 50);
    const double delta1 = mse_between(img, once);
    const double delta2 = mse_between(once, twice);
    CHECK(delta2 < delta1);
}

TEST_CASE("jpeg_like rejects bad quality") {
    Image img(3, 8, 8, 0.5f);
    CHECK_THROWS(jpeg_like(img, 0));
    CHECK_THROWS(jpeg_like(img, 101));
}

TEST_CASE("recipe text round trip") {
    DegradationRecipe r{1.25, 7.5, 3.75, 64, 0xdeadbeefULL};
    auto r2 = DegradationRecipe::from_line(r.to_line());
    CHECK(r2.blur_sigma == Approx(r.blur_sigma));
    CHECK(r2.scale == Approx(r.scale));
    CHECK(r2.noise_sigma == Approx(r.noise_sigma));
    CHECK(r2.jpeg_quality == r.jpeg_quality);
    CHECK(r2.seed == r.seed);
}
