#include <catch2/catch.hpp>

#include "tdr/dataset.hpp"

using namespace tdr;

TEST_CASE("same seed regenerates an identical corpus") {
    auto a = synthesize_corpus(1234, 16, 8, 32);
    auto b = synthesize_corpus(1234, 16, 8, 32);
    CHECK(a.hash() == b.hash());
    auto c = synthesize_corpus(1235, 16, 8, 32);
    CHECK(a.hash() != c.hash());
}

TEST_CASE("corpus is class balanced with values in range") {
    auto corpus = synthesize_corpus(7, 64, 32, 32);
    std::vector<int> train_counts(4, 0), val_counts(4, 0);
    for (const auto& s : corpus.train) {
        REQUIRE(s.label >= 0);
        REQUIRE(s.label < 4);
        ++train_counts[size_t(s.label)];
        REQUIRE(s.img.c == 3);
        REQUIRE(s.img.h == 32);
        REQUIRE(s.img.w == 32);
    }
    for (const auto& s : corpus.val) ++val_counts[size_t(s.label)];
    for (int c = 0; c < 4; ++c) {
        CHECK(train_counts[size_t(c)] == 16);
        CHECK(val_counts[size_t(c)] == 8);
    }
    for (const auto& s : corpus.train)
        for (float v : s.img.v) {
            REQUIRE(v >= 0.f);
            REQUIRE(v <= 1.f);
        }
}

TEST_CASE("val split is disjoint from train") {
    auto corpus = synthesize_corpus(99, 12, 12, 32);
    for (const auto& t : corpus.train)
        for (const auto& v : corpus.val) REQUIRE(t.img.v != v.img.v);
}

TEST_CASE("counts below the class count are rejected") {
    CHECK_THROWS(synthesize_corpus(1, 2, 8, 32));
    CHECK_THROWS(synthesize_corpus(1, 8, 2, 32));
}

TEST_CASE("images carry high-frequency texture") {
    // neighboring-pixel differences should have noticeable energy
    auto corpus = synthesize_corpus(5, 8, 4, 64);
    double energy = 0;
    long n = 0;
    for (const auto& s : corpus.train)
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < 64; ++y)
                for (int x = 1; x < 64; ++x) {
                    const double d = s.img.at(c, y, x) - s.img.at(c, y, x - 1);
                    energy += d * d;
                    ++n;
                }
    CHECK(energy / double(n) > 1e-3);
}
