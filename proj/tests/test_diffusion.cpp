#include <catch2/catch.hpp>
#include <cmath>

#include "tdr/diffusion.hpp"
#include "tdr/rng.hpp"

using namespace tdr;

TEST_CASE("schedule with T=1") {
    auto s = NoiseSchedule::make(1, 0.3, 0.3);
    REQUIRE(s.beta.size() == 1);
    CHECK(s.alpha_bar[0] == Approx(0.7).epsilon(1e-15));
}

TEST_CASE("default schedule") {
    auto s = NoiseSchedule::make();
    REQUIRE(s.T == 1000);

    // independent product evaluation
    double prod = 1.0;
    for (int t = 1; t <= 1000; ++t) {
        const double b = 1e-4 + (0.02 - 1e-4) * double(t - 1) / 999.0;
        prod *= 1.0 - b;
    }
    CHECK(s.abar(1000) == Approx(prod).epsilon(1e-12));
    CHECK(s.abar(1000) < 0.01);

    Rng rng(9);
    for (int k = 0; k < 32; ++k) {
        const int t = rng.uniform_int(1, 1000);
        CHECK(s.abar(t) / s.abar(t - 1) == Approx(s.alpha[size_t(t - 1)]).epsilon(1e-12));
        CHECK(s.beta[size_t(t - 1)] > 0.0);
        CHECK(s.beta[size_t(t - 1)] < 1.0);
        if (t >= 2) CHECK(s.abar(t) < s.abar(t - 1));
    }
    CHECK(s.abar(0) == 1.0);
}

TEST_CASE("schedule rejects invalid ranges") {
    CHECK_THROWS(NoiseSchedule::make(0));
    CHECK_THROWS(NoiseSchedule::make(10, 0.0, 0.5));
    CHECK_THROWS(NoiseSchedule::make(10, 0.5, 0.2));
    CHECK_THROWS(NoiseSchedule::make(10, 0.5, 1.0));
}

TEST_CASE("forward_diffuse special cases") {
    auto s = NoiseSchedule::make();
    Rng rng(1);
    Tape<double> t;
    std::vector<double> z0v(12), epsv(12);
    for (auto& v : z0v) v = rng.gaussian();
    for (auto& v : epsv) v = rng.gaussian();
    auto z0 = t.constant({3, 2, 2}, z0v);
    auto eps = t.constant({3, 2, 2}, epsv);
    auto zero = t.full({3, 2, 2}, 0.0);

    const int step = 137;
    const double ab = s.abar(step);
    auto a = forward_diffuse(z0, step, zero, s);
    auto b = forward_diffuse(zero, step, eps, s);
    for (int i = 0; i < 12; ++i) {
        CHECK(a.value()[size_t(i)] == Approx(std::sqrt(ab) * z0v[size_t(i)]).epsilon(1e-12));
        CHECK(b.value()[size_t(i)] == Approx(std::sqrt(1 - ab) * epsv[size_t(i)]).epsilon(1e-12));
    }

    auto bad = t.full({3, 2, 3}, 0.0);
    CHECK_THROWS(forward_diffuse(z0, step, bad, s));
    CHECK_THROWS(forward_diffuse(z0, 0, zero, s));
    CHECK_THROWS(forward_diffuse(z0, 1001, zero, s));
}

TEST_CASE("forward_diffuse statistics over many draws") {
    auto s = NoiseSchedule::make();
    const int N = 10000;
    Rng rng(123);
    const double z0v = 0.8;
    for (int step : {50, 200, 999}) {
        const double ab = s.abar(step);
        double sum = 0, sumsq = 0;
        for (int i = 0; i < N; ++i) {
            Tape<double> t;
            auto z0 = t.constant({1}, {z0v});
            auto eps = t.constant({1}, {rng.gaussian()});
            const double z = forward_diffuse(z0, step, eps, s).value()[0];
            sum += z;
            sumsq += z * z;
        }
        const double mean = sum / N;
        const double var = sumsq / N - mean * mean;
        // mean tolerance is 5% of the draw scale sqrt(1-abar); its Monte Carlo
        // standard error is sqrt(1-abar)/sqrt(N), five times smaller
        CHECK(mean == Approx(std::sqrt(ab) * z0v).margin(0.05 * std::sqrt(1.0 - ab)));
        CHECK(var == Approx(1.0 - ab).epsilon(0.05));
    }
}

TEST_CASE("partial_diffuse matches forward_diffuse and enforces t <= t_p") {
    auto s = NoiseSchedule::make();
    Rng rng(2);
    Tape<double> t;
    std::vector<double> zv(8), ev(8);
    for (auto& v : zv) v = rng.gaussian();
    for (auto& v : ev) v = rng.gaussian();
    auto z = t.constant({2, 2, 2}, zv);
    auto eps = t.constant({2, 2, 2}, ev);

    auto a = partial_diffuse(z, 200, 200, eps, s);
    auto b = forward_diffuse(z, 200, eps, s);
    CHECK(a.value() == b.value());  // same formula, bit for bit

    auto zero = t.full({2, 2, 2}, 0.0);
    auto c = partial_diffuse(z, 200, 200, zero, s);
    for (int i = 0; i < 8; ++i)
        CHECK(c.value()[size_t(i)] == Approx(std::sqrt(s.abar(200)) * zv[size_t(i)]).epsilon(1e-12));

    CHECK_THROWS(partial_diffuse(z, 201, 200, eps, s));
}

TEST_CASE("make_plan") {
    CHECK(TimestepPlan::make(200, 1).steps == std::vector<int>{200});
    CHECK(TimestepPlan::make(200, 4).steps == std::vector<int>{200, 150, 100, 50});

    // evaluate floor(t_p * k / n) independently
    auto plan = TimestepPlan::make(200, 50);
    REQUIRE(plan.steps.size() == 50);
    for (int j = 1; j < 50; ++j)
        CHECK(plan.steps[size_t(j)] == int(std::floor(200.0 * (50 - j) / 50.0)));
    CHECK(plan.steps.back() == 4);
    for (size_t j = 1; j < plan.steps.size(); ++j) CHECK(plan.steps[j] < plan.steps[j - 1]);

    CHECK_THROWS(TimestepPlan::make(200, 201));
    CHECK_THROWS(TimestepPlan::make(0, 1));
    CHECK_THROWS(TimestepPlan::make(10, 0));
}

TEST_CASE("plans are strictly decreasing for random (t_p, n)") {
    Rng rng(77);
    for (int k = 0; k < 1000; ++k) {
        const int t_p = rng.uniform_int(1, 1000);
        const int n = rng.uniform_int(1, t_p);
        auto plan = TimestepPlan::make(t_p, n);
        REQUIRE(int(plan.steps.size()) == n);
        CHECK(plan.steps[0] == t_p);
        for (size_t j = 1; j < plan.steps.size(); ++j) {
            REQUIRE(plan.steps[j] < plan.steps[j - 1]);
            REQUIRE(plan.steps[j] >= 1);
        }
    }
}

TEST_CASE("one_step_denoise inverts forward_diffuse with the oracle denoiser") {
    auto s = NoiseSchedule::make();
    Rng rng(5);

    SECTION("float round trip within 1e-5") {
        for (int k = 0; k < 20; ++k) {
            Tape<float> t;
            std::vector<float> z0v(27), ev(27);
            for (auto& v : z0v) v = float(rng.gaussian());
            for (auto& v : ev) v = float(rng.gaussian());
            const int step = rng.uniform_int(1, 1000);
            auto z0 = t.constant({3, 3, 3}, z0v);
            auto eps = t.constant({3, 3, 3}, ev);
            auto z_t = forward_diffuse(z0, step, eps, s);
            DenoiserFn<float> oracle = [&](Var<float>, int, Var<float>) { return eps; };
            auto rec = one_step_denoise(z_t, step, z0, oracle, s);
            for (int i = 0; i < 27; ++i)
                CHECK(std::abs(rec.value()[size_t(i)] - z0v[size_t(i)]) < 1e-5f);
        }
    }
    SECTION("double round trip within 1e-10") {
        for (int k = 0; k < 20; ++k) {
            Tape<double> t;
            std::vector<double> z0v(27), ev(27);
            for (auto& v : z0v) v = rng.gaussian();
            for (auto& v : ev) v = rng.gaussian();
            const int step = rng.uniform_int(1, 1000);
            auto z0 = t.constant({3, 3, 3}, z0v);
            auto eps = t.constant({3, 3, 3}, ev);
            auto z_t = forward_diffuse(z0, step, eps, s);
            DenoiserFn<double> oracle = [&](Var<double>, int, Var<double>) { return eps; };
            auto rec = one_step_denoise(z_t, step, z0, oracle, s);
            for (int i = 0; i < 27; ++i)
                CHECK(std::abs(rec.value()[size_t(i)] - z0v[size_t(i)]) < 1e-10);
        }
    }
}

TEST_CASE("one_step_denoise with zero denoiser is z_t / sqrt(abar)") {
    auto s = NoiseSchedule::make();
    Tape<double> t;
    auto z_t = t.constant({2}, {0.4, -0.9});
    auto cond = t.full({2}, 0.0);
    DenoiserFn<double> zero = [&](Var<double> z, int, Var<double>) {
        return z.tape->full(z.shape(), 0.0);
    };
    auto out = one_step_denoise(z_t, 200, cond, zero, s);
    const double ab = s.abar(200);
    CHECK(out.value()[0] == Approx(0.4 / std::sqrt(ab)).epsilon(1e-12));
    CHECK(out.value()[1] == Approx(-0.9 / std::sqrt(ab)).epsilon(1e-12));
}

TEST_CASE("denoiser perturbation maps linearly onto z0 error") {
    auto s = NoiseSchedule::make();
    Rng rng(6);
    Tape<double> t;
    std::vector<double> z0v(9), ev(9), dv(9);
    for (auto& v : z0v) v = rng.gaussian();
    for (auto& v : ev) v = rng.gaussian();
    for (auto& v : dv) v = 0.01 * rng.gaussian();
    const int step = 321;
    auto z0 = t.constant({9}, z0v);
    auto eps = t.constant({9}, ev);
    auto delta = t.constant({9}, dv);
    auto z_t = forward_diffuse(z0, step, eps, s);
    DenoiserFn<double> perturbed = [&](Var<double>, int, Var<double>) { return add(eps, delta); };
    auto rec = one_step_denoise(z_t, step, z0, perturbed, s);
    const double ab = s.abar(step);
    const double k = std::sqrt(1 - ab) / std::sqrt(ab);
    for (int i = 0; i < 9; ++i)
        CHECK(z0v[size_t(i)] - rec.value()[size_t(i)] == Approx(k * dv[size_t(i)]).margin(1e-10));
}

TEST_CASE("n_step_denoise") {
    auto s = NoiseSchedule::make();

    SECTION("n=1 equals partial diffusion plus one denoise step, bit for bit") {
        auto plan = TimestepPlan::make(200, 1);
        std::vector<float> zv(12);
        Rng vr(8);
        for (auto& v : zv) v = float(vr.gaussian());

        DenoiserFn<float> zero = [&](Var<float> z, int, Var<float>) {
            return z.tape->full(z.shape(), 0.0f);
        };

        Rng r1(99), r2(99);
        Tape<float> t1;
        auto z1 = t1.constant({3, 2, 2}, zv);
        auto out1 = n_step_denoise(z1, plan, zero, s, r1);

        Tape<float> t2;
        auto z2 = t2.constant({3, 2, 2}, zv);
        auto eps = gaussian_like(t2, z2.shape(), r2);
        auto out2 = one_step_denoise(partial_diffuse(z2, 200, 200, eps, s), 200, z2, zero, s);
        CHECK(out1.value() == out2.value());
    }

    SECTION("oracle denoiser at every step recovers the anchor within 1e-4") {
        auto plan = TimestepPlan::make(200, 4);
        std::vector<float> zv(12);
        Rng vr(4);
        for (auto& v : zv) v = float(vr.gaussian());
        Tape<float> t;
        auto z_pre = t.constant({3, 2, 2}, zv);
        // the oracle inverts the injected noise analytically from (z_t, anchor)
        DenoiserFn<float> oracle = [&](Var<float> z, int step, Var<float> cond) {
            const float ab = float(s.abar(step));
            return mul_scalar(sub(z, mul_scalar(cond, std::sqrt(ab))),
                              1.0f / std::sqrt(1.0f - ab));
        };
        Rng rng(11);
        auto out = n_step_denoise(z_pre, plan, oracle, s, rng);
        for (int i = 0; i < 12; ++i)
            CHECK(std::abs(out.value()[size_t(i)] - zv[size_t(i)]) < 1e-4f);
    }

    SECTION("fixed rng seed gives bit-identical outputs") {
        auto plan = TimestepPlan::make(200, 4);
        std::vector<float> zv(12, 0.25f);
        DenoiserFn<float> zero = [&](Var<float> z, int, Var<float>) {
            return z.tape->full(z.shape(), 0.0f);
        };
        auto run = [&]() {
            Rng rng(7);
            Tape<float> t;
            auto z = t.constant({3, 2, 2}, zv);
            return n_step_denoise(z, plan, zero, s, rng).value();
        };
        CHECK(run() == run());
    }
}
