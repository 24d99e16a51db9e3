#include <catch2/catch.hpp>

#include "tdr/autograd.hpp"
#include "tdr/gradcheck.hpp"
#include "tdr/rng.hpp"

using namespace tdr;

namespace {

std::vector<double> random_vec(size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

}  // namespace

TEST_CASE("relu value") {
    Tape<double> t;
    auto x = t.constant({3}, {-1, 0, 2});
    auto y = relu(x);
    CHECK(y.value() == std::vector<double>{0, 0, 2});
}

TEST_CASE("l1 of identical tensors is zero") {
    Rng rng(7);
    Tape<double> t;
    auto v = random_vec(12, rng);
    auto x = t.constant({3, 2, 2}, v);
    auto y = t.constant({3, 2, 2}, v);
    CHECK(l1(x, y).scalar() == 0.0);
}

TEST_CASE("conv2d all-ones 3x3 on all-ones 5x5, padding 1") {
    Tape<double> t;
    auto x = t.full({1, 5, 5}, 1.0);
    auto w = t.full({1, 1, 3, 3}, 1.0);
    auto b = t.full({1}, 0.0);
    auto y = conv2d(x, w, b, 1);
    REQUIRE(y.shape() == Shape{1, 5, 5});
    CHECK(y.value()[2 * 5 + 2] == 9.0);  // center: full 3x3 support
    CHECK(y.value()[0] == 4.0);          // corner: 2x2 support
    CHECK(y.value()[2] == 6.0);          // top edge: 2x3 support
}

TEST_CASE("backward of mse(w*x, y) at w=2, x=3, y=5") {
    Tape<double> t;
    auto w = t.leaf({1}, {2.0}, true);
    auto y = t.constant({1}, {5.0});
    auto loss = mse(mul_scalar(w, 3.0), y);
    t.backward(loss);
    // d/dw (3w - 5)^2 = 2(3w-5)*3 = 6 at w=2
    CHECK(w.grad()[0] == Approx(6.0).epsilon(1e-12));
}

TEST_CASE("leaf not involved in the loss gets zero gradient") {
    Tape<double> t;
    auto w = t.leaf({2}, {1.0, 2.0}, true);
    auto unused = t.leaf({2}, {3.0, 4.0}, true);
    auto loss = mse(w, t.constant({2}, {0.0, 0.0}));
    t.backward(loss);
    CHECK(t.node(unused.id).grad.empty());  // never touched -> gradient is zero
    CHECK(w.grad()[0] == Approx(1.0));
}

TEST_CASE("l1 gradient is sign(x-c)/numel away from ties") {
    Tape<double> t;
    auto x = t.leaf({4}, {1.0, -2.0, 3.0, -4.0}, true);
    auto c = t.constant({4}, {0.5, 0.5, 0.5, 0.5});
    auto loss = l1(x, c);
    t.backward(loss);
    CHECK(x.grad()[0] == Approx(0.25));
    CHECK(x.grad()[1] == Approx(-0.25));
    CHECK(x.grad()[2] == Approx(0.25));
    CHECK(x.grad()[3] == Approx(-0.25));
}

TEST_CASE("backward rejects non-scalar loss and double consumption") {
    Tape<double> t;
    auto x = t.leaf({2}, {1.0, 2.0}, true);
    CHECK_THROWS(t.backward(x));
    auto loss = mse(x, t.constant({2}, {0.0, 0.0}));
    t.backward(loss);
    CHECK_THROWS(t.backward(loss));
}

TEST_CASE("shape mismatch diagnostics name the op kind and shapes") {
    Tape<double> t;
    auto x = t.full({2, 2, 2}, 1.0);
    auto y = t.full({2, 2, 3}, 1.0);
    try {
        add(x, y);
        FAIL("expected rejection");
    } catch (const std::exception& e) {
        const std::string msg = e.what();
        CHECK(msg.find("add") != std::string::npos);
        CHECK(msg.find("2x2x2") != std::string::npos);
        CHECK(msg.find("2x2x3") != std::string::npos);
    }
    auto w = t.full({1, 2, 2, 2}, 1.0);  // even kernel size
    CHECK_THROWS(conv2d(x, w, t.full({1}, 0.0), 1));
}

TEST_CASE("forward evaluation is deterministic") {
    Rng rng(11);
    auto v = random_vec(27, rng);
    auto run = [&]() {
        Tape<float> t;
        std::vector<float> vf(v.begin(), v.end());
        auto x = t.constant({3, 3, 3}, vf);
        auto w = t.constant({2, 3, 3, 3}, std::vector<float>(54, 0.1f));
        auto y = conv2d(x, w, t.full({2}, 0.5f), 1);
        return silu(y).value();
    };
    CHECK(run() == run());
}

TEST_CASE("linearity of backward") {
    Rng rng(3);
    const auto xv = random_vec(8, rng);
    const auto t1 = random_vec(8, rng);
    const auto t2 = random_vec(8, rng);
    const double a = 0.7, b = -1.3;

    auto grad_of = [&](double ca, double cb) {
        Tape<double> t;
        auto x = t.leaf({8}, xv, true);
        auto l1v = mse(x, t.constant({8}, t1));
        auto l2v = l1(x, t.constant({8}, t2));
        auto loss = add(mul_scalar(l1v, ca), mul_scalar(l2v, cb));
        t.backward(loss);
        return t.node(x.id).grad;
    };
    const auto g1 = grad_of(1.0, 0.0);
    const auto g2 = grad_of(0.0, 1.0);
    const auto gc = grad_of(a, b);
    for (size_t i = 0; i < 8; ++i)
        CHECK(gc[i] == Approx(a * g1[i] + b * g2[i]).margin(1e-10));
}

TEST_CASE("uniform logits give cross entropy ln(C)") {
    Tape<double> t;
    auto logits = t.full({5}, 0.42);
    CHECK(cross_entropy(logits, 3).scalar() == Approx(std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("softmax sums to one") {
    Rng rng(5);
    Tape<double> t;
    auto x = t.constant({7}, random_vec(7, rng, -3, 3));
    auto y = softmax(x);
    double s = 0;
    for (double v : y.value()) s += v;
    CHECK(s == Approx(1.0).margin(1e-6));
}

TEST_CASE("gradcheck per kernel") {
    Rng rng(17);
    const double eps = 1e-5, tol = 1e-4;

    SECTION("conv2d") {
        auto rep = gradcheck(
            [](Tape<double>& t, const std::vector<Var<double>>& v) {
                return mse(conv2d(v[0], v[1], v[2], 1), t.full({2, 4, 4}, 0.3));
            },
            {{"x", {3, 4, 4}, random_vec(48, rng)},
             {"w", {2, 3, 3, 3}, random_vec(54, rng)},
             {"b", {2}, random_vec(2, rng)}},
            eps, tol);
        INFO(rep.worst.leaf << "[" << rep.worst.index << "] analytic=" << rep.worst.analytic
                            << " numeric=" << rep.worst.numeric);
        CHECK(rep.pass(tol));
    }
    SECTION("linear") {
        auto rep = gradcheck(
            [](Tape<double>& t, const std::vector<Var<double>>& v) {
                return mse(linear(v[0], v[1], v[2]), t.full({3}, -0.2));
            },
            {{"x", {5}, random_vec(5, rng)},
             {"w", {3, 5}, random_vec(15, rng)},
             {"b", {3}, random_vec(3, rng)}},
            eps, tol);
        CHECK(rep.pass(tol));
    }
    SECTION("relu away from ties") {
        auto rep = gradcheck(
            [](Tape<double>& t, const std::vector<Var<double>>& v) {
                return mse(relu(v[0]), t.full({6}, 0.1));
            },
            {{"x", {6}, {0.5, -0.7, 1.2, -0.01, 0.3, -2.0}}}, eps, tol);
        CHECK(rep.pass(tol));
        CHECK(rep.excluded == 0);
    }
    SECTION("relu at exactly zero is excluded") {
        // l1 against -1 keeps a unit upstream slope through the kink
        auto rep = gradcheck(
            [](Tape<double>& t, const std::vector<Var<double>>& v) {
                return l1(relu(v[0]), t.full({3}, -1.0));
            },
            {{"x", {3}, {0.0, 1.0, -1.0}}}, eps, tol);
        CHECK(rep.excluded >= 1);
        CHECK(rep.pass(tol));
    }
    SECTION("silu") {
        auto rep = gradcheck(
            [](Tape<double>& t, const std::vector<Var<double>>& v) {
                return mse(silu(v[0]), t.full({6}, 0.0));
            },
            {{"x", {6}, random_vec(6, rng, -2, 2)}}, eps, tol);
        CHECK(rep.pass(tol));
    }
    SECTION("avgpool2d and upsample_nearest") {
        auto rep = gradcheck(
            [](Tape<double>& t, const std::vector<Var<double>>& v) {
                return mse(upsample_nearest(avgpool2d(v[0], 2), 2), t.full({2, 4, 4}, 0.0));
            },
            {{"x", {2, 4, 4}, random_vec(32, rng)}}, eps, tol);
        CHECK(rep.pass(tol));
    }
    SECTION("add and mul_scalar") {
        auto rep = gradcheck(
            [](Tape<double>& t, const std::vector<Var<double>>& v) {
                return mse(add(mul_scalar(v[0], 1.7), v[1]), t.full({4}, 0.0));
            },
            {{"x", {4}, random_vec(4, rng)}, {"y", {4}, random_vec(4, rng)}}, eps, tol);
        CHECK(rep.pass(tol));
    }
    SECTION("concat_channels") {
        auto rep = gradcheck(
            [](Tape<double>& t, const std::vector<Var<double>>& v) {
                return mse(concat_channels(v[0], v[1]), t.full({3, 2, 2}, 0.1));
            },
            {{"x", {1, 2, 2}, random_vec(4, rng)}, {"y", {2, 2, 2}, random_vec(8, rng)}}, eps, tol);
        CHECK(rep.pass(tol));
    }
    SECTION("l1 away from ties") {
        auto rep = gradcheck(
            [](Tape<double>& t, const std::vector<Var<double>>& v) {
                return l1(v[0], t.constant({4}, {0.0, 0.0, 0.0, 0.0}));
            },
            {{"x", {4}, {0.5, -0.7, 1.2, -0.4}}}, eps, tol);
        CHECK(rep.pass(tol));
    }
    SECTION("mse") {
        auto rep = gradcheck(
            [](Tape<double>& t, const std::vector<Var<double>>& v) {
                return mse(v[0], t.constant({4}, {0.1, 0.2, 0.3, 0.4}));
            },
            {{"x", {4}, random_vec(4, rng)}}, eps, tol);
        CHECK(rep.pass(tol));
    }
    SECTION("softmax") {
        auto rep = gradcheck(
            [](Tape<double>& t, const std::vector<Var<double>>& v) {
                return mse(softmax(v[0]), t.full({5}, 0.2));
            },
            {{"x", {5}, random_vec(5, rng, -2, 2)}}, eps, tol);
        CHECK(rep.pass(tol));
    }
    SECTION("cross_entropy") {
        auto rep = gradcheck(
            [](Tape<double>&, const std::vector<Var<double>>& v) {
                return cross_entropy(v[0], 2);
            },
            {{"logits", {5}, random_vec(5, rng, -2, 2)}}, eps, tol);
        CHECK(rep.pass(tol));
    }
    SECTION("instance_norm") {
        auto rep = gradcheck(
            [](Tape<double>& t, const std::vector<Var<double>>& v) {
                return mse(instance_norm(v[0], v[1], v[2]), t.full({2, 3, 3}, 0.0));
            },
            {{"x", {2, 3, 3}, random_vec(18, rng)},
             {"g", {2}, {1.1, 0.9}},
             {"b", {2}, {0.1, -0.2}}},
            eps, tol);
        CHECK(rep.pass(tol));
    }
    SECTION("reshape") {
        auto rep = gradcheck(
            [](Tape<double>& t, const std::vector<Var<double>>& v) {
                return mse(reshape(v[0], {4}), t.full({4}, 0.25));
            },
            {{"x", {1, 2, 2}, random_vec(4, rng)}}, eps, tol);
        CHECK(rep.pass(tol));
    }
    SECTION("axpby") {
        auto rep = gradcheck(
            [](Tape<double>& t, const std::vector<Var<double>>& v) {
                return mse(axpby(0.31, v[0], -1.7, v[1]), t.full({5}, 0.0));
            },
            {{"x", {5}, random_vec(5, rng)}, {"y", {5}, random_vec(5, rng)}}, eps, tol);
        CHECK(rep.pass(tol));
    }
    SECTION("space_to_depth and depth_to_space") {
        auto rep = gradcheck(
            [](Tape<double>& t, const std::vector<Var<double>>& v) {
                return mse(depth_to_space(space_to_depth(v[0], 2), 2), t.full({2, 4, 4}, 0.1));
            },
            {{"x", {2, 4, 4}, random_vec(32, rng)}}, eps, tol);
        CHECK(rep.pass(tol));
    }
}

TEST_CASE("space_to_depth round trip is exact") {
    Rng rng(31);
    Tape<double> t;
    auto v = random_vec(3 * 6 * 4, rng);
    auto x = t.constant({3, 6, 4}, v);
    auto s = space_to_depth(x, 2);
    CHECK(s.shape() == Shape{12, 3, 2});
    auto back = depth_to_space(s, 2);
    CHECK(back.value() == v);
}

TEST_CASE("detach blocks the backward path") {
    Tape<double> t;
    auto x = t.leaf({3}, {1.0, -2.0, 0.5}, true);
    auto loss = mse(detach(relu(x)), t.full({3}, 0.0));
    t.backward(loss);
    CHECK(t.node(x.id).grad.empty());
}

TEST_CASE("gradcheck on a constant graph reports zero everywhere") {
    auto rep = gradcheck(
        [](Tape<double>& t, const std::vector<Var<double>>& v) {
            (void)v;
            return t.constant({1}, {3.14});
        },
        {{"x", {3}, {1.0, 2.0, 3.0}}}, 1e-5, 1e-4);
    CHECK(rep.max_rel_err == 0.0);
}

TEST_CASE("gradcheck rejects epsilon outside its range") {
    CHECK_THROWS(gradcheck(
        [](Tape<double>& t, const std::vector<Var<double>>&) { return t.constant({1}, {0.0}); },
        {{"x", {1}, {0.0}}}, 1e-2, 1e-4));
}

TEST_CASE("clamp01 composition") {
    Tape<double> t;
    auto x = t.leaf({5}, {-0.5, 0.0, 0.4, 1.0, 1.7}, true);
    auto y = clamp01(x);
    CHECK(y.value()[0] == 0.0);
    CHECK(y.value()[1] == 0.0);
    CHECK(y.value()[2] == Approx(0.4));
    CHECK(y.value()[3] == 1.0);
    CHECK(y.value()[4] == 1.0);
}
