#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "tdr/autograd.hpp"
#include "tdr/prelude.hpp"
#include "tdr/rng.hpp"

namespace tdr {

// beta/alpha/alpha-bar sequences, 1-indexed in t with alpha_bar(0) == 1.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;       // beta[t-1] for t in [1,T]
    std::vector<double> alpha;      // 1 - beta
    std::vector<double> alpha_bar;  // running product

    static NoiseSchedule make(int T = 1000, double beta_start = 1e-4, double beta_end = 0.02) {
        require(T >= 1, "schedule: T must be >= 1");
        require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0,
                "schedule: need 0 < beta_start <= beta_end < 1");
        NoiseSchedule s;
        s.T = T;
        s.beta.resize(size_t(T));
        s.alpha.resize(size_t(T));
        s.alpha_bar.resize(size_t(T));
        double prod = 1.0;
        for (int t = 1; t <= T; ++t) {
            const double b = T == 1 ? beta_start
                                    : beta_start + (beta_end - beta_start) * double(t - 1) / double(T - 1);
            s.beta[size_t(t - 1)] = b;
            s.alpha[size_t(t - 1)] = 1.0 - b;
            prod *= 1.0 - b;
            s.alpha_bar[size_t(t - 1)] = prod;
        }
        return s;
    }

    double abar(int t) const {
        require(t >= 0 && t <= T, "schedule: t out of range");
        return t == 0 ? 1.0 : alpha_bar[size_t(t - 1)];
    }
};

// Denoising timesteps [t_p, floor(t_p/n*(n-1)), ..., floor(t_p/n)].
struct TimestepPlan {
    int t_p = 0;
    int n = 0;
    std::vector<int> steps;

    static TimestepPlan make(int t_p, int n) {
        require(t_p >= 1, "plan: t_p must be >= 1");
        require(n >= 1 && n <= t_p, "plan: need 1 <= n <= t_p");
        TimestepPlan p;
        p.t_p = t_p;
        p.n = n;
        p.steps.resize(size_t(n));
        p.steps[0] = t_p;
        for (int j = 1; j < n; ++j)
            p.steps[size_t(j)] = int((long(t_p) * (n - j)) / n);
        return p;
    }
};

// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps
template <typename S>
Var<S> forward_diffuse(Var<S> z0, int t, Var<S> eps, const NoiseSchedule& sched) {
    require(t >= 1 && t <= sched.T, "forward_diffuse: t out of range");
    require_same_shape("forward_diffuse", z0.shape(), eps.shape());
    const double ab = sched.abar(t);
    return axpby(std::sqrt(ab), z0, std::sqrt(1.0 - ab), eps);
}

// Same arithmetic anchored at the pre-restored latent; the mild-noise regime
// is enforced by t <= t_p.
template <typename S>
Var<S> partial_diffuse(Var<S> z_pre_res, int t, int t_p, Var<S> eps, const NoiseSchedule& sched) {
    require(t <= t_p, "partial_diffuse: t=" + std::to_string(t) + " exceeds t_p=" + std::to_string(t_p));
    return forward_diffuse(z_pre_res, t, eps, sched);
}

template <typename S>
using DenoiserFn = std::function<Var<S>(Var<S> z_t, int t, Var<S> cond)>;

// z0_hat = (z_t - sqrt(1 - abar_t) eps_theta(z_t, t, cond)) / sqrt(abar_t)
template <typename S>
Var<S> one_step_denoise(Var<S> z_t, int t, Var<S> z_pre_res, const DenoiserFn<S>& eps_theta,
                        const NoiseSchedule& sched) {
    require(t >= 1 && t <= sched.T, "one_step_denoise: t out of range");
    const double ab = sched.abar(t);
    auto eps_hat = eps_theta(z_t, t, z_pre_res);
    require_same_shape("one_step_denoise", z_t.shape(), eps_hat.shape());
    const double s = std::sqrt(ab);
    return axpby(1.0 / s, z_t, -std::sqrt(1.0 - ab) / s, eps_hat);
}

template <typename S>
Var<S> gaussian_like(Tape<S>& t, const Shape& shape, Rng& rng) {
    std::vector<S> v(size_t(numel(shape)));
    for (auto& x : v) x = S(rng.gaussian());
    return t.constant(shape, std::move(v));
}

// One-step denoising down the plan starting from z_start (already at noise
// level plan.steps[0]); between steps the predicted z0 is re-noised to the
// next timestep with fresh eps.
template <typename S>
Var<S> denoise_along_plan(Var<S> z_start, Var<S> cond, const TimestepPlan& plan,
                          const DenoiserFn<S>& eps_theta, const NoiseSchedule& sched, Rng& rng) {
    require(!plan.steps.empty(), "denoise: empty plan");
    Tape<S>& tape = *z_start.tape;
    Var<S> z = z_start;
    Var<S> z0_hat = z;
    for (size_t j = 0; j < plan.steps.size(); ++j) {
        z0_hat = one_step_denoise(z, plan.steps[j], cond, eps_theta, sched);
        if (j + 1 < plan.steps.size()) {
            auto eps = gaussian_like(tape, cond.shape(), rng);
            z = forward_diffuse(z0_hat, plan.steps[j + 1], eps, sched);
        }
    }
    return z0_hat;
}

// Partial diffusion of the pre-restored latent to t_p, then the plan.
template <typename S>
Var<S> n_step_denoise(Var<S> z_pre_res, const TimestepPlan& plan, const DenoiserFn<S>& eps_theta,
                      const NoiseSchedule& sched, Rng& rng) {
    require(!plan.steps.empty(), "n_step_denoise: empty plan");
    auto eps0 = gaussian_like(*z_pre_res.tape, z_pre_res.shape(), rng);
    auto z = partial_diffuse(z_pre_res, plan.steps[0], plan.t_p, eps0, sched);
    return denoise_along_plan(z, z_pre_res, plan, eps_theta, sched, rng);
}

}  // namespace tdr
