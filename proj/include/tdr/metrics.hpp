#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "tdr/degradation.hpp"
#include "tdr/networks.hpp"

namespace tdr {

// 10 log10(1 / MSE) on [0,1]-range images, MSE over all channels.
inline double psnr(const Image& a, const Image& b) {
    require(a.same_shape(b), "psnr: shape mismatch");
    const double m = mse_between(a, b);
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / m);
}

template <typename S>
std::vector<S> tasknet_features(const TaskNet<S>& net, const Image& img) {
    Tape<S> t;
    auto b = bind(t, net.p, false);
    return net.forward(t, b, image_leaf(t, img, false)).feat.value();
}

template <typename S>
int tasknet_predict(const TaskNet<S>& net, const Image& img) {
    Tape<S> t;
    auto b = bind(t, net.p, false);
    const auto& lv = net.forward(t, b, image_leaf(t, img, false)).logits.value();
    int best = 0;
    for (size_t i = 1; i < lv.size(); ++i)
        if (lv[i] > lv[size_t(best)]) best = int(i);
    return best;
}

// Mean L1 distance in the frozen HQ task network's feature space.
template <typename S>
double feature_distance(const Image& restored, const Image& hq, const TaskNet<S>& h_hq) {
    const auto fa = tasknet_features(h_hq, restored);
    const auto fb = tasknet_features(h_hq, hq);
    double s = 0;
    for (size_t i = 0; i < fa.size(); ++i) s += std::abs(double(fa[i]) - double(fb[i]));
    return s / double(fa.size());
}

struct EvalReport {
    double accuracy = 0;  // mean over inference runs
    double psnr_db = 0;   // first run
    double f_d = 0;       // first run
    int n_samples = 0;
    std::vector<double> run_accuracies;
};

// pipeline(lq, rng) -> restored image; rng is the only source of stochasticity
using PipelineFn = std::function<Image(const Image& lq, Rng& rng)>;

// Task accuracy averaged over `runs` stochastic inference passes with seeds
// derived from base_seed; image metrics come from the first pass.
template <typename S>
EvalReport evaluate(const PipelineFn& pipeline, const std::vector<DegradedPair>& eval_set,
                    const TaskNet<S>& h, const TaskNet<S>& h_hq, uint64_t base_seed, int runs = 4) {
    require(!eval_set.empty(), "evaluate: empty eval set");
    require(runs >= 1, "evaluate: runs must be >= 1");
    EvalReport rep;
    rep.n_samples = int(eval_set.size());
    double psnr_sum = 0, fd_sum = 0;
    for (int r = 0; r < runs; ++r) {
        long correct = 0;
        for (size_t i = 0; i < eval_set.size(); ++i) {
            Rng rng = derive_rng(base_seed, {0xe7a1ULL, uint64_t(r), uint64_t(i)});
            const Image restored = pipeline(eval_set[i].lq, rng);
            if (tasknet_predict(h, restored) == eval_set[i].label) ++correct;
            if (r == 0) {
                psnr_sum += psnr(restored, eval_set[i].hq);
                fd_sum += feature_distance(restored, eval_set[i].hq, h_hq);
            }
        }
        rep.run_accuracies.push_back(double(correct) / double(eval_set.size()));
    }
    for (double a : rep.run_accuracies) rep.accuracy += a;
    rep.accuracy /= double(runs);
    rep.psnr_db = psnr_sum / double(eval_set.size());
    rep.f_d = fd_sum / double(eval_set.size());
    return rep;
}

}  // namespace tdr
