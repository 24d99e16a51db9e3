#pragma once

#include <vector>

#include "tdr/autograd.hpp"
#include "tdr/networks.hpp"

namespace tdr {

// High-level feature loss: mean L1 feature distance to the HQ image in the
// feature spaces of both task networks. Trains the restoration side only;
// the task networks enter as frozen leaves.
template <typename S>
Var<S> hlf_loss(Tape<S>& t, Var<S> img_train, Var<S> img_hq, const TaskNet<S>& h,
                const BoundParams<S>& hb, const TaskNet<S>& h_hq, const BoundParams<S>& hqb) {
    require(h.feature_dim() == h_hq.feature_dim(),
            "hlf_loss: feature dims differ (" + std::to_string(h.feature_dim()) + " vs " +
                std::to_string(h_hq.feature_dim()) + ")");
    auto f_cur = h.forward(t, hb, img_train).feat;
    auto f_cur_hq = h.forward(t, hb, img_hq).feat;
    auto f_frozen = h_hq.forward(t, hqb, img_train).feat;
    auto f_frozen_hq = h_hq.forward(t, hqb, img_hq).feat;
    return mul_scalar(add(l1(f_cur, f_cur_hq), l1(f_frozen, f_frozen_hq)), S(0.5));
}

// Single-feature-space variants (the ablation configurations).
template <typename S>
Var<S> hlf_loss_single(Tape<S>& t, Var<S> img_train, Var<S> img_hq, const TaskNet<S>& net,
                       const BoundParams<S>& nb) {
    auto f = net.forward(t, nb, img_train).feat;
    auto f_hq = net.forward(t, nb, img_hq).feat;
    return l1(f, f_hq);
}

// Cross-entropy of the task network over a mixed batch: restored images for
// the first half, HQ images for the second half.
template <typename S>
Var<S> task_loss(Tape<S>& t, const std::vector<Var<S>>& imgs_restored,
                 const std::vector<Var<S>>& imgs_hq, const std::vector<int>& labels,
                 const TaskNet<S>& h, const BoundParams<S>& hb) {
    const size_t n = labels.size();
    require(n >= 2 && n % 2 == 0, "task_loss: batch must be even, got " + std::to_string(n));
    require(imgs_restored.size() == n && imgs_hq.size() == n, "task_loss: batch size mismatch");
    std::vector<Var<S>> terms;
    terms.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        auto img = i < n / 2 ? imgs_restored[i] : imgs_hq[i];
        terms.push_back(cross_entropy(h.forward(t, hb, img).logits, labels[i]));
    }
    return mean_scalars(terms);
}

// Feature matching over the same mixed batch against the frozen HQ network's
// features of the HQ images.
template <typename S>
Var<S> fm_loss(Tape<S>& t, const std::vector<Var<S>>& imgs_restored,
               const std::vector<Var<S>>& imgs_hq, const TaskNet<S>& h, const BoundParams<S>& hb,
               const TaskNet<S>& h_hq, const BoundParams<S>& hqb) {
    const size_t n = imgs_hq.size();
    require(n >= 2 && n % 2 == 0, "fm_loss: batch must be even, got " + std::to_string(n));
    require(imgs_restored.size() == n, "fm_loss: batch size mismatch");
    require(h.feature_dim() == h_hq.feature_dim(),
            "fm_loss: feature dims differ (" + std::to_string(h.feature_dim()) + " vs " +
                std::to_string(h_hq.feature_dim()) + ")");
    std::vector<Var<S>> terms;
    terms.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        auto img = i < n / 2 ? imgs_restored[i] : imgs_hq[i];
        auto f = h.forward(t, hb, img).feat;
        auto target = detach(h_hq.forward(t, hqb, imgs_hq[i]).feat);
        terms.push_back(l1(f, target));
    }
    return mean_scalars(terms);
}

}  // namespace tdr
