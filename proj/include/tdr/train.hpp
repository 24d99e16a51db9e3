#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tdr/dataset.hpp"
#include "tdr/degradation.hpp"
#include "tdr/losses.hpp"
#include "tdr/networks.hpp"
#include "tdr/optim.hpp"

namespace tdr {

// rng stream tags
namespace stream {
constexpr uint64_t kBatch = 0x01, kRecipe = 0x02, kPhase1T = 0x03, kPhase1Eps = 0x04,
                   kPipeline = 0x05, kTasknetBatch = 0x06, kRestorerBatch = 0x07,
                   kRestorerRecipe = 0x08, kEvalSet = 0x09, kWarmup = 0x0a, kCodecBatch = 0x0b;
}  // namespace stream

struct TrainConfig {
    long iters = 10000;
    double lr_edtr = 1e-4;
    double lr_task = 5e-3;
    bool cosine = true;
    double alpha = 1.0;
    int batch = 8;
    int t_p = 200;
    int T = 1000;
    int n = 1;
    uint64_t seed = 0;
    Mixture mixture = Mixture::B;

    // component toggles (ablation cells); all on for the full method
    bool use_hlf = true;
    bool use_fm = true;
    bool prerestore = true;
    bool partial_diffusion = true;

    long warmup_noise_pred = 0;  // optional eps-prediction warm-up, off by default
    bool train_decoder = true;   // tiny_ae mode only
    int wavelet_levels = 2;
    long checkpoint_every = 0;
    std::string checkpoint_path;

    TimestepPlan plan() const {
        return partial_diffusion ? TimestepPlan::make(t_p, n) : TimestepPlan::make(T, n);
    }
    PipelineOptions pipeline_options() const {
        return PipelineOptions{prerestore, partial_diffusion, true, wavelet_levels};
    }
};

struct LossReport {
    long iteration = 0;
    double hlf = 0, task = 0, fm = 0;
    double combined_tasknet = 0;
    double lr_edtr = 0, lr_task = 0;
};

using LossSink = std::function<void(const LossReport&)>;

template <typename S>
struct TrainState {
    PreRestorer<S> rpix;
    LatentCodec<S> codec;
    CondDenoiser<S> den;
    TaskNet<S> task;
    TaskNet<S> task_hq;
    AdamW<S> opt_den;
    AdamW<S> opt_dec;
    MomentumSgd<S> opt_task;
    long iteration = 0;
    uint64_t seed = 0;

    void init(int classes, int tasknet_width, int prerestorer_width, int denoiser_c1,
              int denoiser_c2, typename LatentCodec<S>::Mode codec_mode, uint64_t seed_) {
        seed = seed_;
        iteration = 0;
        Rng r0 = derive_rng(seed, {0x100});
        rpix.width = prerestorer_width;
        rpix.init(r0);
        Rng r1 = derive_rng(seed, {0x101});
        codec.mode = codec_mode;
        codec.init(r1);
        Rng r2 = derive_rng(seed, {0x102});
        den.latent_channels = codec.latent_channels();
        den.c1 = denoiser_c1;
        den.c2 = denoiser_c2;
        den.init(r2);
        Rng r3 = derive_rng(seed, {0x103});
        task_hq.classes = classes;
        task_hq.width = tasknet_width;
        task_hq.init(r3);
        task = task_hq;  // H starts as a copy of H_HQ
        opt_den = {};
        opt_dec = {};
        opt_task = {};
    }

    void save(const std::string& path) const {
        Checkpoint c;
        rpix.p.save_into(c, "rpix.");
        codec.enc.save_into(c, "codec.enc.");
        codec.dec.save_into(c, "codec.dec.");
        den.p.save_into(c, "den.");
        task.p.save_into(c, "task.");
        task_hq.p.save_into(c, "task_hq.");
        if (!opt_den.m.empty()) opt_den.save_into(c, "opt_den.", den.p);
        if (!opt_dec.m.empty()) opt_dec.save_into(c, "opt_dec.", codec.dec);
        if (!opt_task.buf.empty()) opt_task.save_into(c, "opt_task.", task.p);
        c.put_i64("iteration", iteration);
        c.put_i64("seed", int64_t(seed));
        c.save(path);
    }

    void load(const std::string& path) {
        Checkpoint c = Checkpoint::load(path);
        rpix.p.load_from(c, "rpix.");
        codec.enc.load_from(c, "codec.enc.");
        codec.dec.load_from(c, "codec.dec.");
        den.p.load_from(c, "den.");
        task.p.load_from(c, "task.");
        task_hq.p.load_from(c, "task_hq.");
        if (c.has("opt_den.t")) opt_den.load_from(c, "opt_den.", den.p);
        if (c.has("opt_dec.t")) opt_dec.load_from(c, "opt_dec.", codec.dec);
        if (c.has("opt_task.buf." + task.p.params[0].name)) opt_task.load_from(c, "opt_task.", task.p);
        iteration = c.get_i64("iteration");
        seed = uint64_t(c.get_i64("seed"));
    }
};

template <typename S>
std::vector<std::vector<S>> collect_grads(Tape<S>& t, const BoundParams<S>& b) {
    std::vector<std::vector<S>> g;
    g.reserve(b.vars.size());
    for (size_t i = 0; i < b.vars.size(); ++i) g.push_back(b.grad(t, i));
    return g;
}

inline std::vector<int> sample_batch_indices(size_t set_size, int batch, uint64_t seed,
                                             uint64_t tag, long iter) {
    Rng rng = derive_rng(seed, {tag, uint64_t(iter)});
    std::vector<int> idx(static_cast<size_t>(batch), 0);
    for (auto& i : idx) i = rng.uniform_int(0, int(set_size) - 1);
    return idx;
}

// Fixed degraded evaluation pairs: one recipe per image, deterministic in seed.
inline std::vector<DegradedPair> degrade_set(const std::vector<LabeledImage>& images,
                                             Mixture mixture, uint64_t seed) {
    std::vector<DegradedPair> out;
    out.reserve(images.size());
    for (size_t i = 0; i < images.size(); ++i) {
        Rng rng = derive_rng(seed, {stream::kEvalSet, uint64_t(i)});
        DegradedPair p;
        p.hq = images[i].img;
        p.recipe = sample_recipe(mixture, rng);
        p.lq = degrade(p.hq, p.recipe);
        p.label = images[i].label;
        out.push_back(std::move(p));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pre-training
// ---------------------------------------------------------------------------

template <typename S>
double tasknet_accuracy(const TaskNet<S>& net, const std::vector<LabeledImage>& set) {
    long correct = 0;
    for (const auto& s : set) {
        Tape<S> t;
        auto b = bind(t, net.p, false);
        auto out = net.forward(t, b, image_leaf(t, s.img, false));
        const auto& lv = out.logits.value();
        int best = 0;
        for (size_t i = 1; i < lv.size(); ++i)
            if (lv[i] > lv[size_t(best)]) best = int(i);
        if (best == s.label) ++correct;
    }
    return double(correct) / double(set.size());
}

// One SGD step of plain cross-entropy on the given samples; returns the loss.
template <typename S>
double tasknet_ce_step(TaskNet<S>& net, MomentumSgd<S>& opt, const std::vector<const LabeledImage*>& batch,
                       double lr) {
    Tape<S> t;
    auto b = bind(t, net.p, true);
    std::vector<Var<S>> losses;
    losses.reserve(batch.size());
    for (const auto* s : batch)
        losses.push_back(cross_entropy(net.forward(t, b, image_leaf(t, s->img, false)).logits, s->label));
    auto loss = mean_scalars(losses);
    const double lv = double(loss.scalar());
    t.backward(loss);
    auto grads = collect_grads(t, b);
    opt.step(net.p, grads, lr);
    return lv;
}

// Trains the HQ task network on clean images; returns held-out accuracy.
template <typename S>
double pretrain_hq_tasknet(TaskNet<S>& net, const ToyCorpus& corpus, long iters, int batch,
                           double lr, uint64_t seed) {
    MomentumSgd<S> opt;
    for (long it = 0; it < iters; ++it) {
        const auto idx = sample_batch_indices(corpus.train.size(), batch, seed,
                                              stream::kTasknetBatch, it);
        std::vector<const LabeledImage*> b;
        b.reserve(idx.size());
        for (int i : idx) b.push_back(&corpus.train[size_t(i)]);
        const double lv = tasknet_ce_step(net, opt, b, cosine_lr(lr, it, iters));
        require(std::isfinite(lv), "pretrain_hq_tasknet: non-finite loss at iteration " +
                                       std::to_string(it));
    }
    return tasknet_accuracy(net, corpus.val);
}

// Trains H on a fixed restored/LQ image set (the per-method baselines).
template <typename S>
double train_tasknet_on(TaskNet<S>& net, const std::vector<LabeledImage>& train_set,
                        long iters, int batch, double lr, uint64_t seed) {
    MomentumSgd<S> opt;
    for (long it = 0; it < iters; ++it) {
        const auto idx = sample_batch_indices(train_set.size(), batch, seed,
                                              stream::kTasknetBatch, it);
        std::vector<const LabeledImage*> b;
        b.reserve(idx.size());
        for (int i : idx) b.push_back(&train_set[size_t(i)]);
        const double lv = tasknet_ce_step(net, opt, b, cosine_lr(lr, it, iters));
        require(std::isfinite(lv), "train_tasknet: non-finite loss at iteration " + std::to_string(it));
    }
    return 0.0;
}

// One AdamW step of pixel L1 on restored vs HQ pairs; returns the loss.
template <typename S>
double prerestorer_l1_step(PreRestorer<S>& net, AdamW<S>& opt, const std::vector<const DegradedPair*>& batch,
                           double lr) {
    Tape<S> t;
    auto b = bind(t, net.p, true);
    std::vector<Var<S>> losses;
    losses.reserve(batch.size());
    for (const auto* p : batch) {
        auto out = net.forward(t, b, image_leaf(t, p->lq, false));
        losses.push_back(l1(out, image_leaf(t, p->hq, false)));
    }
    auto loss = mean_scalars(losses);
    const double lv = double(loss.scalar());
    t.backward(loss);
    auto grads = collect_grads(t, b);
    opt.step(net.p, grads, lr);
    return lv;
}

struct PrerestorerStats {
    double psnr_lq = 0;       // degraded vs HQ on held-out pairs
    double psnr_restored = 0; // restored vs HQ on held-out pairs
};

// Pixel-L1 pre-restorer training with online degradation; PSNR measured on a
// fixed held-out degraded set.
template <typename S>
PrerestorerStats pretrain_prerestorer(PreRestorer<S>& net, const ToyCorpus& corpus, Mixture mixture,
                                      long iters, int batch, double lr, uint64_t seed) {
    AdamW<S> opt;
    for (long it = 0; it < iters; ++it) {
        const auto idx = sample_batch_indices(corpus.train.size(), batch, seed,
                                              stream::kRestorerBatch, it);
        std::vector<DegradedPair> pairs;
        pairs.reserve(idx.size());
        for (size_t k = 0; k < idx.size(); ++k) {
            Rng rng = derive_rng(seed, {stream::kRestorerRecipe, uint64_t(it), uint64_t(k)});
            DegradedPair p;
            p.hq = corpus.train[size_t(idx[k])].img;
            p.recipe = sample_recipe(mixture, rng);
            p.lq = degrade(p.hq, p.recipe);
            pairs.push_back(std::move(p));
        }
        std::vector<const DegradedPair*> bp;
        bp.reserve(pairs.size());
        for (const auto& p : pairs) bp.push_back(&p);
        const double lv = prerestorer_l1_step(net, opt, bp, cosine_lr(lr, it, iters));
        require(std::isfinite(lv), "pretrain_prerestorer: non-finite loss at iteration " +
                                       std::to_string(it));
    }

    const auto held_out = degrade_set(corpus.val, mixture, seed ^ 0x5eedULL);
    PrerestorerStats stats;
    double mse_lq = 0, mse_out = 0;
    for (const auto& p : held_out) {
        mse_lq += mse_between(p.lq, p.hq);
        mse_out += mse_between(prerestore_image(net, p.lq), p.hq);
    }
    mse_lq /= double(held_out.size());
    mse_out /= double(held_out.size());
    stats.psnr_lq = 10.0 * std::log10(1.0 / mse_lq);
    stats.psnr_restored = 10.0 * std::log10(1.0 / mse_out);
    return stats;
}

// Reconstruction pre-training for the tiny autoencoder codec; returns PSNR
// of decode(encode(x)) on the held-out split.
template <typename S>
double pretrain_codec(LatentCodec<S>& codec, const ToyCorpus& corpus, long iters, int batch,
                      double lr, uint64_t seed) {
    require(codec.mode == LatentCodec<S>::Mode::tiny_ae, "pretrain_codec: identity codec needs no training");
    AdamW<S> opt_enc, opt_dec;
    for (long it = 0; it < iters; ++it) {
        const auto idx = sample_batch_indices(corpus.train.size(), batch, seed,
                                              stream::kCodecBatch, it);
        Tape<S> t;
        auto eb = bind(t, codec.enc, true);
        auto db = bind(t, codec.dec, true);
        std::vector<Var<S>> losses;
        for (int i : idx) {
            auto x = image_leaf(t, corpus.train[size_t(i)].img, false);
            auto rec = codec.decode(t, db, codec.encode(t, eb, x));
            losses.push_back(mse(rec, x));
        }
        auto loss = mean_scalars(losses);
        require(std::isfinite(double(loss.scalar())),
                "pretrain_codec: non-finite loss at iteration " + std::to_string(it));
        t.backward(loss);
        const double lr_now = cosine_lr(lr, it, iters);
        opt_enc.step(codec.enc, collect_grads(t, eb), lr_now);
        opt_dec.step(codec.dec, collect_grads(t, db), lr_now);
    }

    double mse_sum = 0;
    for (const auto& s : corpus.val) {
        Tape<S> t;
        auto eb = bind(t, codec.enc, false);
        auto db = bind(t, codec.dec, false);
        auto x = image_leaf(t, s.img, false);
        mse_sum += mse_between(to_image(codec.decode(t, db, codec.encode(t, eb, x))), s.img);
    }
    return 10.0 * std::log10(1.0 / (mse_sum / double(corpus.val.size())));
}

// ---------------------------------------------------------------------------
// Joint training (alternating updates)
// ---------------------------------------------------------------------------

// Conventional noise-prediction step (the HLF-off objective and the optional
// denoiser warm-up): predict the injected eps from the diffused HQ latent,
// conditioned on the pre-restored latent. Updates the denoiser only.
template <typename S>
double noise_prediction_step(TrainState<S>& state, const TrainConfig& cfg,
                             const std::vector<const LabeledImage*>& batch,
                             const std::vector<Image>& lq_images, const NoiseSchedule& sched,
                             long iter, double lr) {
    Tape<S> t;
    auto rb = bind(t, state.rpix.p, false);
    auto eb = bind(t, state.codec.enc, false);
    auto nb = bind(t, state.den.p, true);

    Rng trng = derive_rng(cfg.seed, {stream::kWarmup, uint64_t(iter)});
    const int step = trng.uniform_int(1, cfg.T);

    std::vector<Var<S>> losses;
    losses.reserve(batch.size());
    for (size_t k = 0; k < batch.size(); ++k) {
        Rng rng = derive_rng(cfg.seed, {stream::kWarmup, uint64_t(iter), uint64_t(k) + 1});
        auto hq = image_leaf(t, batch[k]->img, false);
        auto lq = image_leaf(t, lq_images[k], false);
        auto base = cfg.prerestore ? state.rpix.forward(t, rb, lq) : lq;
        auto z_cond = state.codec.encode(t, eb, base);
        auto z0 = state.codec.encode(t, eb, hq);
        auto eps = gaussian_like(t, z0.shape(), rng);
        auto z_t = forward_diffuse(z0, step, eps, sched);
        auto eps_hat = state.den.forward(t, nb, z_t, step, z_cond);
        losses.push_back(mse(eps_hat, eps));
    }
    auto loss = mean_scalars(losses);
    const double lv = double(loss.scalar());
    t.backward(loss);
    state.opt_den.step(state.den.p, collect_grads(t, nb), lr);
    return lv;
}

struct IterationBatch {
    std::vector<const LabeledImage*> samples;
    std::vector<Image> lq;
};

inline IterationBatch make_iteration_batch(const ToyCorpus& corpus, const TrainConfig& cfg,
                                           long iter) {
    IterationBatch b;
    const auto idx = sample_batch_indices(corpus.train.size(), cfg.batch, cfg.seed,
                                          stream::kBatch, iter);
    for (size_t k = 0; k < idx.size(); ++k) {
        b.samples.push_back(&corpus.train[size_t(idx[k])]);
        Rng rng = derive_rng(cfg.seed, {stream::kRecipe, uint64_t(iter), uint64_t(k)});
        b.lq.push_back(degrade(b.samples.back()->img, sample_recipe(cfg.mixture, rng)));
    }
    return b;
}

// Phase 1: update the restoration side. With HLF on, a one-step denoising at
// a timestep sampled from the plan feeds the feature loss; otherwise the
// conventional noise-prediction objective is used. Task networks are frozen.
template <typename S>
double joint_phase1(TrainState<S>& state, const TrainConfig& cfg, const IterationBatch& batch,
                    const NoiseSchedule& sched, const TimestepPlan& plan, long iter,
                    double lr_now) {
    const bool dec_trainable =
        state.codec.mode == LatentCodec<S>::Mode::tiny_ae && cfg.train_decoder;
    if (!cfg.use_hlf)
        return noise_prediction_step(state, cfg, batch.samples, batch.lq, sched, iter, lr_now);

    Tape<S> t;
    auto rb = bind(t, state.rpix.p, false);
    auto eb = bind(t, state.codec.enc, false);
    auto db = bind(t, state.codec.dec, dec_trainable);
    auto nb = bind(t, state.den.p, true);
    auto hb = bind(t, state.task.p, false);
    auto hqb = bind(t, state.task_hq.p, false);

    Rng trng = derive_rng(cfg.seed, {stream::kPhase1T, uint64_t(iter)});
    const int step = plan.steps[size_t(trng.uniform_int(0, int(plan.steps.size()) - 1))];

    std::vector<Var<S>> losses;
    losses.reserve(batch.samples.size());
    for (size_t k = 0; k < batch.samples.size(); ++k) {
        Rng erng = derive_rng(cfg.seed, {stream::kPhase1Eps, uint64_t(iter), uint64_t(k)});
        auto lq = image_leaf(t, batch.lq[k], false);
        auto hq = image_leaf(t, batch.samples[k]->img, false);
        auto base = cfg.prerestore ? state.rpix.forward(t, rb, lq) : lq;
        auto z_cond = state.codec.encode(t, eb, base);
        auto eps = gaussian_like(t, z_cond.shape(), erng);
        Var<S> z_t = cfg.partial_diffusion ? partial_diffuse(z_cond, step, plan.t_p, eps, sched)
                                           : forward_diffuse(z_cond, step, eps, sched);
        DenoiserFn<S> eps_theta = [&](Var<S> z, int tt, Var<S> cond) {
            return state.den.forward(t, nb, z, tt, cond);
        };
        auto z0_hat = one_step_denoise(z_t, step, z_cond, eps_theta, sched);
        auto decoded = state.codec.decode(t, db, z0_hat);
        auto img_train =
            clamp01(add(high_band(decoded, cfg.wavelet_levels), low_band(base, cfg.wavelet_levels)));
        losses.push_back(hlf_loss(t, img_train, hq, state.task, hb, state.task_hq, hqb));
    }
    auto loss = mean_scalars(losses);
    const double lv = double(loss.scalar());
    t.backward(loss);
    state.opt_den.step(state.den.p, collect_grads(t, nb), lr_now);
    if (dec_trainable) state.opt_dec.step(state.codec.dec, collect_grads(t, db), lr_now);
    return lv;
}

// Phase 2: run the full n-step pipeline (no gradients) and update the task
// network with cross-entropy plus the feature-matching term.
template <typename S>
void joint_phase2(TrainState<S>& state, const TrainConfig& cfg, const IterationBatch& batch,
                  const NoiseSchedule& sched, const TimestepPlan& plan, long iter, double lr_now,
                  LossReport& rep) {
    std::vector<Image> restored(batch.samples.size());
    for (size_t k = 0; k < batch.samples.size(); ++k) {
        Rng prng = derive_rng(cfg.seed, {stream::kPipeline, uint64_t(iter), uint64_t(k)});
        restored[k] = restore_pipeline(batch.lq[k], plan, state.rpix, state.codec, state.den,
                                       sched, prng, cfg.pipeline_options());
    }
    Tape<S> t;
    auto hb = bind(t, state.task.p, true);
    auto hqb = bind(t, state.task_hq.p, false);
    std::vector<Var<S>> rv, hv;
    std::vector<int> labels;
    for (size_t k = 0; k < batch.samples.size(); ++k) {
        rv.push_back(image_leaf(t, restored[k], false));
        hv.push_back(image_leaf(t, batch.samples[k]->img, false));
        labels.push_back(batch.samples[k]->label);
    }
    auto t_loss = task_loss(t, rv, hv, labels, state.task, hb);
    rep.task = double(t_loss.scalar());
    Var<S> combined = t_loss;
    if (cfg.use_fm && cfg.alpha != 0.0) {
        auto f_loss = fm_loss(t, rv, hv, state.task, hb, state.task_hq, hqb);
        rep.fm = double(f_loss.scalar());
        combined = add(t_loss, mul_scalar(f_loss, S(cfg.alpha)));
    }
    rep.combined_tasknet = double(combined.scalar());
    t.backward(combined);
    state.opt_task.step(state.task.p, collect_grads(t, hb), lr_now);
}

// One full alternating iteration: restoration update first, then the task
// network sees the updated pipeline's outputs.
template <typename S>
LossReport joint_iteration(TrainState<S>& state, const TrainConfig& cfg, const ToyCorpus& corpus,
                           const NoiseSchedule& sched, const TimestepPlan& plan, long iter) {
    LossReport rep;
    rep.iteration = iter;
    rep.lr_edtr = cfg.cosine ? cosine_lr(cfg.lr_edtr, iter, cfg.iters) : cfg.lr_edtr;
    rep.lr_task = cfg.cosine ? cosine_lr(cfg.lr_task, iter, cfg.iters) : cfg.lr_task;

    const IterationBatch batch = make_iteration_batch(corpus, cfg, iter);
    rep.hlf = joint_phase1(state, cfg, batch, sched, plan, iter, rep.lr_edtr);
    joint_phase2(state, cfg, batch, sched, plan, iter, rep.lr_task, rep);

    if (!std::isfinite(rep.hlf) || !std::isfinite(rep.task) || !std::isfinite(rep.fm))
        fail("train_joint: non-finite loss at iteration " + std::to_string(iter) + " (hlf=" +
             std::to_string(rep.hlf) + ", task=" + std::to_string(rep.task) + ", fm=" +
             std::to_string(rep.fm) + ")");
    return rep;
}

// Runs the alternating loop from state.iteration to cfg.iters. Requires the
// HQ task network and pre-restorer to be trained already and H initialized
// from H_HQ. Resumes bit-exactly from a saved state.
template <typename S>
void train_joint(TrainState<S>& state, const TrainConfig& cfg, const ToyCorpus& corpus,
                 const LossSink& sink = {}) {
    const NoiseSchedule sched = NoiseSchedule::make(cfg.T);
    const TimestepPlan plan = cfg.plan();

    if (state.iteration == 0 && cfg.warmup_noise_pred > 0) {
        for (long it = 0; it < cfg.warmup_noise_pred; ++it) {
            const auto idx = sample_batch_indices(corpus.train.size(), cfg.batch, cfg.seed,
                                                  stream::kWarmup, it);
            std::vector<const LabeledImage*> batch;
            std::vector<Image> lq_images;
            for (size_t k = 0; k < idx.size(); ++k) {
                batch.push_back(&corpus.train[size_t(idx[k])]);
                Rng rng = derive_rng(cfg.seed, {stream::kRecipe, uint64_t(it), uint64_t(k), 7});
                lq_images.push_back(degrade(batch.back()->img, sample_recipe(cfg.mixture, rng)));
            }
            noise_prediction_step(state, cfg, batch, lq_images, sched, it, cfg.lr_edtr);
        }
    }

    for (long iter = state.iteration; iter < cfg.iters; ++iter) {
        LossReport rep = joint_iteration(state, cfg, corpus, sched, plan, iter);
        state.iteration = iter + 1;
        if (sink) sink(rep);
        if (cfg.checkpoint_every > 0 && !cfg.checkpoint_path.empty() &&
            state.iteration % cfg.checkpoint_every == 0)
            state.save(cfg.checkpoint_path);
    }
}

}  // namespace tdr
