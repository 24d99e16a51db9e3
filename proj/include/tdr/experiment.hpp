#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <vector>

#include "tdr/config.hpp"
#include "tdr/metrics.hpp"
#include "tdr/png_io.hpp"

namespace tdr {

struct MethodResult {
    std::string method;
    int n = 0;  // denoising steps for pipeline methods, 0 otherwise
    EvalReport report;
};

struct ExperimentResult {
    std::string run_dir;
    double oracle_accuracy = 0;
    std::vector<MethodResult> methods;

    const MethodResult* find(const std::string& name) const {
        for (const auto& m : methods)
            if (m.method == name) return &m;
        return nullptr;
    }
};

namespace experiment_detail {

inline std::string fmt(double v) {
    if (std::isinf(v)) return "inf";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

// rows of images stacked vertically, columns horizontally, 2px gutters
inline Image image_grid(const std::vector<std::vector<Image>>& rows) {
    const int n_rows = int(rows.size());
    const int n_cols = int(rows[0].size());
    const int h = rows[0][0].h, w = rows[0][0].w, gap = 2;
    Image grid(3, n_rows * h + (n_rows - 1) * gap, n_cols * w + (n_cols - 1) * gap, 1.f);
    for (int r = 0; r < n_rows; ++r)
        for (int c = 0; c < n_cols; ++c) {
            const Image& img = rows[size_t(r)][size_t(c)];
            for (int ch = 0; ch < 3; ++ch)
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x)
                        grid.at(ch, r * (h + gap) + y, c * (w + gap) + x) = img.at(ch, y, x);
        }
    return grid;
}

// minimal line chart rasterizer; series are drawn over an auto-scaled y range
inline void render_line_chart(const std::vector<std::pair<std::string, std::vector<double>>>& series,
                              const std::string& path) {
    const int W = 640, H = 400, ml = 40, mb = 24, mt = 12, mr = 12;
    Image img(3, H, W, 1.f);
    double lo = 1e300, hi = -1e300;
    size_t len = 0;
    for (const auto& s : series)
        for (double v : s.second) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    for (const auto& s : series) len = std::max(len, s.second.size());
    if (len < 2 || hi <= lo) {
        hi = lo + 1;
    }

    auto put = [&](int y, int x, float r, float g, float b) {
        if (y < 0 || y >= H || x < 0 || x >= W) return;
        img.at(0, y, x) = r;
        img.at(1, y, x) = g;
        img.at(2, y, x) = b;
    };
    for (int x = ml; x < W - mr; ++x) put(H - mb, x, 0, 0, 0);
    for (int y = mt; y < H - mb; ++y) put(y, ml, 0, 0, 0);

    const float palette[4][3] = {{0.8f, 0.1f, 0.1f}, {0.1f, 0.1f, 0.8f}, {0.1f, 0.6f, 0.1f},
                                 {0.6f, 0.1f, 0.6f}};
    for (size_t si = 0; si < series.size(); ++si) {
        const auto& v = series[si].second;
        if (v.size() < 2) continue;
        const auto* col = palette[si % 4];
        for (size_t i = 1; i < v.size(); ++i) {
            const double x0 = ml + double(i - 1) / double(v.size() - 1) * (W - ml - mr - 1);
            const double x1 = ml + double(i) / double(v.size() - 1) * (W - ml - mr - 1);
            const double y0 = (H - mb) - (v[i - 1] - lo) / (hi - lo) * (H - mb - mt - 1);
            const double y1 = (H - mb) - (v[i] - lo) / (hi - lo) * (H - mb - mt - 1);
            const int steps = std::max(1, int(std::abs(x1 - x0) + std::abs(y1 - y0)));
            for (int s = 0; s <= steps; ++s) {
                const double f = double(s) / steps;
                put(int(y0 + (y1 - y0) * f), int(x0 + (x1 - x0) * f), col[0], col[1], col[2]);
            }
        }
    }
    save_png(path, img);
}

inline void render_loss_chart(const std::string& csv_path, const std::string& png_path) {
    std::ifstream f(csv_path);
    if (!f) return;
    std::string line;
    std::getline(f, line);  // header
    std::vector<double> hlf, task;
    while (std::getline(f, line)) {
        double it, h, t, fm;
        if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf", &it, &h, &t, &fm) == 4) {
            hlf.push_back(h);
            task.push_back(t);
        }
    }
    if (hlf.size() >= 2)
        render_line_chart({{"hlf", hlf}, {"task", task}}, png_path);
}

}  // namespace experiment_detail

// Builds the networks sized per config; H_HQ/prerestorer/codec are loaded
// from the run directory when their checkpoints exist, else trained and saved.
template <typename S>
void prepare_stages(TrainState<S>& state, const ExperimentConfig& cfg, const ToyCorpus& corpus,
                    const std::string& dir, std::ostream& log) {
    namespace fs = std::filesystem;
    state.init(4, cfg.tasknet_width, cfg.prerestorer_width, cfg.denoiser_c1, cfg.denoiser_c2,
               cfg.codec == "tiny_ae" ? LatentCodec<S>::Mode::tiny_ae : LatentCodec<S>::Mode::identity,
               cfg.seed);
    log << "parameters: prerestorer=" << state.rpix.p.count() << " denoiser=" << state.den.p.count()
        << " tasknet=" << state.task.p.count()
        << " codec=" << state.codec.enc.count() + state.codec.dec.count() << "\n";

    const std::string task_ckpt = dir + "/tasknet_hq.ckpt";
    if (fs::exists(task_ckpt)) {
        Checkpoint c = Checkpoint::load(task_ckpt);
        state.task_hq.p.load_from(c, "task_hq.");
        log << "stage tasknet_hq: loaded " << task_ckpt << "\n";
    } else {
        const double acc = pretrain_hq_tasknet(state.task_hq, corpus, cfg.pretrain_task_iters,
                                               cfg.batch, cfg.lr_task, cfg.seed);
        Checkpoint c;
        state.task_hq.p.save_into(c, "task_hq.");
        c.save(task_ckpt);
        log << "stage tasknet_hq: trained, val accuracy " << acc << "\n";
    }
    state.task.p.copy_values_from(state.task_hq.p);

    const std::string rpix_ckpt = dir + "/prerestorer.ckpt";
    if (fs::exists(rpix_ckpt)) {
        Checkpoint c = Checkpoint::load(rpix_ckpt);
        state.rpix.p.load_from(c, "rpix.");
        log << "stage prerestorer: loaded " << rpix_ckpt << "\n";
    } else {
        const auto stats = pretrain_prerestorer(state.rpix, corpus, cfg.mixture,
                                                cfg.pretrain_restorer_iters, cfg.batch, 1e-4, cfg.seed);
        Checkpoint c;
        state.rpix.p.save_into(c, "rpix.");
        c.save(rpix_ckpt);
        log << "stage prerestorer: trained, held-out PSNR " << stats.psnr_lq << " -> "
            << stats.psnr_restored << " dB\n";
    }

    if (cfg.codec == "tiny_ae") {
        const std::string codec_ckpt = dir + "/codec.ckpt";
        if (fs::exists(codec_ckpt)) {
            Checkpoint c = Checkpoint::load(codec_ckpt);
            state.codec.enc.load_from(c, "codec.enc.");
            state.codec.dec.load_from(c, "codec.dec.");
            log << "stage codec: loaded " << codec_ckpt << "\n";
        } else {
            const double psnr_db =
                pretrain_codec(state.codec, corpus, cfg.codec_pretrain_iters, cfg.batch, 2e-3, cfg.seed);
            Checkpoint c;
            state.codec.enc.save_into(c, "codec.enc.");
            state.codec.dec.save_into(c, "codec.dec.");
            c.save(codec_ckpt);
            log << "stage codec: trained, reconstruction PSNR " << psnr_db << " dB\n";
        }
    }
}

// Plain cross-entropy training of a task-net variant on per-iteration
// degraded (and optionally pre-restored) images.
template <typename S>
void train_variant_tasknet(TaskNet<S>& net, const TrainState<S>& state, const ExperimentConfig& cfg,
                           const ToyCorpus& corpus, bool prerestore_inputs) {
    MomentumSgd<S> opt;
    TrainConfig tc = cfg.train_config(1);
    for (long it = 0; it < cfg.iters; ++it) {
        const IterationBatch batch = make_iteration_batch(corpus, tc, it);
        std::vector<LabeledImage> imgs(batch.samples.size());
        std::vector<const LabeledImage*> ptrs;
        for (size_t k = 0; k < batch.samples.size(); ++k) {
            imgs[k].label = batch.samples[k]->label;
            imgs[k].img = prerestore_inputs ? prerestore_image(state.rpix, batch.lq[k]) : batch.lq[k];
            ptrs.push_back(&imgs[k]);
        }
        const double lv = tasknet_ce_step(net, opt, ptrs, cosine_lr(cfg.lr_task, it, cfg.iters));
        require(std::isfinite(lv), "train_variant: non-finite loss at iteration " + std::to_string(it));
    }
}

inline int parse_step_count(const std::string& method) {
    // "tdr-3" -> 3
    const auto dash = method.find('-');
    require(dash != std::string::npos && dash + 1 < method.size(),
            "method: expected tdr-<steps>, got " + method);
    return std::stoi(method.substr(dash + 1));
}

// Full protocol: stage pre-training, then per-method training + evaluation.
// Emits checkpoints, per-method loss CSVs, sample grids and summary.csv.
template <typename S = float>
ExperimentResult run_experiment(const ExperimentConfig& cfg, std::ostream& log = std::cout) {
    namespace fs = std::filesystem;
    ExperimentResult result;
    const std::string dir = cfg.resolved_out_dir();
    result.run_dir = dir;
    fs::create_directories(dir);
    cfg.save(dir + "/config.ini");

    log << "run dir: " << dir << "\n";
    ToyCorpus corpus = synthesize_corpus(cfg.seed, cfg.n_train, cfg.n_val, cfg.image_size);
    const auto eval_set = degrade_set(corpus.val, cfg.mixture, cfg.seed ^ 0xe7a15e7ULL);

    TrainState<S> state;
    prepare_stages(state, cfg, corpus, dir, log);
    result.oracle_accuracy = tasknet_accuracy(state.task_hq, corpus.val);
    log << "oracle (HQ-trained on HQ val) accuracy: " << result.oracle_accuracy << "\n";

    const NoiseSchedule sched = NoiseSchedule::make(cfg.T, cfg.beta_start, cfg.beta_end);
    const int n_grid = std::min<int>(4, int(eval_set.size()));

    for (const std::string& method : cfg.methods) {
        MethodResult mr;
        mr.method = method;
        PipelineFn pipeline;

        if (method == "oracle") {
            mr.report.accuracy = result.oracle_accuracy;
            mr.report.run_accuracies.assign(size_t(cfg.eval_runs), result.oracle_accuracy);
            mr.report.psnr_db = std::numeric_limits<double>::infinity();
            mr.report.f_d = 0.0;
            mr.report.n_samples = int(corpus.val.size());
            result.methods.push_back(mr);
            log << "method oracle: accuracy " << mr.report.accuracy << "\n";
            continue;
        } else if (method == "none" || method == "prerestore") {
            TaskNet<S> h = state.task_hq;
            train_variant_tasknet(h, state, cfg, corpus, method == "prerestore");
            Checkpoint c;
            h.p.save_into(c, "task.");
            c.save(dir + "/" + method + ".ckpt");
            if (method == "none")
                pipeline = [](const Image& lq, Rng&) { return lq; };
            else
                pipeline = [&state](const Image& lq, Rng&) { return prerestore_image(state.rpix, lq); };
            mr.report = evaluate(pipeline, eval_set, h, state.task_hq, cfg.seed ^ 0xeba1ULL,
                                 cfg.eval_runs);
        } else {
            mr.n = parse_step_count(method);
            TrainConfig tc = cfg.train_config(mr.n);
            TrainState<S> js = state;  // fresh H copy + pretrained stages
            js.task.p.copy_values_from(js.task_hq.p);

            std::ofstream loss_csv(dir + "/loss_" + method + ".csv");
            loss_csv << "iteration,hlf,task,fm,lr_edtr,lr_task\n";
            tc.checkpoint_path = dir + "/" + method + ".ckpt";
            train_joint(js, tc, corpus, [&](const LossReport& r) {
                loss_csv << r.iteration << ',' << experiment_detail::fmt(r.hlf) << ','
                         << experiment_detail::fmt(r.task) << ',' << experiment_detail::fmt(r.fm)
                         << ',' << experiment_detail::fmt(r.lr_edtr) << ','
                         << experiment_detail::fmt(r.lr_task) << "\n";
            });
            loss_csv.close();
            js.save(dir + "/" + method + ".ckpt");
            experiment_detail::render_loss_chart(dir + "/loss_" + method + ".csv",
                                                 dir + "/loss_" + method + ".png");

            const TimestepPlan plan = tc.plan();
            const PipelineOptions opt = tc.pipeline_options();
            TaskNet<S> h = js.task;
            auto pipeline_nets = std::make_shared<TrainState<S>>(js);
            pipeline = [pipeline_nets, plan, &sched, opt](const Image& lq, Rng& rng) {
                return restore_pipeline(lq, plan, pipeline_nets->rpix, pipeline_nets->codec,
                                        pipeline_nets->den, sched, rng, opt);
            };
            mr.report = evaluate(pipeline, eval_set, h, state.task_hq, cfg.seed ^ 0xeba1ULL,
                                 cfg.eval_runs);
        }

        // sample grid: LQ / restored / HQ over the first few eval pairs
        std::vector<Image> lq_row, restored_row, hq_row;
        for (int i = 0; i < n_grid; ++i) {
            Rng rng = derive_rng(cfg.seed, {0x9a1dULL, uint64_t(i)});
            lq_row.push_back(eval_set[size_t(i)].lq);
            restored_row.push_back(pipeline(eval_set[size_t(i)].lq, rng));
            hq_row.push_back(eval_set[size_t(i)].hq);
        }
        save_png(dir + "/samples_" + method + ".png",
                 experiment_detail::image_grid({lq_row, restored_row, hq_row}));

        log << "method " << method << ": accuracy " << mr.report.accuracy << ", psnr "
            << mr.report.psnr_db << ", f_d " << mr.report.f_d << "\n";
        result.methods.push_back(mr);
    }

    std::ofstream summary(dir + "/summary.csv");
    summary << "method,n,accuracy";
    for (int r = 0; r < cfg.eval_runs; ++r) summary << ",acc_run" << r + 1;
    summary << ",psnr_db,f_d,n_samples\n";
    for (const auto& m : result.methods) {
        summary << m.method << ',' << m.n << ',' << experiment_detail::fmt(m.report.accuracy);
        for (double a : m.report.run_accuracies) summary << ',' << experiment_detail::fmt(a);
        summary << ',' << experiment_detail::fmt(m.report.psnr_db) << ','
                << experiment_detail::fmt(m.report.f_d) << ',' << m.report.n_samples << "\n";
    }
    return result;
}

// Re-evaluates an existing run directory from its stored checkpoints (no
// retraining) and rewrites summary.csv.
template <typename S = float>
ExperimentResult evaluate_run(const ExperimentConfig& cfg, std::ostream& log = std::cout) {
    namespace fs = std::filesystem;
    const std::string dir = cfg.resolved_out_dir();
    ExperimentResult result;
    result.run_dir = dir;

    ToyCorpus corpus = synthesize_corpus(cfg.seed, cfg.n_train, cfg.n_val, cfg.image_size);
    const auto eval_set = degrade_set(corpus.val, cfg.mixture, cfg.seed ^ 0xe7a15e7ULL);

    TrainState<S> state;
    state.init(4, cfg.tasknet_width, cfg.prerestorer_width, cfg.denoiser_c1, cfg.denoiser_c2,
               cfg.codec == "tiny_ae" ? LatentCodec<S>::Mode::tiny_ae : LatentCodec<S>::Mode::identity,
               cfg.seed);
    {
        Checkpoint c = Checkpoint::load(dir + "/tasknet_hq.ckpt");
        state.task_hq.p.load_from(c, "task_hq.");
    }
    {
        Checkpoint c = Checkpoint::load(dir + "/prerestorer.ckpt");
        state.rpix.p.load_from(c, "rpix.");
    }
    if (cfg.codec == "tiny_ae") {
        Checkpoint c = Checkpoint::load(dir + "/codec.ckpt");
        state.codec.enc.load_from(c, "codec.enc.");
        state.codec.dec.load_from(c, "codec.dec.");
    }
    result.oracle_accuracy = tasknet_accuracy(state.task_hq, corpus.val);
    const NoiseSchedule sched = NoiseSchedule::make(cfg.T, cfg.beta_start, cfg.beta_end);

    for (const std::string& method : cfg.methods) {
        MethodResult mr;
        mr.method = method;
        if (method == "oracle") {
            mr.report.accuracy = result.oracle_accuracy;
            mr.report.run_accuracies.assign(size_t(cfg.eval_runs), result.oracle_accuracy);
            mr.report.psnr_db = std::numeric_limits<double>::infinity();
            mr.report.f_d = 0.0;
            mr.report.n_samples = int(corpus.val.size());
        } else if (method == "none" || method == "prerestore") {
            TaskNet<S> h = state.task_hq;
            h.p.load_from(Checkpoint::load(dir + "/" + method + ".ckpt"), "task.");
            PipelineFn pipeline =
                method == "none"
                    ? PipelineFn([](const Image& lq, Rng&) { return lq; })
                    : PipelineFn([&state](const Image& lq, Rng&) {
                          return prerestore_image(state.rpix, lq);
                      });
            mr.report = evaluate(pipeline, eval_set, h, state.task_hq, cfg.seed ^ 0xeba1ULL,
                                 cfg.eval_runs);
        } else {
            mr.n = parse_step_count(method);
            TrainConfig tc = cfg.train_config(mr.n);
            TrainState<S> js = state;
            js.load(dir + "/" + method + ".ckpt");
            const TimestepPlan plan = tc.plan();
            const PipelineOptions opt = tc.pipeline_options();
            PipelineFn pipeline = [&js, plan, &sched, opt](const Image& lq, Rng& rng) {
                return restore_pipeline(lq, plan, js.rpix, js.codec, js.den, sched, rng, opt);
            };
            mr.report = evaluate(pipeline, eval_set, js.task, state.task_hq, cfg.seed ^ 0xeba1ULL,
                                 cfg.eval_runs);
        }
        log << "method " << method << ": accuracy " << mr.report.accuracy << ", psnr "
            << mr.report.psnr_db << ", f_d " << mr.report.f_d << "\n";
        result.methods.push_back(std::move(mr));
    }

    std::ofstream summary(dir + "/summary.csv");
    summary << "method,n,accuracy";
    for (int r = 0; r < cfg.eval_runs; ++r) summary << ",acc_run" << r + 1;
    summary << ",psnr_db,f_d,n_samples\n";
    for (const auto& m : result.methods) {
        summary << m.method << ',' << m.n << ',' << experiment_detail::fmt(m.report.accuracy);
        for (double a : m.report.run_accuracies) summary << ',' << experiment_detail::fmt(a);
        summary << ',' << experiment_detail::fmt(m.report.psnr_db) << ','
                << experiment_detail::fmt(m.report.f_d) << ',' << m.report.n_samples << "\n";
    }
    return result;
}

struct AblationCell {
    std::string name;
    bool hlf, fm, prerestore, partial;
    int n;
};

inline std::vector<AblationCell> ablation_grid() {
    return {
        {"conventional_n50", false, true, false, false, 50},
        {"hlf_only_n50", true, true, false, false, 50},
        {"hlf_only_n1", true, true, false, false, 1},
        {"partial_no_prerestore_n1", true, true, false, true, 1},
        {"no_hlf_n1", false, true, true, true, 1},
        {"no_fm_n1", true, false, true, true, 1},
        {"full_n1", true, true, true, true, 1},
        {"full_n4", true, true, true, true, 4},
        {"full_n30", true, true, true, true, 30},
        {"full_n50", true, true, true, true, 50},
    };
}

// Component-toggle grid plus the denoising-step sweep. Each cell runs the
// joint training with the toggles applied and reports accuracy / f_d / PSNR.
template <typename S = float>
void run_ablation(const ExperimentConfig& base, std::ostream& log = std::cout) {
    namespace fs = std::filesystem;
    const std::string dir = base.resolved_out_dir();
    fs::create_directories(dir);
    base.save(dir + "/config.ini");

    ToyCorpus corpus = synthesize_corpus(base.seed, base.n_train, base.n_val, base.image_size);
    const auto eval_set = degrade_set(corpus.val, base.mixture, base.seed ^ 0xe7a15e7ULL);
    TrainState<S> stages;
    prepare_stages(stages, base, corpus, dir, log);
    const NoiseSchedule sched = NoiseSchedule::make(base.T, base.beta_start, base.beta_end);

    std::ofstream csv(dir + "/ablation.csv");
    csv << "cell,hlf,fm,prerestore,partial_diffusion,n,accuracy,psnr_db,f_d\n";

    double short_best = 0, long_best = 0;
    for (const auto& cell : ablation_grid()) {
        ExperimentConfig cfg = base;
        cfg.use_hlf = cell.hlf;
        cfg.use_fm = cell.fm;
        cfg.prerestore = cell.prerestore;
        cfg.partial_diffusion = cell.partial;

        TrainConfig tc = cfg.train_config(cell.n);
        TrainState<S> js = stages;
        js.task.p.copy_values_from(js.task_hq.p);
        train_joint(js, tc, corpus);

        const TimestepPlan plan = tc.plan();
        const PipelineOptions opt = tc.pipeline_options();
        PipelineFn pipeline = [&js, plan, &sched, opt](const Image& lq, Rng& rng) {
            return restore_pipeline(lq, plan, js.rpix, js.codec, js.den, sched, rng, opt);
        };
        const auto rep = evaluate(pipeline, eval_set, js.task, stages.task_hq,
                                  base.seed ^ 0xab1a7eULL, base.eval_runs);
        csv << cell.name << ',' << cell.hlf << ',' << cell.fm << ',' << cell.prerestore << ','
            << cell.partial << ',' << cell.n << ',' << experiment_detail::fmt(rep.accuracy) << ','
            << experiment_detail::fmt(rep.psnr_db) << ',' << experiment_detail::fmt(rep.f_d) << "\n";
        log << "cell " << cell.name << ": accuracy " << rep.accuracy << ", f_d " << rep.f_d << "\n";

        if (cell.hlf && cell.fm && cell.prerestore && cell.partial) {
            if (cell.n <= 4) short_best = std::max(short_best, rep.accuracy);
            else long_best = std::max(long_best, rep.accuracy);
        }
    }
    // reported, not gated: toy-scale dynamics may differ
    log << "short-step (n<=4) best accuracy " << short_best << " vs long-step (n>=30) best "
        << long_best << (short_best >= long_best ? " (short >= long)" : " (long > short)") << "\n";
    std::ofstream note(dir + "/ablation_direction.txt");
    note << "short_step_best_acc " << experiment_detail::fmt(short_best) << "\n"
         << "long_step_best_acc " << experiment_detail::fmt(long_best) << "\n";
}

// Re-renders plots and prints the summary table for an existing run directory.
inline void report_run(const std::string& dir, std::ostream& out = std::cout) {
    namespace fs = std::filesystem;
    require(fs::exists(dir + "/summary.csv"), "report: no summary.csv in " + dir);
    std::ifstream f(dir + "/summary.csv");
    std::string line;
    out << "run: " << dir << "\n";
    while (std::getline(f, line)) {
        std::string cell;
        std::istringstream ls(line);
        int col = 0;
        while (std::getline(ls, cell, ',')) {
            out << std::setw(col == 0 ? 12 : 10) << cell << " ";
            ++col;
        }
        out << "\n";
    }
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("loss_", 0) == 0 && name.size() > 4 &&
            name.substr(name.size() - 4) == ".csv") {
            const std::string png = dir + "/" + name.substr(0, name.size() - 4) + ".png";
            experiment_detail::render_loss_chart(entry.path().string(), png);
            out << "rendered " << png << "\n";
        }
    }
}

}  // namespace tdr
