// Task-driven restoration workbench: corpus synthesis, degradation,
// pre-training, joint training, evaluation, ablation, reporting.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "tdr/experiment.hpp"

namespace fs = std::filesystem;
using namespace tdr;

namespace {

ExperimentConfig load_config(const std::string& path, uint64_t seed_override, long iters_override) {
    ExperimentConfig cfg = path.empty() ? ExperimentConfig{} : ExperimentConfig::load(path);
    if (seed_override != 0) cfg.seed = seed_override;
    if (iters_override > 0) cfg.iters = iters_override;
    return cfg;
}

int cmd_synth(uint64_t seed, int n_train, int n_val, int size, const std::string& out) {
    fs::create_directories(out + "/train");
    fs::create_directories(out + "/val");
    ToyCorpus corpus = synthesize_corpus(seed, n_train, n_val, size);
    std::ofstream labels(out + "/labels.csv");
    labels << "split,file,label,class\n";
    char name[64];
    for (size_t i = 0; i < corpus.train.size(); ++i) {
        std::snprintf(name, sizeof(name), "train/img_%05zu.png", i);
        save_png(out + "/" + name, corpus.train[i].img);
        labels << "train," << name << ',' << corpus.train[i].label << ','
               << kClassNames[corpus.train[i].label] << "\n";
    }
    for (size_t i = 0; i < corpus.val.size(); ++i) {
        std::snprintf(name, sizeof(name), "val/img_%05zu.png", i);
        save_png(out + "/" + name, corpus.val[i].img);
        labels << "val," << name << ',' << corpus.val[i].label << ','
               << kClassNames[corpus.val[i].label] << "\n";
    }
    std::cout << "wrote " << corpus.train.size() << " train + " << corpus.val.size()
              << " val images to " << out << "\n";
    return 0;
}

// Manifest schema: one line per image,
//   <file> <blur_sigma> <scale> <noise_sigma> <jpeg_quality> <seed>
int cmd_degrade(const std::string& in, const std::string& out, const std::string& mixture,
                uint64_t seed) {
    require(mixture == "A" || mixture == "B", "degrade: mixture must be A or B");
    fs::create_directories(out);
    std::ofstream manifest(out + "/manifest.txt");
    manifest << "# file blur_sigma scale noise_sigma jpeg_quality seed\n";

    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(in))
        if (entry.path().extension() == ".png") files.push_back(entry.path().filename().string());
    std::sort(files.begin(), files.end());
    require(!files.empty(), "degrade: no PNG files in " + in);

    for (size_t i = 0; i < files.size(); ++i) {
        Rng rng = derive_rng(seed, {0xde94ade, uint64_t(i)});
        const auto recipe = sample_recipe(mixture == "A" ? Mixture::A : Mixture::B, rng);
        const Image hq = load_png(in + "/" + files[i]);
        save_png(out + "/" + files[i], degrade(hq, recipe));
        manifest << files[i] << ' ' << recipe.to_line() << "\n";
    }
    std::cout << "degraded " << files.size() << " images into " << out << "\n";
    return 0;
}

int cmd_pretrain_task(const ExperimentConfig& cfg) {
    const std::string dir = cfg.resolved_out_dir();
    fs::create_directories(dir);
    cfg.save(dir + "/config.ini");
    ToyCorpus corpus = synthesize_corpus(cfg.seed, cfg.n_train, cfg.n_val, cfg.image_size);
    TaskNet<float> net;
    net.width = cfg.tasknet_width;
    Rng rng = derive_rng(cfg.seed, {0x103});
    net.init(rng);
    const double acc = pretrain_hq_tasknet(net, corpus, cfg.pretrain_task_iters, cfg.batch,
                                           cfg.lr_task, cfg.seed);
    Checkpoint c;
    net.p.save_into(c, "task_hq.");
    c.save(dir + "/tasknet_hq.ckpt");
    std::cout << "tasknet_hq val accuracy " << acc << ", saved to " << dir << "/tasknet_hq.ckpt\n";
    return 0;
}

int cmd_pretrain_restorer(const ExperimentConfig& cfg) {
    const std::string dir = cfg.resolved_out_dir();
    fs::create_directories(dir);
    cfg.save(dir + "/config.ini");
    ToyCorpus corpus = synthesize_corpus(cfg.seed, cfg.n_train, cfg.n_val, cfg.image_size);
    PreRestorer<float> net;
    net.width = cfg.prerestorer_width;
    Rng rng = derive_rng(cfg.seed, {0x100});
    net.init(rng);
    const auto stats = pretrain_prerestorer(net, corpus, cfg.mixture, cfg.pretrain_restorer_iters,
                                            cfg.batch, 1e-4, cfg.seed);
    Checkpoint c;
    net.p.save_into(c, "rpix.");
    c.save(dir + "/prerestorer.ckpt");
    std::cout << "prerestorer held-out PSNR " << stats.psnr_lq << " -> " << stats.psnr_restored
              << " dB, saved to " << dir << "/prerestorer.ckpt\n";
    return 0;
}

int cmd_eval(const std::string& run_dir) {
    ExperimentConfig cfg = ExperimentConfig::load(run_dir + "/config.ini");
    require(fs::exists(run_dir + "/tasknet_hq.ckpt"),
            "eval: run directory has no trained stages; run `tdr train` first");
    evaluate_run<float>(cfg);
    report_run(cfg.resolved_out_dir());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"task-driven diffusion restoration workbench"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate the procedural labeled corpus as PNGs");
    uint64_t seed = 1;
    int n_train = 480, n_val = 240, size = 64;
    std::string out = "corpus";
    synth->add_option("--seed", seed, "corpus seed");
    synth->add_option("--train", n_train, "number of training images");
    synth->add_option("--val", n_val, "number of validation images");
    synth->add_option("--size", size, "image side length");
    synth->add_option("--out", out, "output directory");

    // degrade
    auto* deg = app.add_subcommand("degrade", "degrade a directory of PNGs and write a manifest");
    std::string deg_in, deg_out = "degraded", deg_mix = "B";
    uint64_t deg_seed = 1;
    deg->add_option("--in", deg_in, "input directory of PNGs")->required();
    deg->add_option("--out", deg_out, "output directory");
    deg->add_option("--mixture", deg_mix, "degradation mixture: A or B");
    deg->add_option("--seed", deg_seed, "recipe sampling seed");

    // config-driven stages
    std::string config_path;
    uint64_t seed_override = 0;
    long iters_override = 0;
    auto add_cfg = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "experiment config file (key = value sections)");
        sub->add_option("--seed", seed_override, "override config seed");
        sub->add_option("--iters", iters_override, "override joint-training iterations");
    };
    auto* ptask = app.add_subcommand("pretrain-task", "train the HQ task network");
    add_cfg(ptask);
    auto* prest = app.add_subcommand("pretrain-restorer", "train the pixel-loss pre-restorer");
    add_cfg(prest);
    auto* train = app.add_subcommand(
        "train", "full protocol: stage pre-training, per-method training, evaluation, summary");
    add_cfg(train);
    auto* ablate = app.add_subcommand("ablate", "component-toggle grid plus the step sweep");
    add_cfg(ablate);
    auto* evalc = app.add_subcommand("eval", "re-evaluate an existing run directory");
    std::string eval_dir;
    evalc->add_option("--run", eval_dir, "run directory")->required();
    auto* report = app.add_subcommand("report", "print the summary table and re-render plots");
    std::string report_dir;
    report->add_option("--run", report_dir, "run directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(seed, n_train, n_val, size, out);
        if (deg->parsed()) return cmd_degrade(deg_in, deg_out, deg_mix, deg_seed);
        const ExperimentConfig cfg = load_config(config_path, seed_override, iters_override);
        if (ptask->parsed()) return cmd_pretrain_task(cfg);
        if (prest->parsed()) return cmd_pretrain_restorer(cfg);
        if (train->parsed()) {
            run_experiment<float>(cfg);
            report_run(cfg.resolved_out_dir());
            return 0;
        }
        if (ablate->parsed()) {
            run_ablation<float>(cfg);
            return 0;
        }
        if (evalc->parsed()) return cmd_eval(eval_dir);
        if (report->parsed()) {
            report_run(report_dir);
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
