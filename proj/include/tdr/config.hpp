#pragma once

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tdr/degradation.hpp"
#include "tdr/train.hpp"

namespace tdr {

// Flat sectioned key-value text format:
//   # comment
//   [section]
//   key = value
// Unknown keys are rejected so typos cannot silently fall back to defaults.
struct ExperimentConfig {
    // run
    std::string out_dir = "runs/default";
    uint64_t seed = 1;
    std::vector<std::string> methods = {"oracle", "none", "prerestore", "tdr-1"};

    // corpus
    int n_train = 960;
    int n_val = 240;
    int image_size = 64;

    // degrade
    Mixture mixture = Mixture::B;

    // diffusion
    int T = 1000;
    int t_p = 200;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    // networks
    int tasknet_width = 20;
    int prerestorer_width = 16;
    int denoiser_c1 = 16;
    int denoiser_c2 = 32;
    std::string codec = "identity";  // identity | tiny_ae
    bool train_decoder = true;
    int wavelet_levels = 2;

    // train
    long iters = 10000;
    int batch = 8;
    double lr_edtr = 1e-4;
    double lr_task = 5e-3;
    double alpha = 1.0;
    bool cosine = true;
    bool use_hlf = true;
    bool use_fm = true;
    bool prerestore = true;
    bool partial_diffusion = true;
    long warmup_noise_pred = 0;
    long checkpoint_every = 0;
    long pretrain_task_iters = 3500;
    long pretrain_restorer_iters = 1200;
    long codec_pretrain_iters = 600;

    // eval
    int eval_runs = 4;

    TrainConfig train_config(int n_steps) const {
        TrainConfig cfg;
        cfg.iters = iters;
        cfg.lr_edtr = lr_edtr;
        cfg.lr_task = lr_task;
        cfg.cosine = cosine;
        cfg.alpha = alpha;
        cfg.batch = batch;
        cfg.t_p = t_p;
        cfg.T = T;
        cfg.n = n_steps;
        cfg.seed = seed;
        cfg.mixture = mixture;
        cfg.use_hlf = use_hlf;
        cfg.use_fm = use_fm;
        cfg.prerestore = prerestore;
        cfg.partial_diffusion = partial_diffusion;
        cfg.warmup_noise_pred = warmup_noise_pred;
        cfg.train_decoder = train_decoder;
        cfg.wavelet_levels = wavelet_levels;
        cfg.checkpoint_every = checkpoint_every;
        return cfg;
    }

    std::string serialize() const {
        std::ostringstream os;
        os << "[run]\n";
        os << "out_dir = " << out_dir << "\n";
        os << "seed = " << seed << "\n";
        os << "methods = ";
        for (size_t i = 0; i < methods.size(); ++i) os << (i ? "," : "") << methods[i];
        os << "\n\n[corpus]\n";
        os << "train = " << n_train << "\nval = " << n_val << "\nsize = " << image_size << "\n";
        os << "\n[degrade]\nmixture = " << mixture_name(mixture) << "\n";
        os << "\n[diffusion]\nT = " << T << "\nt_p = " << t_p << "\nbeta_start = " << beta_start
           << "\nbeta_end = " << beta_end << "\n";
        os << "\n[networks]\n";
        os << "tasknet_width = " << tasknet_width << "\nprerestorer_width = " << prerestorer_width
           << "\ndenoiser_c1 = " << denoiser_c1 << "\ndenoiser_c2 = " << denoiser_c2
           << "\ncodec = " << codec << "\ntrain_decoder = " << (train_decoder ? "true" : "false")
           << "\nwavelet_levels = " << wavelet_levels << "\n";
        os << "\n[train]\n";
        os << "iters = " << iters << "\nbatch = " << batch << "\nlr_edtr = " << lr_edtr
           << "\nlr_task = " << lr_task << "\nalpha = " << alpha
           << "\ncosine = " << (cosine ? "true" : "false")
           << "\nuse_hlf = " << (use_hlf ? "true" : "false")
           << "\nuse_fm = " << (use_fm ? "true" : "false")
           << "\nprerestore = " << (prerestore ? "true" : "false")
           << "\npartial_diffusion = " << (partial_diffusion ? "true" : "false")
           << "\nwarmup_noise_pred = " << warmup_noise_pred
           << "\ncheckpoint_every = " << checkpoint_every
           << "\npretrain_task_iters = " << pretrain_task_iters
           << "\npretrain_restorer_iters = " << pretrain_restorer_iters
           << "\ncodec_pretrain_iters = " << codec_pretrain_iters << "\n";
        os << "\n[eval]\nruns = " << eval_runs << "\n";
        return os.str();
    }

    void save(const std::string& path) const {
        std::ofstream f(path);
        require(bool(f), "config: cannot write " + path);
        f << serialize();
    }

    static ExperimentConfig parse_text(const std::string& text);

    static ExperimentConfig load(const std::string& path) {
        std::ifstream f(path);
        require(bool(f), "config: cannot open " + path);
        std::stringstream ss;
        ss << f.rdbuf();
        return parse_text(ss.str());
    }

    // Applies TDR_OUT_ROOT as a prefix for relative output paths.
    std::string resolved_out_dir() const {
        if (!out_dir.empty() && out_dir[0] == '/') return out_dir;
        const char* root = std::getenv("TDR_OUT_ROOT");
        if (root && *root) return std::string(root) + "/" + out_dir;
        return out_dir;
    }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    fail("config: bad boolean for " + key + ": " + v);
}

}  // namespace config_detail

inline ExperimentConfig ExperimentConfig::parse_text(const std::string& text) {
    using config_detail::parse_bool;
    using config_detail::trim;
    ExperimentConfig c;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string s = trim(line);
        if (s.empty() || s[0] == '#') continue;
        if (s.front() == '[' && s.back() == ']') {
            section = s.substr(1, s.size() - 2);
            continue;
        }
        const size_t eq = s.find('=');
        require(eq != std::string::npos, "config: line " + std::to_string(lineno) + " has no '='");
        const std::string key = section + "." + trim(s.substr(0, eq));
        const std::string val = trim(s.substr(eq + 1));

        if (key == "run.out_dir") c.out_dir = val;
        else if (key == "run.seed") c.seed = std::stoull(val);
        else if (key == "run.methods") {
            c.methods.clear();
            std::istringstream ms(val);
            std::string m;
            while (std::getline(ms, m, ',')) c.methods.push_back(trim(m));
        } else if (key == "corpus.train") c.n_train = std::stoi(val);
        else if (key == "corpus.val") c.n_val = std::stoi(val);
        else if (key == "corpus.size") c.image_size = std::stoi(val);
        else if (key == "degrade.mixture") {
            require(val == "A" || val == "B", "config: mixture must be A or B, got " + val);
            c.mixture = val == "A" ? Mixture::A : Mixture::B;
        } else if (key == "diffusion.T") c.T = std::stoi(val);
        else if (key == "diffusion.t_p") c.t_p = std::stoi(val);
        else if (key == "diffusion.beta_start") c.beta_start = std::stod(val);
        else if (key == "diffusion.beta_end") c.beta_end = std::stod(val);
        else if (key == "networks.tasknet_width") c.tasknet_width = std::stoi(val);
        else if (key == "networks.prerestorer_width") c.prerestorer_width = std::stoi(val);
        else if (key == "networks.denoiser_c1") c.denoiser_c1 = std::stoi(val);
        else if (key == "networks.denoiser_c2") c.denoiser_c2 = std::stoi(val);
        else if (key == "networks.codec") {
            require(val == "identity" || val == "tiny_ae", "config: codec must be identity or tiny_ae");
            c.codec = val;
        } else if (key == "networks.train_decoder") c.train_decoder = parse_bool(val, key);
        else if (key == "networks.wavelet_levels") c.wavelet_levels = std::stoi(val);
        else if (key == "train.iters") c.iters = std::stol(val);
        else if (key == "train.batch") c.batch = std::stoi(val);
        else if (key == "train.lr_edtr") c.lr_edtr = std::stod(val);
        else if (key == "train.lr_task") c.lr_task = std::stod(val);
        else if (key == "train.alpha") c.alpha = std::stod(val);
        else if (key == "train.cosine") c.cosine = parse_bool(val, key);
        else if (key == "train.use_hlf") c.use_hlf = parse_bool(val, key);
        else if (key == "train.use_fm") c.use_fm = parse_bool(val, key);
        else if (key == "train.prerestore") c.prerestore = parse_bool(val, key);
        else if (key == "train.partial_diffusion") c.partial_diffusion = parse_bool(val, key);
        else if (key == "train.warmup_noise_pred") c.warmup_noise_pred = std::stol(val);
        else if (key == "train.checkpoint_every") c.checkpoint_every = std::stol(val);
        else if (key == "train.pretrain_task_iters") c.pretrain_task_iters = std::stol(val);
        else if (key == "train.pretrain_restorer_iters") c.pretrain_restorer_iters = std::stol(val);
        else if (key == "train.codec_pretrain_iters") c.codec_pretrain_iters = std::stol(val);
        else if (key == "eval.runs") c.eval_runs = std::stoi(val);
        else fail("config: unknown key " + key);
    }
    return c;
}

}  // namespace tdr
