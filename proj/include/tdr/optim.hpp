#pragma once

#include <cmath>
#include <vector>

#include "tdr/checkpoint.hpp"
#include "tdr/params.hpp"

namespace tdr {

inline double cosine_lr(double base, long iteration, long total) {
    if (total <= 0) return base;
    const double x = double(iteration) / double(total);
    return base * 0.5 * (1.0 + std::cos(3.14159265358979323846 * x));
}

// AdamW with decoupled weight decay (decay defaults to 0).
template <typename S>
struct AdamW {
    double lr = 1e-4;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double weight_decay = 0.0;
    long t = 0;
    std::vector<std::vector<S>> m, v;

    void step(ParamSet<S>& ps, const std::vector<std::vector<S>>& grads, double lr_now) {
        if (m.empty()) {
            for (const auto& p : ps.params) {
                m.emplace_back(p.v.size(), S(0));
                v.emplace_back(p.v.size(), S(0));
            }
        }
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, double(t));
        const double bc2 = 1.0 - std::pow(beta2, double(t));
        for (size_t i = 0; i < ps.params.size(); ++i) {
            auto& pv = ps.params[i].v;
            const auto& g = grads[i];
            for (size_t j = 0; j < pv.size(); ++j) {
                m[i][j] = S(beta1 * m[i][j] + (1.0 - beta1) * g[j]);
                v[i][j] = S(beta2 * v[i][j] + (1.0 - beta2) * double(g[j]) * double(g[j]));
                const double mh = m[i][j] / bc1;
                const double vh = v[i][j] / bc2;
                pv[j] = S(pv[j] - lr_now * (mh / (std::sqrt(vh) + eps) + weight_decay * pv[j]));
            }
        }
    }

    void save_into(Checkpoint& c, const std::string& prefix, const ParamSet<S>& ps) const {
        c.put_i64(prefix + "t", t);
        for (size_t i = 0; i < m.size(); ++i) {
            if constexpr (std::is_same_v<S, float>) {
                c.put_f32(prefix + "m." + ps.params[i].name, ps.params[i].shape, m[i]);
                c.put_f32(prefix + "v." + ps.params[i].name, ps.params[i].shape, v[i]);
            } else {
                c.put_f64(prefix + "m." + ps.params[i].name, ps.params[i].shape, m[i]);
                c.put_f64(prefix + "v." + ps.params[i].name, ps.params[i].shape, v[i]);
            }
        }
    }

    void load_from(const Checkpoint& c, const std::string& prefix, const ParamSet<S>& ps) {
        t = c.get_i64(prefix + "t");
        m.clear();
        v.clear();
        for (const auto& p : ps.params) {
            if constexpr (std::is_same_v<S, float>) {
                m.push_back(c.get_f32(prefix + "m." + p.name));
                v.push_back(c.get_f32(prefix + "v." + p.name));
            } else {
                m.push_back(c.get_f64(prefix + "m." + p.name));
                v.push_back(c.get_f64(prefix + "v." + p.name));
            }
        }
    }
};

template <typename S>
struct MomentumSgd {
    double lr = 5e-3;
    double momentum = 0.9;
    std::vector<std::vector<S>> buf;

    void step(ParamSet<S>& ps, const std::vector<std::vector<S>>& grads, double lr_now) {
        if (buf.empty())
            for (const auto& p : ps.params) buf.emplace_back(p.v.size(), S(0));
        for (size_t i = 0; i < ps.params.size(); ++i) {
            auto& pv = ps.params[i].v;
            const auto& g = grads[i];
            for (size_t j = 0; j < pv.size(); ++j) {
                buf[i][j] = S(momentum * buf[i][j] + g[j]);
                pv[j] = S(pv[j] - lr_now * buf[i][j]);
            }
        }
    }

    void save_into(Checkpoint& c, const std::string& prefix, const ParamSet<S>& ps) const {
        for (size_t i = 0; i < buf.size(); ++i) {
            if constexpr (std::is_same_v<S, float>)
                c.put_f32(prefix + "buf." + ps.params[i].name, ps.params[i].shape, buf[i]);
            else
                c.put_f64(prefix + "buf." + ps.params[i].name, ps.params[i].shape, buf[i]);
        }
    }

    void load_from(const Checkpoint& c, const std::string& prefix, const ParamSet<S>& ps) {
        buf.clear();
        for (const auto& p : ps.params) {
            if constexpr (std::is_same_v<S, float>)
                buf.push_back(c.get_f32(prefix + "buf." + p.name));
            else
                buf.push_back(c.get_f64(prefix + "buf." + p.name));
        }
    }
};

}  // namespace tdr
