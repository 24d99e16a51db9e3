#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tdr/autograd.hpp"
#include "tdr/checkpoint.hpp"
#include "tdr/rng.hpp"

namespace tdr {

template <typename S>
struct Param {
    std::string name;
    Shape shape;
    std::vector<S> v;
};

// Persistent network parameters. Values go onto a tape as leaves for each
// training step; gradients come back out of the tape's leaf nodes.
template <typename S>
struct ParamSet {
    std::vector<Param<S>> params;

    Param<S>& add(const std::string& name, Shape shape) {
        params.push_back(Param<S>{name, shape, std::vector<S>(numel(shape), S(0))});
        return params.back();
    }

    // Kaiming-style fan-in scaling for conv/linear weights.
    Param<S>& add_random(const std::string& name, Shape shape, long fan_in, Rng& rng) {
        Param<S>& p = add(name, std::move(shape));
        const double scale = std::sqrt(2.0 / double(fan_in));
        for (auto& x : p.v) x = S(rng.gaussian() * scale);
        return p;
    }

    long count() const {
        long n = 0;
        for (const auto& p : params) n += numel(p.shape);
        return n;
    }

    Param<S>& find(const std::string& name) {
        for (auto& p : params)
            if (p.name == name) return p;
        fail("params: missing " + name);
    }

    void copy_values_from(const ParamSet<S>& other) {
        require(params.size() == other.params.size(), "params: set size mismatch in copy");
        for (size_t i = 0; i < params.size(); ++i) {
            require(params[i].shape == other.params[i].shape, "params: shape mismatch in copy");
            params[i].v = other.params[i].v;
        }
    }

    void save_into(Checkpoint& c, const std::string& prefix) const {
        for (const auto& p : params) {
            if constexpr (std::is_same_v<S, float>)
                c.put_f32(prefix + p.name, p.shape, p.v);
            else
                c.put_f64(prefix + p.name, p.shape, p.v);
        }
    }

    void load_from(const Checkpoint& c, const std::string& prefix) {
        for (auto& p : params) {
            if constexpr (std::is_same_v<S, float>)
                p.v = c.get_f32(prefix + p.name);
            else
                p.v = c.get_f64(prefix + p.name);
            require(long(p.v.size()) == numel(p.shape),
                    "params: checkpoint size mismatch for " + p.name);
        }
    }

    // FNV-1a over raw parameter bytes; used by the isolation tests.
    uint64_t checksum() const {
        uint64_t h = 1469598103934665603ULL;
        for (const auto& p : params) {
            const unsigned char* b = reinterpret_cast<const unsigned char*>(p.v.data());
            for (size_t i = 0; i < p.v.size() * sizeof(S); ++i) {
                h ^= b[i];
                h *= 1099511628211ULL;
            }
        }
        return h;
    }
};

// Parameters of one network bound onto a tape, one leaf per param.
template <typename S>
struct BoundParams {
    std::vector<Var<S>> vars;

    Var<S> operator[](size_t i) const { return vars[i]; }

    // Gradient for param i, zeros if the tape never touched it.
    std::vector<S> grad(Tape<S>& t, size_t i) const {
        const auto& n = t.node(vars[i].id);
        if (n.grad.empty()) return std::vector<S>(n.value.size(), S(0));
        return n.grad;
    }
};

template <typename S>
BoundParams<S> bind(Tape<S>& t, const ParamSet<S>& ps, bool trainable) {
    BoundParams<S> b;
    b.vars.reserve(ps.params.size());
    for (const auto& p : ps.params) b.vars.push_back(t.leaf(p.shape, p.v, trainable));
    return b;
}

}  // namespace tdr
