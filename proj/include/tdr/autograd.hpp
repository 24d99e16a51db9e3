#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "tdr/prelude.hpp"

namespace tdr {

// Recorded-operation tape for reverse-mode differentiation. Values are
// immutable once written; node creation order is a topological order of the
// graph, so backward() replays the recorded rules in reverse index order.
// A tape may be consumed by backward() at most once.
template <typename S>
class Tape;

template <typename S>
struct Var {
    Tape<S>* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Shape& shape() const;
    const std::vector<S>& value() const;
    const std::vector<S>& grad() const;
    bool requires_grad() const;
    long size() const { return numel(shape()); }
    S scalar() const;
};

template <typename S>
class Tape {
public:
    struct Node {
        Shape shape;
        std::vector<S> value;
        std::vector<S> grad;  // empty until touched by backward
        bool requires_grad = false;
        std::function<void(Tape<S>&)> backprop;  // empty for leaves/constants
    };

    Var<S> leaf(Shape shape, std::vector<S> value, bool requires_grad) {
        require(numel(shape) == long(value.size()),
                "leaf: shape " + shape_str(shape) + " does not match data length");
        nodes_.push_back(Node{std::move(shape), std::move(value), {}, requires_grad, {}});
        return Var<S>{this, int(nodes_.size()) - 1};
    }

    Var<S> constant(Shape shape, std::vector<S> value) {
        return leaf(std::move(shape), std::move(value), false);
    }

    Var<S> full(const Shape& shape, S v) {
        return constant(shape, std::vector<S>(numel(shape), v));
    }

    Var<S> record(Shape shape, std::vector<S> value, bool requires_grad,
                  std::function<void(Tape<S>&)> backprop) {
        nodes_.push_back(Node{std::move(shape), std::move(value), {},
                              requires_grad, requires_grad ? std::move(backprop) : nullptr});
        return Var<S>{this, int(nodes_.size()) - 1};
    }

    Node& node(int id) { return nodes_[size_t(id)]; }
    const Node& node(int id) const { return nodes_[size_t(id)]; }
    size_t size() const { return nodes_.size(); }

    std::vector<S>& grad_buffer(int id) {
        Node& n = nodes_[size_t(id)];
        if (n.grad.empty()) n.grad.assign(n.value.size(), S(0));
        return n.grad;
    }

    // Populates gradient buffers on every requires_grad node reachable from
    // `loss`. Strict reverse order of recording == reverse topological order.
    void backward(Var<S> loss) {
        require(loss.valid() && loss.tape == this, "backward: loss not on this tape");
        require(numel(node(loss.id).shape) == 1, "backward: loss must be scalar");
        require(!consumed_, "backward: tape already consumed");
        consumed_ = true;
        grad_buffer(loss.id)[0] = S(1);
        for (int i = loss.id; i >= 0; --i) {
            Node& n = nodes_[size_t(i)];
            if (n.grad.empty() || !n.backprop) continue;
            n.backprop(*this);
        }
    }

    bool consumed() const { return consumed_; }

private:
    std::vector<Node> nodes_;
    bool consumed_ = false;
};

template <typename S>
const Shape& Var<S>::shape() const { return tape->node(id).shape; }
template <typename S>
const std::vector<S>& Var<S>::value() const { return tape->node(id).value; }
template <typename S>
const std::vector<S>& Var<S>::grad() const { return tape->node(id).grad; }
template <typename S>
bool Var<S>::requires_grad() const { return tape->node(id).requires_grad; }
template <typename S>
S Var<S>::scalar() const {
    require(numel(shape()) == 1, "scalar(): tensor has shape " + shape_str(shape()));
    return value()[0];
}

// ---------------------------------------------------------------------------
// Kernels. Each checks shapes up front (diagnostics name the op kind), then
// computes the value and records a backward rule when any input needs one.
// ---------------------------------------------------------------------------

template <typename S>
Var<S> add(Var<S> x, Var<S> y) {
    Tape<S>& t = *x.tape;
    require_same_shape("add", x.shape(), y.shape());
    const auto& xv = x.value();
    const auto& yv = y.value();
    std::vector<S> out(xv.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + yv[i];
    const bool rg = x.requires_grad() || y.requires_grad();
    const int xi = x.id, yi = y.id;
    auto o = t.record(x.shape(), std::move(out), rg, {});
    if (rg) {
        const int oi = o.id;
        t.node(oi).backprop = [xi, yi, oi](Tape<S>& tp) {
            const auto& g = tp.node(oi).grad;
            if (tp.node(xi).requires_grad) {
                auto& gx = tp.grad_buffer(xi);
                for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            }
            if (tp.node(yi).requires_grad) {
                auto& gy = tp.grad_buffer(yi);
                for (size_t i = 0; i < g.size(); ++i) gy[i] += g[i];
            }
        };
    }
    return o;
}

template <typename S>
Var<S> mul_scalar(Var<S> x, S a) {
    Tape<S>& t = *x.tape;
    const auto& xv = x.value();
    std::vector<S> out(xv.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * a;
    const bool rg = x.requires_grad();
    const int xi = x.id;
    auto o = t.record(x.shape(), std::move(out), rg, {});
    if (rg) {
        const int oi = o.id;
        t.node(oi).backprop = [xi, oi, a](Tape<S>& tp) {
            const auto& g = tp.node(oi).grad;
            auto& gx = tp.grad_buffer(xi);
            for (size_t i = 0; i < g.size(); ++i) gx[i] += a * g[i];
        };
    }
    return o;
}

template <typename S>
Var<S> sub(Var<S> x, Var<S> y) {
    return add(x, mul_scalar(y, S(-1)));
}

// Fused a*x + b*y evaluated in double with a single rounding per element;
// the diffusion arithmetic depends on this not losing bits to intermediates.
template <typename S>
Var<S> axpby(double a, Var<S> x, double b, Var<S> y) {
    Tape<S>& t = *x.tape;
    require_same_shape("axpby", x.shape(), y.shape());
    const auto& xv = x.value();
    const auto& yv = y.value();
    std::vector<S> out(xv.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = S(a * double(xv[i]) + b * double(yv[i]));
    const bool rg = x.requires_grad() || y.requires_grad();
    const int xi = x.id, yi = y.id;
    auto o = t.record(x.shape(), std::move(out), rg, {});
    if (rg) {
        const int oi = o.id;
        t.node(oi).backprop = [xi, yi, oi, a, b](Tape<S>& tp) {
            const auto& g = tp.node(oi).grad;
            if (tp.node(xi).requires_grad) {
                auto& gx = tp.grad_buffer(xi);
                for (size_t i = 0; i < g.size(); ++i) gx[i] += S(a * double(g[i]));
            }
            if (tp.node(yi).requires_grad) {
                auto& gy = tp.grad_buffer(yi);
                for (size_t i = 0; i < g.size(); ++i) gy[i] += S(b * double(g[i]));
            }
        };
    }
    return o;
}

template <typename S>
Var<S> relu(Var<S> x) {
    Tape<S>& t = *x.tape;
    const auto& xv = x.value();
    std::vector<S> out(xv.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > S(0) ? xv[i] : S(0);
    const bool rg = x.requires_grad();
    const int xi = x.id;
    auto o = t.record(x.shape(), std::move(out), rg, {});
    if (rg) {
        const int oi = o.id;
        t.node(oi).backprop = [xi, oi](Tape<S>& tp) {
            const auto& g = tp.node(oi).grad;
            const auto& xv2 = tp.node(xi).value;
            auto& gx = tp.grad_buffer(xi);
            // subgradient 0 at the tie x == 0
            for (size_t i = 0; i < g.size(); ++i) gx[i] += xv2[i] > S(0) ? g[i] : S(0);
        };
    }
    return o;
}

template <typename S>
Var<S> silu(Var<S> x) {
    Tape<S>& t = *x.tape;
    const auto& xv = x.value();
    std::vector<S> out(xv.size());
    for (size_t i = 0; i < out.size(); ++i) {
        const S sig = S(1) / (S(1) + std::exp(-xv[i]));
        out[i] = xv[i] * sig;
    }
    const bool rg = x.requires_grad();
    const int xi = x.id;
    auto o = t.record(x.shape(), std::move(out), rg, {});
    if (rg) {
        const int oi = o.id;
        t.node(oi).backprop = [xi, oi](Tape<S>& tp) {
            const auto& g = tp.node(oi).grad;
            const auto& xv2 = tp.node(xi).value;
            auto& gx = tp.grad_buffer(xi);
            for (size_t i = 0; i < g.size(); ++i) {
                const S sig = S(1) / (S(1) + std::exp(-xv2[i]));
                gx[i] += g[i] * sig * (S(1) + xv2[i] * (S(1) - sig));
            }
        };
    }
    return o;
}

template <typename S>
Var<S> reshape(Var<S> x, Shape shape) {
    Tape<S>& t = *x.tape;
    require(numel(shape) == numel(x.shape()),
            "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    const bool rg = x.requires_grad();
    const int xi = x.id;
    auto o = t.record(std::move(shape), x.value(), rg, {});
    if (rg) {
        const int oi = o.id;
        t.node(oi).backprop = [xi, oi](Tape<S>& tp) {
            const auto& g = tp.node(oi).grad;
            auto& gx = tp.grad_buffer(xi);
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        };
    }
    return o;
}

// x: C x H x W, w: OC x C x K x K (K odd), b: OC. Stride 1, zero padding.
template <typename S>
Var<S> conv2d(Var<S> x, Var<S> w, Var<S> b, int pad) {
    Tape<S>& t = *x.tape;
    require(x.shape().size() == 3, "conv2d: input must be CxHxW, got " + shape_str(x.shape()));
    require(w.shape().size() == 4, "conv2d: weight must be OCxCxKxK, got " + shape_str(w.shape()));
    const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
    const int OC = w.shape()[0], K = w.shape()[2];
    require(w.shape()[1] == C,
            "conv2d: weight channels mismatch " + shape_str(w.shape()) + " vs input " + shape_str(x.shape()));
    require(w.shape()[2] == w.shape()[3] && K % 2 == 1,
            "conv2d: kernel must be square with odd size, got " + shape_str(w.shape()));
    require(b.shape() == Shape{OC},
            "conv2d: bias shape mismatch " + shape_str(b.shape()) + " vs " + shape_str(Shape{OC}));
    const int OH = H + 2 * pad - K + 1, OW = W + 2 * pad - K + 1;
    require(OH >= 1 && OW >= 1, "conv2d: kernel larger than padded input");

    const S* xv = x.value().data();
    const S* wv = w.value().data();
    const S* bv = b.value().data();
    std::vector<S> out(size_t(OC) * OH * OW);
    for (int oc = 0; oc < OC; ++oc)
        std::fill(out.begin() + size_t(oc) * OH * OW, out.begin() + size_t(oc + 1) * OH * OW, bv[oc]);
    for (int oc = 0; oc < OC; ++oc)
        for (int c = 0; c < C; ++c)
            for (int ky = 0; ky < K; ++ky)
                for (int kx = 0; kx < K; ++kx) {
                    const S wk = wv[((size_t(oc) * C + c) * K + ky) * K + kx];
                    if (wk == S(0)) continue;
                    const int oy_lo = std::max(0, pad - ky), oy_hi = std::min(OH, H + pad - ky);
                    const int ox_lo = std::max(0, pad - kx), ox_hi = std::min(OW, W + pad - kx);
                    for (int oy = oy_lo; oy < oy_hi; ++oy) {
                        const S* xrow = xv + (size_t(c) * H + (oy + ky - pad)) * W + (kx - pad);
                        S* yrow = out.data() + (size_t(oc) * OH + oy) * OW;
                        for (int ox = ox_lo; ox < ox_hi; ++ox) yrow[ox] += wk * xrow[ox];
                    }
                }

    const bool rg = x.requires_grad() || w.requires_grad() || b.requires_grad();
    const int xi = x.id, wi = w.id, bi = b.id;
    auto o = t.record({OC, OH, OW}, std::move(out), rg, {});
    if (rg) {
        const int oi = o.id;
        t.node(oi).backprop = [xi, wi, bi, oi, C, H, W, OC, OH, OW, K, pad](Tape<S>& tp) {
            const auto& g = tp.node(oi).grad;
            const S* xd = tp.node(xi).value.data();
            const S* wd = tp.node(wi).value.data();
            if (tp.node(bi).requires_grad) {
                auto& gb = tp.grad_buffer(bi);
                for (int oc = 0; oc < OC; ++oc) {
                    S s = 0;
                    const S* grow = g.data() + size_t(oc) * OH * OW;
                    for (long i = 0; i < long(OH) * OW; ++i) s += grow[i];
                    gb[oc] += s;
                }
            }
            const bool need_x = tp.node(xi).requires_grad;
            const bool need_w = tp.node(wi).requires_grad;
            if (!need_x && !need_w) return;
            S* gx = need_x ? tp.grad_buffer(xi).data() : nullptr;
            S* gw = need_w ? tp.grad_buffer(wi).data() : nullptr;
            for (int oc = 0; oc < OC; ++oc)
                for (int c = 0; c < C; ++c)
                    for (int ky = 0; ky < K; ++ky)
                        for (int kx = 0; kx < K; ++kx) {
                            const size_t widx = ((size_t(oc) * C + c) * K + ky) * K + kx;
                            const S wk = wd[widx];
                            const int oy_lo = std::max(0, pad - ky), oy_hi = std::min(OH, H + pad - ky);
                            const int ox_lo = std::max(0, pad - kx), ox_hi = std::min(OW, W + pad - kx);
                            S acc = 0;
                            for (int oy = oy_lo; oy < oy_hi; ++oy) {
                                const S* grow = g.data() + (size_t(oc) * OH + oy) * OW;
                                const size_t xoff = (size_t(c) * H + (oy + ky - pad)) * W + (kx - pad);
                                if (need_x) {
                                    S* gxrow = gx + xoff;
                                    for (int ox = ox_lo; ox < ox_hi; ++ox) gxrow[ox] += wk * grow[ox];
                                }
                                if (need_w) {
                                    const S* xrow = xd + xoff;
                                    for (int ox = ox_lo; ox < ox_hi; ++ox) acc += xrow[ox] * grow[ox];
                                }
                            }
                            if (need_w) gw[widx] += acc;
                        }
        };
    }
    return o;
}

// x: IN, w: OUT x IN, b: OUT
template <typename S>
Var<S> linear(Var<S> x, Var<S> w, Var<S> b) {
    Tape<S>& t = *x.tape;
    require(x.shape().size() == 1, "linear: input must be rank-1, got " + shape_str(x.shape()));
    require(w.shape().size() == 2 && w.shape()[1] == x.shape()[0],
            "linear: weight " + shape_str(w.shape()) + " incompatible with input " + shape_str(x.shape()));
    const int IN = x.shape()[0], OUT = w.shape()[0];
    require(b.shape() == Shape{OUT},
            "linear: bias shape mismatch " + shape_str(b.shape()) + " vs " + shape_str(Shape{OUT}));
    const auto& xv = x.value();
    const auto& wv = w.value();
    std::vector<S> out(b.value());
    for (int o2 = 0; o2 < OUT; ++o2) {
        S s = 0;
        const S* wrow = wv.data() + size_t(o2) * IN;
        for (int i = 0; i < IN; ++i) s += wrow[i] * xv[i];
        out[size_t(o2)] += s;
    }
    const bool rg = x.requires_grad() || w.requires_grad() || b.requires_grad();
    const int xi = x.id, wi = w.id, bi = b.id;
    auto o = t.record({OUT}, std::move(out), rg, {});
    if (rg) {
        const int oi = o.id;
        t.node(oi).backprop = [xi, wi, bi, oi, IN, OUT](Tape<S>& tp) {
            const auto& g = tp.node(oi).grad;
            const auto& xv2 = tp.node(xi).value;
            const auto& wv2 = tp.node(wi).value;
            if (tp.node(bi).requires_grad) {
                auto& gb = tp.grad_buffer(bi);
                for (int o2 = 0; o2 < OUT; ++o2) gb[o2] += g[o2];
            }
            if (tp.node(wi).requires_grad) {
                auto& gw = tp.grad_buffer(wi);
                for (int o2 = 0; o2 < OUT; ++o2)
                    for (int i = 0; i < IN; ++i) gw[size_t(o2) * IN + i] += g[o2] * xv2[i];
            }
            if (tp.node(xi).requires_grad) {
                auto& gx = tp.grad_buffer(xi);
                for (int o2 = 0; o2 < OUT; ++o2)
                    for (int i = 0; i < IN; ++i) gx[i] += g[o2] * wv2[size_t(o2) * IN + i];
            }
        };
    }
    return o;
}

template <typename S>
Var<S> avgpool2d(Var<S> x, int k) {
    Tape<S>& t = *x.tape;
    require(x.shape().size() == 3, "avgpool2d: input must be CxHxW, got " + shape_str(x.shape()));
    const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
    require(k >= 1 && H % k == 0 && W % k == 0,
            "avgpool2d: window " + std::to_string(k) + " must divide " + shape_str(x.shape()));
    const int OH = H / k, OW = W / k;
    const auto& xv = x.value();
    std::vector<S> out(size_t(C) * OH * OW, S(0));
    const S inv = S(1) / S(k * k);
    for (int c = 0; c < C; ++c)
        for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox) {
                S s = 0;
                for (int dy = 0; dy < k; ++dy) {
                    const S* row = xv.data() + (size_t(c) * H + oy * k + dy) * W + ox * k;
                    for (int dx = 0; dx < k; ++dx) s += row[dx];
                }
                out[(size_t(c) * OH + oy) * OW + ox] = s * inv;
            }
    const bool rg = x.requires_grad();
    const int xi = x.id;
    auto o = t.record({C, OH, OW}, std::move(out), rg, {});
    if (rg) {
        const int oi = o.id;
        t.node(oi).backprop = [xi, oi, C, H, W, OH, OW, k, inv](Tape<S>& tp) {
            const auto& g = tp.node(oi).grad;
            auto& gx = tp.grad_buffer(xi);
            for (int c = 0; c < C; ++c)
                for (int oy = 0; oy < OH; ++oy)
                    for (int ox = 0; ox < OW; ++ox) {
                        const S gv = g[(size_t(c) * OH + oy) * OW + ox] * inv;
                        for (int dy = 0; dy < k; ++dy) {
                            S* row = gx.data() + (size_t(c) * H + oy * k + dy) * W + ox * k;
                            for (int dx = 0; dx < k; ++dx) row[dx] += gv;
                        }
                    }
        };
    }
    return o;
}

template <typename S>
Var<S> upsample_nearest(Var<S> x, int fy, int fx) {
    Tape<S>& t = *x.tape;
    require(x.shape().size() == 3, "upsample_nearest: input must be CxHxW, got " + shape_str(x.shape()));
    require(fy >= 1 && fx >= 1, "upsample_nearest: factors must be >= 1");
    const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
    const int OH = H * fy, OW = W * fx;
    const auto& xv = x.value();
    std::vector<S> out(size_t(C) * OH * OW);
    for (int c = 0; c < C; ++c)
        for (int oy = 0; oy < OH; ++oy) {
            const S* srow = xv.data() + (size_t(c) * H + oy / fy) * W;
            S* drow = out.data() + (size_t(c) * OH + oy) * OW;
            for (int ox = 0; ox < OW; ++ox) drow[ox] = srow[ox / fx];
        }
    const bool rg = x.requires_grad();
    const int xi = x.id;
    auto o = t.record({C, OH, OW}, std::move(out), rg, {});
    if (rg) {
        const int oi = o.id;
        t.node(oi).backprop = [xi, oi, C, H, W, OH, OW, fy, fx](Tape<S>& tp) {
            const auto& g = tp.node(oi).grad;
            auto& gx = tp.grad_buffer(xi);
            for (int c = 0; c < C; ++c)
                for (int oy = 0; oy < OH; ++oy) {
                    S* srow = gx.data() + (size_t(c) * H + oy / fy) * W;
                    const S* drow = g.data() + (size_t(c) * OH + oy) * OW;
                    for (int ox = 0; ox < OW; ++ox) srow[ox / fx] += drow[ox];
                }
        };
    }
    return o;
}

template <typename S>
Var<S> upsample_nearest(Var<S> x, int f) { return upsample_nearest(x, f, f); }

// {C,H,W} -> {C*r*r, H/r, W/r}; pure index permutation
template <typename S>
Var<S> space_to_depth(Var<S> x, int r) {
    Tape<S>& t = *x.tape;
    require(x.shape().size() == 3, "space_to_depth: input must be CxHxW");
    const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
    require(r >= 1 && H % r == 0 && W % r == 0,
            "space_to_depth: block " + std::to_string(r) + " must divide " + shape_str(x.shape()));
    const int OH = H / r, OW = W / r;
    const auto& xv = x.value();
    std::vector<S> out(xv.size());
    for (int c = 0; c < C; ++c)
        for (int dy = 0; dy < r; ++dy)
            for (int dx = 0; dx < r; ++dx) {
                const int oc = (c * r + dy) * r + dx;
                for (int y = 0; y < OH; ++y)
                    for (int xx = 0; xx < OW; ++xx)
                        out[(size_t(oc) * OH + y) * OW + xx] =
                            xv[(size_t(c) * H + y * r + dy) * W + xx * r + dx];
            }
    const bool rg = x.requires_grad();
    const int xi = x.id;
    auto o = t.record({C * r * r, OH, OW}, std::move(out), rg, {});
    if (rg) {
        const int oi = o.id;
        t.node(oi).backprop = [xi, oi, C, H, W, OH, OW, r](Tape<S>& tp) {
            const auto& g = tp.node(oi).grad;
            auto& gx = tp.grad_buffer(xi);
            for (int c = 0; c < C; ++c)
                for (int dy = 0; dy < r; ++dy)
                    for (int dx = 0; dx < r; ++dx) {
                        const int oc = (c * r + dy) * r + dx;
                        for (int y = 0; y < OH; ++y)
                            for (int xx = 0; xx < OW; ++xx)
                                gx[(size_t(c) * H + y * r + dy) * W + xx * r + dx] +=
                                    g[(size_t(oc) * OH + y) * OW + xx];
                    }
        };
    }
    return o;
}

// {C*r*r, H, W} -> {C, H*r, W*r}; inverse of space_to_depth
template <typename S>
Var<S> depth_to_space(Var<S> x, int r) {
    Tape<S>& t = *x.tape;
    require(x.shape().size() == 3, "depth_to_space: input must be CxHxW");
    const int IC = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
    require(r >= 1 && IC % (r * r) == 0,
            "depth_to_space: channels of " + shape_str(x.shape()) + " not divisible by r^2");
    const int C = IC / (r * r), OH = H * r, OW = W * r;
    const auto& xv = x.value();
    std::vector<S> out(xv.size());
    for (int c = 0; c < C; ++c)
        for (int dy = 0; dy < r; ++dy)
            for (int dx = 0; dx < r; ++dx) {
                const int ic = (c * r + dy) * r + dx;
                for (int y = 0; y < H; ++y)
                    for (int xx = 0; xx < W; ++xx)
                        out[(size_t(c) * OH + y * r + dy) * OW + xx * r + dx] =
                            xv[(size_t(ic) * H + y) * W + xx];
            }
    const bool rg = x.requires_grad();
    const int xi = x.id;
    auto o = t.record({C, OH, OW}, std::move(out), rg, {});
    if (rg) {
        const int oi = o.id;
        t.node(oi).backprop = [xi, oi, C, H, W, OH, OW, r](Tape<S>& tp) {
            const auto& g = tp.node(oi).grad;
            auto& gx = tp.grad_buffer(xi);
            for (int c = 0; c < C; ++c)
                for (int dy = 0; dy < r; ++dy)
                    for (int dx = 0; dx < r; ++dx) {
                        const int ic = (c * r + dy) * r + dx;
                        for (int y = 0; y < H; ++y)
                            for (int xx = 0; xx < W; ++xx)
                                gx[(size_t(ic) * H + y) * W + xx] +=
                                    g[(size_t(c) * OH + y * r + dy) * OW + xx * r + dx];
                    }
        };
    }
    return o;
}

template <typename S>
Var<S> concat_channels(Var<S> x, Var<S> y) {
    Tape<S>& t = *x.tape;
    require(x.shape().size() == 3 && y.shape().size() == 3,
            "concat_channels: inputs must be CxHxW");
    require(x.shape()[1] == y.shape()[1] && x.shape()[2] == y.shape()[2],
            "concat_channels: spatial mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
    const int C1 = x.shape()[0], C2 = y.shape()[0], H = x.shape()[1], W = x.shape()[2];
    std::vector<S> out;
    out.reserve(size_t(C1 + C2) * H * W);
    out.insert(out.end(), x.value().begin(), x.value().end());
    out.insert(out.end(), y.value().begin(), y.value().end());
    const bool rg = x.requires_grad() || y.requires_grad();
    const int xi = x.id, yi = y.id;
    auto o = t.record({C1 + C2, H, W}, std::move(out), rg, {});
    if (rg) {
        const int oi = o.id;
        const size_t split = size_t(C1) * H * W;
        t.node(oi).backprop = [xi, yi, oi, split](Tape<S>& tp) {
            const auto& g = tp.node(oi).grad;
            if (tp.node(xi).requires_grad) {
                auto& gx = tp.grad_buffer(xi);
                for (size_t i = 0; i < split; ++i) gx[i] += g[i];
            }
            if (tp.node(yi).requires_grad) {
                auto& gy = tp.grad_buffer(yi);
                for (size_t i = split; i < g.size(); ++i) gy[i - split] += g[i];
            }
        };
    }
    return o;
}

// mean absolute difference; subgradient 0 at ties
template <typename S>
Var<S> l1(Var<S> x, Var<S> y) {
    Tape<S>& t = *x.tape;
    require_same_shape("l1", x.shape(), y.shape());
    const auto& xv = x.value();
    const auto& yv = y.value();
    const S inv = S(1) / S(xv.size());
    S s = 0;
    for (size_t i = 0; i < xv.size(); ++i) s += std::abs(xv[i] - yv[i]);
    const bool rg = x.requires_grad() || y.requires_grad();
    const int xi = x.id, yi = y.id;
    auto o = t.record({1}, {s * inv}, rg, {});
    if (rg) {
        const int oi = o.id;
        t.node(oi).backprop = [xi, yi, oi, inv](Tape<S>& tp) {
            const S g = tp.node(oi).grad[0] * inv;
            const auto& xv2 = tp.node(xi).value;
            const auto& yv2 = tp.node(yi).value;
            const bool nx = tp.node(xi).requires_grad, ny = tp.node(yi).requires_grad;
            S* gx = nx ? tp.grad_buffer(xi).data() : nullptr;
            S* gy = ny ? tp.grad_buffer(yi).data() : nullptr;
            for (size_t i = 0; i < xv2.size(); ++i) {
                const S d = xv2[i] - yv2[i];
                const S sgn = d > S(0) ? S(1) : (d < S(0) ? S(-1) : S(0));
                if (nx) gx[i] += g * sgn;
                if (ny) gy[i] -= g * sgn;
            }
        };
    }
    return o;
}

template <typename S>
Var<S> mse(Var<S> x, Var<S> y) {
    Tape<S>& t = *x.tape;
    require_same_shape("mse", x.shape(), y.shape());
    const auto& xv = x.value();
    const auto& yv = y.value();
    const S inv = S(1) / S(xv.size());
    S s = 0;
    for (size_t i = 0; i < xv.size(); ++i) {
        const S d = xv[i] - yv[i];
        s += d * d;
    }
    const bool rg = x.requires_grad() || y.requires_grad();
    const int xi = x.id, yi = y.id;
    auto o = t.record({1}, {s * inv}, rg, {});
    if (rg) {
        const int oi = o.id;
        t.node(oi).backprop = [xi, yi, oi, inv](Tape<S>& tp) {
            const S g = tp.node(oi).grad[0] * S(2) * inv;
            const auto& xv2 = tp.node(xi).value;
            const auto& yv2 = tp.node(yi).value;
            const bool nx = tp.node(xi).requires_grad, ny = tp.node(yi).requires_grad;
            S* gx = nx ? tp.grad_buffer(xi).data() : nullptr;
            S* gy = ny ? tp.grad_buffer(yi).data() : nullptr;
            for (size_t i = 0; i < xv2.size(); ++i) {
                const S d = xv2[i] - yv2[i];
                if (nx) gx[i] += g * d;
                if (ny) gy[i] -= g * d;
            }
        };
    }
    return o;
}

template <typename S>
Var<S> softmax(Var<S> x) {
    Tape<S>& t = *x.tape;
    require(x.shape().size() == 1, "softmax: input must be rank-1, got " + shape_str(x.shape()));
    const auto& xv = x.value();
    const S m = *std::max_element(xv.begin(), xv.end());
    std::vector<S> out(xv.size());
    S z = 0;
    for (size_t i = 0; i < xv.size(); ++i) {
        out[i] = std::exp(xv[i] - m);
        z += out[i];
    }
    for (auto& v : out) v /= z;
    const bool rg = x.requires_grad();
    const int xi = x.id;
    auto o = t.record(x.shape(), std::move(out), rg, {});
    if (rg) {
        const int oi = o.id;
        t.node(oi).backprop = [xi, oi](Tape<S>& tp) {
            const auto& g = tp.node(oi).grad;
            const auto& yv = tp.node(oi).value;
            auto& gx = tp.grad_buffer(xi);
            S dot = 0;
            for (size_t i = 0; i < g.size(); ++i) dot += g[i] * yv[i];
            for (size_t i = 0; i < g.size(); ++i) gx[i] += yv[i] * (g[i] - dot);
        };
    }
    return o;
}

template <typename S>
Var<S> cross_entropy(Var<S> logits, int target) {
    Tape<S>& t = *logits.tape;
    require(logits.shape().size() == 1,
            "cross_entropy: logits must be rank-1, got " + shape_str(logits.shape()));
    const auto& lv = logits.value();
    require(target >= 0 && target < int(lv.size()), "cross_entropy: target out of range");
    const S m = *std::max_element(lv.begin(), lv.end());
    S z = 0;
    for (S v : lv) z += std::exp(v - m);
    const S loss = (m + std::log(z)) - lv[size_t(target)];
    const bool rg = logits.requires_grad();
    const int xi = logits.id;
    auto o = t.record({1}, {loss}, rg, {});
    if (rg) {
        const int oi = o.id;
        t.node(oi).backprop = [xi, oi, target, m, z](Tape<S>& tp) {
            const S g = tp.node(oi).grad[0];
            const auto& lv2 = tp.node(xi).value;
            auto& gx = tp.grad_buffer(xi);
            for (size_t i = 0; i < lv2.size(); ++i) {
                const S p = std::exp(lv2[i] - m) / z;
                gx[i] += g * (p - (int(i) == target ? S(1) : S(0)));
            }
        };
    }
    return o;
}

// Per-channel normalization over the spatial extent with learnable scale and
// shift (instance-norm variant of the norm kernel).
template <typename S>
Var<S> instance_norm(Var<S> x, Var<S> gain, Var<S> bias, S eps = S(1e-5)) {
    Tape<S>& t = *x.tape;
    require(x.shape().size() == 3, "instance_norm: input must be CxHxW, got " + shape_str(x.shape()));
    const int C = x.shape()[0];
    const long HW = long(x.shape()[1]) * x.shape()[2];
    require(gain.shape() == Shape{C} && bias.shape() == Shape{C},
            "instance_norm: gain/bias must be " + shape_str(Shape{C}));
    const auto& xv = x.value();
    const auto& gv = gain.value();
    const auto& bv = bias.value();
    std::vector<S> out(xv.size()), mean(C), istd(C);
    for (int c = 0; c < C; ++c) {
        const S* p = xv.data() + size_t(c) * HW;
        S mu = 0;
        for (long i = 0; i < HW; ++i) mu += p[i];
        mu /= S(HW);
        S var = 0;
        for (long i = 0; i < HW; ++i) {
            const S d = p[i] - mu;
            var += d * d;
        }
        var /= S(HW);
        const S is = S(1) / std::sqrt(var + eps);
        mean[c] = mu;
        istd[c] = is;
        S* q = out.data() + size_t(c) * HW;
        for (long i = 0; i < HW; ++i) q[i] = (p[i] - mu) * is * gv[c] + bv[c];
    }
    const bool rg = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
    const int xi = x.id, gi = gain.id, bi = bias.id;
    auto o = t.record(x.shape(), std::move(out), rg, {});
    if (rg) {
        const int oi = o.id;
        t.node(oi).backprop = [xi, gi, bi, oi, C, HW, mean, istd](Tape<S>& tp) {
            const auto& g = tp.node(oi).grad;
            const auto& xv2 = tp.node(xi).value;
            const auto& gv2 = tp.node(gi).value;
            const bool nx = tp.node(xi).requires_grad;
            const bool ng = tp.node(gi).requires_grad;
            const bool nb = tp.node(bi).requires_grad;
            for (int c = 0; c < C; ++c) {
                const S* xp = xv2.data() + size_t(c) * HW;
                const S* gp = g.data() + size_t(c) * HW;
                const S mu = mean[size_t(c)], is = istd[size_t(c)];
                S sum_g = 0, sum_gxh = 0;
                for (long i = 0; i < HW; ++i) {
                    const S xh = (xp[i] - mu) * is;
                    sum_g += gp[i];
                    sum_gxh += gp[i] * xh;
                }
                if (nb) tp.grad_buffer(bi)[size_t(c)] += sum_g;
                if (ng) tp.grad_buffer(gi)[size_t(c)] += sum_gxh;
                if (nx) {
                    S* gx = tp.grad_buffer(xi).data() + size_t(c) * HW;
                    const S k1 = sum_g / S(HW), k2 = sum_gxh / S(HW);
                    for (long i = 0; i < HW; ++i) {
                        const S xh = (xp[i] - mu) * is;
                        gx[i] += gv2[size_t(c)] * is * (gp[i] - k1 - xh * k2);
                    }
                }
            }
        };
    }
    return o;
}

// stop-gradient: same value, no backward path
template <typename S>
Var<S> detach(Var<S> x) {
    return x.tape->constant(x.shape(), x.value());
}

// clamp to [0,1] composed from relu: relu(x) - relu(x - 1)
template <typename S>
Var<S> clamp01(Var<S> x) {
    Tape<S>& t = *x.tape;
    auto shifted = add(x, t.full(x.shape(), S(-1)));
    return sub(relu(x), relu(shifted));
}

// mean of a list of scalars, used to average per-sample losses
template <typename S>
Var<S> mean_scalars(const std::vector<Var<S>>& xs) {
    require(!xs.empty(), "mean_scalars: empty list");
    Var<S> acc = xs[0];
    for (size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
    return mul_scalar(acc, S(1) / S(xs.size()));
}

}  // namespace tdr
