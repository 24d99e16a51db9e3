#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <type_traits>
#include <vector>

#include "tdr/autograd.hpp"

namespace tdr {

struct GradCheckEntry {
    std::string leaf;
    long index = 0;
    double analytic = 0, numeric = 0, rel_err = 0;
    bool excluded = false;  // non-differentiable point (one-sided slopes disagree)
};

struct GradCheckReport {
    double max_rel_err = 0;
    long checked = 0;
    long excluded = 0;
    GradCheckEntry worst;

    bool pass(double tol) const { return max_rel_err < tol; }
};

struct GradCheckLeaf {
    std::string name;
    Shape shape;
    std::vector<double> data;
};

// Central finite differences against the recorded backward rules, element by
// element. Points where forward and backward one-sided slopes disagree are
// reported as excluded rather than failed (relu kinks, l1 ties).
template <typename Builder>
GradCheckReport gradcheck(Builder&& build, std::vector<GradCheckLeaf> leaves,
                          double epsilon, double tolerance) {
    require(epsilon >= 1e-7 && epsilon <= 1e-3, "gradcheck: epsilon must be in [1e-7, 1e-3]");
    (void)tolerance;

    auto eval = [&](const std::vector<GradCheckLeaf>& ls) -> double {
        Tape<double> t;
        std::vector<Var<double>> vars;
        vars.reserve(ls.size());
        for (const auto& l : ls) vars.push_back(t.leaf(l.shape, l.data, false));
        return build(t, vars).scalar();
    };

    // analytic pass
    std::vector<std::vector<double>> analytic(leaves.size());
    {
        Tape<double> t;
        std::vector<Var<double>> vars;
        vars.reserve(leaves.size());
        for (const auto& l : leaves) vars.push_back(t.leaf(l.shape, l.data, true));
        auto loss = build(t, vars);
        t.backward(loss);
        for (size_t i = 0; i < leaves.size(); ++i) {
            const auto& g = t.node(vars[i].id).grad;
            analytic[i] = g.empty() ? std::vector<double>(leaves[i].data.size(), 0.0) : g;
        }
    }

    const double f0 = eval(leaves);
    GradCheckReport report;
    for (size_t li = 0; li < leaves.size(); ++li) {
        for (size_t e = 0; e < leaves[li].data.size(); ++e) {
            const double saved = leaves[li].data[e];
            leaves[li].data[e] = saved + epsilon;
            const double fp = eval(leaves);
            leaves[li].data[e] = saved - epsilon;
            const double fm = eval(leaves);
            leaves[li].data[e] = saved;

            const double fwd = (fp - f0) / epsilon;
            const double bwd = (f0 - fm) / epsilon;
            const double slope_scale = std::max({1.0, std::abs(fwd), std::abs(bwd)});
            if (std::abs(fwd - bwd) > 1e-2 * slope_scale) {
                ++report.excluded;
                continue;
            }

            const double numeric = (fp - fm) / (2 * epsilon);
            const double a = analytic[li][e];
            ++report.checked;
            // below the truncation noise floor of the central difference
            if (std::abs(a - numeric) <= 10 * epsilon) continue;
            const double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-6);
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst = {leaves[li].name, long(e), a, numeric, rel, false};
            }
        }
    }
    return report;
}

}  // namespace tdr
