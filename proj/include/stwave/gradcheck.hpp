#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "stwave/tape.hpp"
#include "stwave/tensor.hpp"

namespace stwave {

struct GradCheckOptions {
    double eps = 1e-5;
    // Per input, at most this many coordinates are probed (evenly strided);
    // -1 probes all of them.
    int64_t max_coords_per_input = -1;
    // Reject a sample whenever any relu/abs input sits closer than
    // kink_margin_factor * eps to its kink, and ask for a fresh sample.
    double kink_margin_factor = 10.0;
    int max_resamples = 8;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_site;       // "<input name>[flat index]"
    int64_t coords_checked = 0;
    int attempts_used = 1;
    bool sample_found = true;     // false: every attempt was kink-blocked
    double kink_distance = std::numeric_limits<double>::infinity();

    bool passed(double tol) const { return sample_found && max_rel_err <= tol; }
};

using NamedInputs = std::vector<std::pair<std::string, Tensor<double>>>;

// Central finite-difference check of tape gradients, always in f64.
//
// `inputs_for(attempt)` supplies the leaf values (resampled per attempt when
// kink avoidance rejects a draw); `f` rebuilds the scalar loss from leaves on
// a fresh tape. `f` must be a pure deterministic function of the leaf values:
// anything stochastic inside (e.g. dropout) has to reuse the same draw on
// every call, or the numeric slope measures a different function than the
// tape did. Relative error per coordinate: |g - ghat| / max(1, |g|, |ghat|).
inline GradCheckReport grad_check(
    const GradCheckOptions& opt,
    const std::function<NamedInputs(int)>& inputs_for,
    const std::function<Tensor<double>(Tape<double>&, const std::vector<Tensor<double>>&)>& f) {
    GradCheckReport rep;
    for (int attempt = 0; attempt <= opt.max_resamples; ++attempt) {
        rep.attempts_used = attempt + 1;
        NamedInputs named = inputs_for(attempt);

        Tape<double> tape;
        std::vector<Tensor<double>> leaves;
        leaves.reserve(named.size());
        for (auto& [name, v] : named) leaves.push_back(tape.leaf(v, true));
        Tensor<double> loss = f(tape, leaves);
        rep.kink_distance = tape.min_kink_distance();
        if (rep.kink_distance <= opt.kink_margin_factor * opt.eps) continue; // resample
        tape.backward(loss);

        std::vector<std::vector<double>> analytic(named.size());
        for (size_t i = 0; i < named.size(); ++i) {
            if (tape.has_grad(leaves[i])) {
                Tensor<double> g = tape.grad(leaves[i]);
                analytic[i].assign(g.data().begin(), g.data().end());
            } else {
                analytic[i].assign(static_cast<size_t>(named[i].second.size()), 0.0);
            }
        }

        auto eval = [&](const NamedInputs& vals) {
            Tape<double> t;
            std::vector<Tensor<double>> ls;
            ls.reserve(vals.size());
            for (const auto& [name, v] : vals) ls.push_back(t.leaf(v, true));
            return f(t, ls).item();
        };

        rep.max_rel_err = 0.0;
        rep.coords_checked = 0;
        for (size_t i = 0; i < named.size(); ++i) {
            int64_t n = named[i].second.size();
            int64_t stride = 1;
            if (opt.max_coords_per_input > 0 && n > opt.max_coords_per_input)
                stride = (n + opt.max_coords_per_input - 1) / opt.max_coords_per_input;
            std::vector<double> base(named[i].second.data().begin(), named[i].second.data().end());
            for (int64_t j = 0; j < n; j += stride) {
                NamedInputs bumped = named;
                std::vector<double> up = base, dn = base;
                up[static_cast<size_t>(j)] += opt.eps;
                dn[static_cast<size_t>(j)] -= opt.eps;
                bumped[i].second = Tensor<double>::from_data(named[i].second.shape(), up);
                double fu = eval(bumped);
                bumped[i].second = Tensor<double>::from_data(named[i].second.shape(), dn);
                double fd = eval(bumped);
                double numeric = (fu - fd) / (2.0 * opt.eps);
                double a = analytic[i][static_cast<size_t>(j)];
                double rel = std::fabs(a - numeric) /
                             std::max({1.0, std::fabs(a), std::fabs(numeric)});
                ++rep.coords_checked;
                if (rel > rep.max_rel_err) {
                    rep.max_rel_err = rel;
                    rep.worst_site = named[i].first + "[" + std::to_string(j) + "]";
                }
            }
        }
        rep.sample_found = true;
        return rep;
    }
    rep.sample_found = false;
    rep.max_rel_err = std::numeric_limits<double>::infinity();
    rep.worst_site = "(no kink-free sample found)";
    return rep;
}

// Convenience wrapper for a fixed, known-kink-safe input set.
inline GradCheckReport grad_check_fixed(
    const GradCheckOptions& opt, const NamedInputs& inputs,
    const std::function<Tensor<double>(Tape<double>&, const std::vector<Tensor<double>>&)>& f) {
    return grad_check(opt, [&](int) { return inputs; }, f);
}

} // namespace stwave
