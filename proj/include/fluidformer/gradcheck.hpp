#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "fluidformer/params.hpp"
#include "fluidformer/random.hpp"

namespace ff {

struct GradCheckEntry {
    std::string param;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    GradCheckEntry worst;
    double max_rel_err = 0.0;
    bool passed(double tol) const { return max_rel_err <= tol; }
};

// Central finite differences against analytic gradients on a random sample
// of entries per learnable parameter. `loss_fn` must be a pure function of
// the registry contents; `grad_fn` returns the analytic gradient by name.
inline GradCheckReport gradient_check(
    ParamRegistry& params, const std::function<double()>& loss_fn,
    const std::function<std::unordered_map<std::string, std::vector<double>>()>& grad_fn,
    std::size_t samples_per_param = 3, double h = 1e-6, std::uint64_t seed = 7) {
    GradCheckReport rep;
    auto grads = grad_fn();
    Rng rng(seed);
    for (const auto& name : params.learnable_names()) {
        Tensor& t = params.get(name);
        const auto git = grads.find(name);
        std::size_t n = t.numel();
        std::size_t k = std::min(samples_per_param, n);
        for (std::size_t s = 0; s < k; ++s) {
            std::size_t idx = rng.index(n);
            double saved = t.data[idx];
            t.data[idx] = saved + h;
            double lp = loss_fn();
            t.data[idx] = saved - h;
            double lm = loss_fn();
            t.data[idx] = saved;
            GradCheckEntry e;
            e.param = name;
            e.index = idx;
            e.numeric = (lp - lm) / (2.0 * h);
            e.analytic =
                git != grads.end() && idx < git->second.size() ? git->second[idx] : 0.0;
            // floor absorbs roundoff in the central difference (~eps*|loss|/h) on
            // near-zero gradients; errors above ~1e-8 absolute still register
            double denom = std::max({std::fabs(e.analytic), std::fabs(e.numeric), 1e-4});
            e.rel_err = std::fabs(e.analytic - e.numeric) / denom;
            if (e.rel_err >= rep.max_rel_err) {
                rep.max_rel_err = e.rel_err;
                rep.worst = e;
            }
            rep.entries.push_back(std::move(e));
        }
    }
    return rep;
}

}  // namespace ff
