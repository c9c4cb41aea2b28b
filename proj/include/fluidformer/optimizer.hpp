#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "fluidformer/params.hpp"
#include "fluidformer/tensor.hpp"

namespace ff {

// Adam with additive L2 (weight decay folded into the gradient).
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.001;
    double eps = 1e-8;
    std::uint64_t step = 0;
    std::unordered_map<std::string, std::vector<double>> m, v;
};

inline void adam_step(ParamRegistry& params,
                      const std::unordered_map<std::string, std::vector<double>>& grads,
                      AdamState& st, double lr) {
    st.step += 1;
    double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (const auto& name : params.learnable_names()) {
        Tensor& theta = params.get(name);
        auto git = grads.find(name);
        std::size_t n = theta.numel();
        auto& m = st.m[name];
        auto& v = st.v[name];
        if (m.size() != n) m.assign(n, 0.0);
        if (v.size() != n) v.assign(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double g = git != grads.end() && i < git->second.size() ? git->second[i] : 0.0;
            g += st.weight_decay * theta.data[i];
            m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g;
            v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g * g;
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            theta.data[i] -= lr * mhat / (std::sqrt(vhat) + st.eps);
        }
    }
}

// Step decay: 0.01 halved at 15k, 25k, 35k, 45k, 50k, 55k iterations.
inline double lr_schedule(std::uint64_t iteration, double base_lr = 0.01) {
    static constexpr std::uint64_t milestones[] = {15000, 25000, 35000, 45000, 50000, 55000};
    double lr = base_lr;
    for (auto ms : milestones)
        if (iteration >= ms) lr *= 0.5;
    return lr;
}

}  // namespace ff
