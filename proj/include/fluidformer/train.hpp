#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "fluidformer/dataset.hpp"
#include "fluidformer/loss.hpp"
#include "fluidformer/network.hpp"
#include "fluidformer/optimizer.hpp"

namespace ff {

struct TrainConfig {
    std::size_t iterations = 2000;   // desk-scale default; full schedule is 60k
    std::uint64_t seed = 1234;
    double base_lr = 0.01;
    std::size_t checkpoint_every = 500;
    LossConfig loss;
};

struct TrainHaltError : std::runtime_error {
    TrainHaltError(std::size_t it)
        : std::runtime_error("training halted: non-finite loss at iteration " +
                             std::to_string(it)),
          iteration(it) {}
    std::size_t iteration;
};

namespace detail {

// Binary optimizer/rng snapshot so an interrupted run resumes bitwise.
inline void save_train_state(const std::string& path, std::size_t iteration,
                             const AdamState& st, const ParamRegistry& params,
                             const std::mt19937_64& eng) {
    std::ofstream f(path, std::ios::binary);
    auto wr = [&](const void* p, std::size_t n) {
        f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    };
    std::uint64_t it = iteration, step = st.step;
    wr(&it, 8);
    wr(&step, 8);
    for (const auto& name : params.learnable_names()) {
        std::size_t n = params.get(name).numel();
        auto mi = st.m.find(name);
        auto vi = st.v.find(name);
        std::vector<double> zero(n, 0.0);
        wr(mi != st.m.end() ? mi->second.data() : zero.data(), n * 8);
        wr(vi != st.v.end() ? vi->second.data() : zero.data(), n * 8);
    }
    // full float64 registry snapshot (the .ffck checkpoint is float32, which
    // would break bitwise resume); covers non-learnable running statistics too
    for (const auto& name : params.names()) {
        const Tensor& t = params.get(name);
        wr(t.data.data(), t.numel() * 8);
    }
    std::ostringstream rs;
    rs << eng;
    std::string rstr = rs.str();
    std::uint64_t len = rstr.size();
    wr(&len, 8);
    wr(rstr.data(), rstr.size());
}

inline bool load_train_state(const std::string& path, std::size_t& iteration, AdamState& st,
                             ParamRegistry& params, std::mt19937_64& eng) {
    std::ifstream f(path, std::ios::binary);
    if (!f) return false;
    auto rd = [&](void* p, std::size_t n) {
        f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (!f) throw std::runtime_error("corrupt train state: " + path);
    };
    std::uint64_t it, step;
    rd(&it, 8);
    rd(&step, 8);
    iteration = it;
    st.step = step;
    for (const auto& name : params.learnable_names()) {
        std::size_t n = params.get(name).numel();
        st.m[name].resize(n);
        st.v[name].resize(n);
        rd(st.m[name].data(), n * 8);
        rd(st.v[name].data(), n * 8);
    }
    for (const auto& name : params.names()) {
        Tensor& t = params.get(name);
        rd(t.data.data(), t.numel() * 8);
    }
    std::uint64_t len;
    rd(&len, 8);
    std::string rstr(len, '\0');
    rd(rstr.data(), len);
    std::istringstream rs(rstr);
    rs >> eng;
    return true;
}

}  // namespace detail

// One window per step: sample (seeded), composite loss, backward, Adam with
// the step-decay schedule. Writes checkpoint.ffck, train_state.bin, and an
// appended loss_curve.csv under out_dir. Resumes from a prior state if one
// exists in out_dir.
inline void train(const TrajectoryDataset& dataset, const TrainConfig& cfg,
                  const NetworkConfig& net_cfg, const std::string& out_dir,
                  std::ostream* log = &std::cout) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const std::string ckpt_path = out_dir + "/checkpoint.ffck";
    const std::string state_path = out_dir + "/train_state.bin";
    const std::string curve_path = out_dir + "/loss_curve.csv";

    const Scene& scene0 = dataset.scenes[0].scene;
    ParamRegistry params;
    FluidFormerNet net;
    NetworkConfig nc = net_cfg;
    nc.radius = scene0.radius;
    net.init(nc, params, 1.0 / scene0.spacing);

    AdamState adam;
    Rng rng(cfg.seed);
    std::size_t start_iter = 0;
    bool resumed = detail::load_train_state(state_path, start_iter, adam, params, rng.engine());
    if (resumed && log) *log << "resuming at iteration " << start_iter << "\n";

    std::ofstream curve(curve_path, resumed ? std::ios::app : std::ios::out);
    if (!resumed) curve << "iter,lr,loss\n";

    for (std::size_t it = start_iter; it < start_iter + cfg.iterations; ++it) {
        const auto& ref = dataset.windows[rng.index(dataset.windows.size())];
        TrainingWindow win = dataset.window(ref);
        const Scene& scene = dataset.scenes[ref.scene_idx].scene;

        ad::Tape tape;
        NetCtx ctx{tape, params, /*training=*/true};
        ad::Var loss = composite_loss(ctx, net, win, scene, cfg.loss);
        double lval = loss->value.data[0];
        if (!std::isfinite(lval)) {
            params.save(ckpt_path);  // retain last good parameters
            throw TrainHaltError(it);
        }
        tape.backward(loss);

        std::unordered_map<std::string, std::vector<double>> grads;
        for (const auto& [name, var] : ctx.bound)
            if (var->requires_grad) grads[name] = var->grad;
        double lr = lr_schedule(it, cfg.base_lr);
        adam_step(params, grads, adam, lr);

        curve << it << "," << lr << "," << lval << "\n";
        if (log && (it % 50 == 0 || it + 1 == start_iter + cfg.iterations))
            *log << "iter " << it << " lr " << lr << " loss " << lval << "\n";
        if ((it + 1) % cfg.checkpoint_every == 0 || it + 1 == start_iter + cfg.iterations) {
            params.save(ckpt_path);
            detail::save_train_state(state_path, it + 1, adam, params, rng.engine());
        }
    }
}

}  // namespace ff
