#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "fluidformer/autodiff.hpp"
#include "fluidformer/geometry.hpp"
#include "fluidformer/neighbor.hpp"
#include "fluidformer/network.hpp"

namespace ff {

struct LossConfig {
    double avg_neighbors = 40.0;  // c-bar in the neighbor-count weighting
    double exponent = 0.5;        // loss exponent gamma
};

// Per-frame loss: (1/N) sum_i exp(-c_i / c_bar) * ||x_hat_i - x_i||^gamma
inline ad::Var frame_loss(ad::Tape& tape, const ad::Var& pred_x, const Tensor& true_x,
                          const std::vector<std::size_t>& counts, const LossConfig& cfg) {
    const std::size_t n = pred_x->value.rows();
    if (n == 0) return tape.leaf(Tensor::scalar(0.0));
    if (true_x.rows() != n || true_x.cols() != 3 || counts.size() != n)
        throw std::invalid_argument("frame_loss: shape mismatch");
    ad::Var truth = tape.leaf(true_x);
    ad::Var diff = ad::sub(tape, pred_x, truth);
    ad::Var sq = ad::mul(tape, diff, diff);
    Tensor ones3({3, 1}, {1.0, 1.0, 1.0});
    ad::Var dist2 = ad::matmul(tape, sq, tape.leaf(std::move(ones3)));  // [N,1]
    ad::Var dist_pow = ad::pow(tape, dist2, cfg.exponent / 2.0);
    Tensor w({n, 1});
    for (std::size_t i = 0; i < n; ++i)
        w.data[i] = std::exp(-static_cast<double>(counts[i]) / cfg.avg_neighbors);
    ad::Var weighted = ad::mul(tape, dist_pow, tape.leaf(std::move(w)));
    return ad::scale(tape, ad::sum(tape, weighted), 1.0 / static_cast<double>(n));
}

inline double frame_loss_value(const Tensor& pred_x, const Tensor& true_x,
                               const std::vector<std::size_t>& counts, const LossConfig& cfg) {
    ad::Tape tape;
    ad::Var p = tape.leaf(pred_x);
    return frame_loss(tape, p, true_x, counts, cfg)->value.data[0];
}

// One taped simulation step: Heun predictor, network correction, update.
// Gradients flow through positions, velocities, and features.
struct TapedStep {
    ad::Var x_next, v_next;
};

inline TapedStep taped_step(NetCtx& ctx, const FluidFormerNet& net, const ad::Var& x,
                            const ad::Var& v, const Tensor& viscosity_col,
                            const Tensor& bound_pos, const Tensor& bound_feat,
                            const Vec3& gravity, double dt) {
    ad::Tape& t = ctx.tape;
    const std::size_t n = x->value.rows();
    Tensor gdt({n, 3});
    for (std::size_t i = 0; i < n; ++i) {
        gdt.at(i, 0) = gravity.x * dt;
        gdt.at(i, 1) = gravity.y * dt;
        gdt.at(i, 2) = gravity.z * dt;
    }
    ad::Var v_tilde = ad::add(t, v, ctx.constant(std::move(gdt)));
    ad::Var x_tilde = ad::add(t, x, ad::scale(t, ad::add(t, v, v_tilde), dt * 0.5));
    Tensor ones({n, 1});
    for (double& o : ones.data) o = 1.0;
    ad::Var feat = ad::concat_cols(
        t, {ctx.constant(std::move(ones)), v_tilde, ctx.constant(viscosity_col)});
    ad::Var dx = net.forward(ctx, x_tilde, feat, bound_pos, bound_feat);
    TapedStep out;
    out.x_next = ad::add(t, x_tilde, dx);
    // same rule as the simulator: v' = v~ + dx/dt, exact for zero correction
    out.v_next = ad::add(t, v_tilde, ad::scale(t, dx, 1.0 / dt));
    return out;
}

struct TrainingWindow {
    Frame t0, t1, t2;
};

// Two-step composite loss L = L_{t+1} + L_{t+2}, with the t+2 term unrolled from the t+1
// prediction. Neighbor counts for the weighting come from the ground-truth
// target frames.
inline ad::Var composite_loss(NetCtx& ctx, const FluidFormerNet& net, const TrainingWindow& win,
                              const Scene& scene, const LossConfig& cfg) {
    ParticleSystem sys0 = from_frame(win.t0, scene.spacing, scene.viscosity);
    const std::size_t n = sys0.fluid.size();
    Tensor x0({n, 3}), v0({n, 3}), visc({n, 1});
    for (std::size_t i = 0; i < n; ++i) {
        x0.at(i, 0) = sys0.fluid[i].position.x;
        x0.at(i, 1) = sys0.fluid[i].position.y;
        x0.at(i, 2) = sys0.fluid[i].position.z;
        v0.at(i, 0) = sys0.fluid[i].velocity.x;
        v0.at(i, 1) = sys0.fluid[i].velocity.y;
        v0.at(i, 2) = sys0.fluid[i].velocity.z;
        visc.data[i] = sys0.fluid[i].viscosity;
    }
    Tensor bpos({sys0.boundary.size(), 3});
    for (std::size_t i = 0; i < sys0.boundary.size(); ++i) {
        bpos.at(i, 0) = sys0.boundary[i].position.x;
        bpos.at(i, 1) = sys0.boundary[i].position.y;
        bpos.at(i, 2) = sys0.boundary[i].position.z;
    }
    Tensor bfeat = assemble_boundary_features(sys0);

    auto truth_of = [&](const Frame& f) {
        Tensor t({f.fluid_pos.size(), 3});
        for (std::size_t i = 0; i < f.fluid_pos.size(); ++i)
            for (int c = 0; c < 3; ++c) t.at(i, c) = f.fluid_pos[i][c];
        return t;
    };
    auto counts_of = [&](const Frame& f) {
        ParticleSystem s = from_frame(f, scene.spacing, scene.viscosity);
        return count_fluid_neighbors(s, scene.radius);
    };

    ad::Var x = ctx.constant(x0);
    ad::Var v = ctx.constant(v0);
    TapedStep s1 = taped_step(ctx, net, x, v, visc, bpos, bfeat, scene.gravity, scene.dt);
    ad::Var l1 = frame_loss(ctx.tape, s1.x_next, truth_of(win.t1), counts_of(win.t1), cfg);
    TapedStep s2 =
        taped_step(ctx, net, s1.x_next, s1.v_next, visc, bpos, bfeat, scene.gravity, scene.dt);
    ad::Var l2 = frame_loss(ctx.tape, s2.x_next, truth_of(win.t2), counts_of(win.t2), cfg);
    return ad::add(ctx.tape, l1, l2);
}

}  // namespace ff
