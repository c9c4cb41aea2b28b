#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "fluidformer/autodiff.hpp"
#include "fluidformer/cconv.hpp"
#include "fluidformer/params.hpp"
#include "fluidformer/random.hpp"
#include "fluidformer/rope.hpp"

namespace ff {

// Batch norm where the particle set is the batch: training mode normalizes
// with batch statistics, inference mode uses running stats (momentum 0.9).
struct BNLayer {
    std::string prefix;
    std::size_t channels = 0;
    static constexpr double kMomentum = 0.9;
    static constexpr double kEps = 1e-5;

    void init(ParamRegistry& params) const {
        Tensor gamma({channels});
        for (double& v : gamma.data) v = 1.0;
        params.add(prefix + ".gamma", std::move(gamma));
        params.add(prefix + ".beta", Tensor({channels}));
        Tensor rv({channels});
        for (double& v : rv.data) v = 1.0;
        params.add(prefix + ".run_mean", Tensor({channels}), /*learnable=*/false);
        params.add(prefix + ".run_var", std::move(rv), /*learnable=*/false);
    }

    ad::Var forward(NetCtx& ctx, const ad::Var& x) const {
        ad::Var y;
        const std::size_t n = x->value.rows();
        if (ctx.training || n < 2) {
            y = ad::batch_stat_norm(ctx.tape, x);
            if (ctx.training && n >= 2) update_running_stats(ctx.params, x->value);
        } else {
            const Tensor& rm = ctx.params.get(prefix + ".run_mean");
            const Tensor& rv = ctx.params.get(prefix + ".run_var");
            Tensor neg_mean({channels}), inv_std({channels});
            for (std::size_t j = 0; j < channels; ++j) {
                neg_mean.data[j] = -rm.data[j];
                inv_std.data[j] = 1.0 / std::sqrt(rv.data[j] + kEps);
            }
            y = ad::add_rowvec(ctx.tape, x, ctx.constant(std::move(neg_mean)));
            y = ad::mul_rowvec(ctx.tape, y, ctx.constant(std::move(inv_std)));
        }
        y = ad::mul_rowvec(ctx.tape, y, ctx.p(prefix + ".gamma"));
        return ad::add_rowvec(ctx.tape, y, ctx.p(prefix + ".beta"));
    }

private:
    void update_running_stats(ParamRegistry& params, const Tensor& x) const {
        Tensor& rm = params.get(prefix + ".run_mean");
        Tensor& rv = params.get(prefix + ".run_var");
        std::size_t n = x.rows();
        for (std::size_t j = 0; j < channels; ++j) {
            double mu = 0.0;
            for (std::size_t r = 0; r < n; ++r) mu += x.at(r, j);
            mu /= static_cast<double>(n);
            double var = 0.0;
            for (std::size_t r = 0; r < n; ++r) {
                double d = x.at(r, j) - mu;
                var += d * d;
            }
            var /= static_cast<double>(n);
            rm.data[j] = kMomentum * rm.data[j] + (1.0 - kMomentum) * mu;
            rv.data[j] = kMomentum * rv.data[j] + (1.0 - kMomentum) * var;
        }
    }
};

struct LinearLayer {
    std::string prefix;
    std::size_t in = 0, out = 0;

    void init(ParamRegistry& params, Rng& rng) const {
        Tensor w({in, out});
        init_uniform_fan_in(w, in, rng);
        params.add(prefix + ".w", std::move(w));
        params.add(prefix + ".b", Tensor({out}));
    }

    ad::Var forward(NetCtx& ctx, const ad::Var& x) const {
        return ad::add_rowvec(ctx.tape, ad::matmul(ctx.tape, x, ctx.p(prefix + ".w")),
                              ctx.p(prefix + ".b"));
    }
};

// Local feature cascade: BN(CConv(ReLU(BN(CConv(F))))). The ASCC variant ends on the
// convolution itself so its output keeps the exact zero-sum property.
struct LocalExtractor {
    std::string prefix;
    std::size_t cin = 0, cout = 0;
    bool use_ascc = false;

    CConvLayer conv1c, conv2c;
    ASCCLayer conv1a, conv2a;
    BNLayer bn1, bn2;

    void init(ParamRegistry& params, Rng& rng) {
        if (use_ascc) {
            conv1a = {prefix + ".conv1", cin, cout};
            conv2a = {prefix + ".conv2", cout, cout};
            conv1a.init(params, rng);
            conv2a.init(params, rng);
            bn1 = {prefix + ".bn1", cout};
            bn1.init(params);
        } else {
            conv1c = {prefix + ".conv1", cin, cout, true};
            conv2c = {prefix + ".conv2", cout, cout, true};
            conv1c.init(params, rng);
            conv2c.init(params, rng);
            bn1 = {prefix + ".bn1", cout};
            bn2 = {prefix + ".bn2", cout};
            bn1.init(params);
            bn2.init(params);
        }
    }

    ad::Var forward(NetCtx& ctx, const std::shared_ptr<ConvGeometry>& geo, const ad::Var& pos,
                    const ad::Var& x) const {
        if (use_ascc) {
            ad::Var h = conv1a.forward(ctx, geo, pos, x, pos, x);
            h = ad::relu(ctx.tape, bn1.forward(ctx, h));
            return conv2a.forward(ctx, geo, pos, h, pos, h);
        }
        ad::Var h = conv1c.forward(ctx, geo, pos, x, pos, x);
        h = ad::relu(ctx.tape, bn1.forward(ctx, h));
        h = conv2c.forward(ctx, geo, pos, h, pos, h);
        return bn2.forward(ctx, h);
    }
};

// Projection -> RoPE multi-head attention -> projection, with an input
// residual. Operates on fluid particles only.
struct GlobalExtractor {
    std::string prefix;
    std::size_t width = 24;
    LinearLayer pre, post;
    AttentionLayer attn;

    void init(ParamRegistry& params, Rng& rng, double position_scale) {
        pre = {prefix + ".pre", width, width};
        post = {prefix + ".post", width, width};
        attn.prefix = prefix + ".attn";
        attn.model_dim = width;
        attn.heads = 4;
        attn.rope.position_scale = position_scale;
        pre.init(params, rng);
        post.init(params, rng);
        attn.init(params, rng);
    }

    ad::Var forward(NetCtx& ctx, const ad::Var& x, const ad::Var& positions) const {
        ad::Var h = pre.forward(ctx, x);
        h = attn.forward(ctx, h, positions);
        h = post.forward(ctx, h);
        return ad::add(ctx.tape, h, x);
    }
};

// Fluid attention block: per-branch Local+Global towers, fused
// by addition, sigmoid gate, gamma-scaled convex combination of the inputs.
struct FabBlock {
    std::string prefix;
    std::size_t width = 24;
    double gamma_fuse = 2.0;

    LocalExtractor local_x, local_y;
    GlobalExtractor global_x, global_y;

    void init(ParamRegistry& params, Rng& rng, double position_scale) {
        local_x = {prefix + ".local_x", width, width, false};
        local_y = {prefix + ".local_y", width, width, false};
        local_x.init(params, rng);
        local_y.init(params, rng);
        global_x.prefix = prefix + ".global_x";
        global_y.prefix = prefix + ".global_y";
        global_x.width = global_y.width = width;
        global_x.init(params, rng, position_scale);
        global_y.init(params, rng, position_scale);
    }

    ad::Var forward(NetCtx& ctx, const ad::Var& fx, const ad::Var& fy, const ad::Var& positions,
                    const std::shared_ptr<ConvGeometry>& geo) const {
        if (!fx->value.same_shape(fy->value))
            throw std::invalid_argument("fab_forward: branch shapes differ: " +
                                        shape_str(fx->value.shape) + " vs " +
                                        shape_str(fy->value.shape));
        ad::Var fused = ad::add(ctx.tape, global_x.forward(ctx, local_x.forward(ctx, geo, positions, fx), positions),
                                global_y.forward(ctx, local_y.forward(ctx, geo, positions, fy), positions));
        ad::Var gate = ad::sigmoid(ctx.tape, fused);
        Tensor ones(fx->value.shape);
        for (double& v : ones.data) v = 1.0;
        ad::Var inv_gate = ad::sub(ctx.tape, ctx.constant(std::move(ones)), gate);
        ad::Var mixed = ad::add(ctx.tape, ad::mul(ctx.tape, fx, gate), ad::mul(ctx.tape, fy, inv_gate));
        return ad::scale(ctx.tape, mixed, gamma_fuse);
    }
};

// Two-stage iterative FAB with unshared stage weights.
struct IFabBlock {
    std::string prefix;
    std::size_t width = 24;
    FabBlock stage1, stage2;

    void init(ParamRegistry& params, Rng& rng, double position_scale, double gamma_fuse) {
        stage1.prefix = prefix + ".stage1";
        stage2.prefix = prefix + ".stage2";
        stage1.width = stage2.width = width;
        stage1.gamma_fuse = stage2.gamma_fuse = gamma_fuse;
        stage1.init(params, rng, position_scale);
        stage2.init(params, rng, position_scale);
    }

    ad::Var forward(NetCtx& ctx, const ad::Var& f_fluid, const ad::Var& f_bound,
                    const ad::Var& positions, const std::shared_ptr<ConvGeometry>& geo) const {
        ad::Var f1 = stage1.forward(ctx, f_fluid, f_bound, positions, geo);
        return stage2.forward(ctx, f1, f_bound, positions, geo);
    }
};

// Type-aware Embedding: independent CConvs lift fluid features and boundary
// normals onto the fluid particles, then i-FAB couples the two types.
struct TypeAwareEmbedding {
    std::string prefix;
    std::size_t width = 24;
    CConvLayer conv_fluid;   // fluid features over fluid neighbors, self path
    CConvLayer conv_bound;   // boundary [1,n] features queried at fluid positions
    IFabBlock ifab;

    void init(ParamRegistry& params, Rng& rng, double position_scale, double gamma_fuse) {
        conv_fluid = {prefix + ".conv_fluid", 5, width, true};
        conv_bound = {prefix + ".conv_bound", 4, width, false};
        conv_fluid.init(params, rng);
        conv_bound.init(params, rng);
        ifab.prefix = prefix + ".ifab";
        ifab.width = width;
        ifab.init(params, rng, position_scale, gamma_fuse);
    }

    ad::Var forward(NetCtx& ctx, const ad::Var& fluid_pos, const ad::Var& fluid_feat,
                    const ad::Var& bound_pos, const ad::Var& bound_feat,
                    const std::shared_ptr<ConvGeometry>& geo_ff,
                    const std::shared_ptr<ConvGeometry>& geo_fb) const {
        ad::Var f_fluid =
            conv_fluid.forward(ctx, geo_ff, fluid_pos, fluid_feat, fluid_pos, fluid_feat);
        ad::Var f_bound =
            conv_bound.forward(ctx, geo_fb, fluid_pos, nullptr, bound_pos, bound_feat);
        return ifab.forward(ctx, f_fluid, f_bound, fluid_pos, geo_ff);
    }
};

}  // namespace ff
