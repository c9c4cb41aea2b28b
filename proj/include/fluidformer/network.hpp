#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "fluidformer/fab.hpp"
#include "fluidformer/geometry.hpp"
#include "fluidformer/neighbor.hpp"

namespace ff {

struct NetworkConfig {
    // widths[0] is the embedding width, widths[1..4] the refinement levels.
    std::vector<std::size_t> widths = {24, 48, 48, 24, 24};
    double radius = 0.1;           // neighborhood radius R, meters
    double kappa = 128.0;          // output divisor
    double gamma_fuse = 2.0;
    double position_scale = 0.0;   // 0 -> 1/particle_spacing at forward time
    std::uint64_t seed = 1234;

    void validate() const {
        if (widths.size() != 5) throw std::invalid_argument("NetworkConfig: need 5 widths");
        for (auto w : widths)
            if (w % 24 != 0)
                throw std::invalid_argument(
                    "NetworkConfig: widths must be divisible by 24 (4 heads x head_dim % 6)");
        if (radius <= 0 || kappa <= 0)
            throw std::invalid_argument("NetworkConfig: radius and kappa must be > 0");
    }
};

// The dual-pipeline network: Type-aware Embedding, four refinement levels
// each fusing a CConv path and an ASCC path through a FAB, lagged residuals,
// and the 1/kappa-scaled linear output head.
class FluidFormerNet {
public:
    FluidFormerNet() = default;

    void init(const NetworkConfig& cfg, ParamRegistry& params, double position_scale) {
        cfg.validate();
        cfg_ = cfg;
        cfg_.position_scale = position_scale;
        Rng rng(cfg.seed);
        embedding_.prefix = "embed";
        embedding_.width = cfg.widths[0];
        embedding_.init(params, rng, position_scale, cfg.gamma_fuse);
        for (int l = 1; l <= 4; ++l) {
            std::string lp = "level" + std::to_string(l);
            std::size_t cin = cfg.widths[l - 1], cout = cfg.widths[l];
            Level lvl;
            lvl.psi_cconv = {lp + ".psi_cconv", cin, cout, false};
            lvl.psi_ascc = {lp + ".psi_ascc", cin, cout, true};
            lvl.psi_cconv.init(params, rng);
            lvl.psi_ascc.init(params, rng);
            lvl.fab.prefix = lp + ".fab";
            lvl.fab.width = cout;
            lvl.fab.gamma_fuse = cfg.gamma_fuse;
            lvl.fab.init(params, rng, position_scale);
            // lagged residual from level l-2 (level 0 == embedding output)
            if (l >= 3) {
                std::size_t res_w = cfg.widths[l - 2];
                if (res_w != cout) {
                    lvl.res_proj = {lp + ".res_proj", res_w, cout};
                    lvl.res_proj.init(params, rng);
                    lvl.has_res_proj = true;
                }
            }
            levels_.push_back(lvl);
        }
        Tensor w_out({3, cfg.widths[4]});
        init_uniform_fan_in(w_out, cfg.widths[4], rng);
        params.add("w_out", std::move(w_out));
    }

    const NetworkConfig& config() const { return cfg_; }

    // Predicts per-particle position corrections [N,3] at the intermediate
    // state. fluid_pos/fluid_feat are tape Vars so gradients can flow through
    // multi-step unrolls; boundary state is constant.
    ad::Var forward(NetCtx& ctx, const ad::Var& fluid_pos, const ad::Var& fluid_feat,
                    const Tensor& bound_pos, const Tensor& bound_feat) const {
        const std::size_t n = fluid_pos->value.rows();
        std::vector<Vec3> fpos(n);
        for (std::size_t i = 0; i < n; ++i)
            fpos[i] = {fluid_pos->value.at(i, 0), fluid_pos->value.at(i, 1),
                       fluid_pos->value.at(i, 2)};
        std::vector<Vec3> bpos(bound_pos.rows());
        for (std::size_t i = 0; i < bpos.size(); ++i)
            bpos[i] = {bound_pos.at(i, 0), bound_pos.at(i, 1), bound_pos.at(i, 2)};

        const double R = cfg_.radius;
        SpatialHash fluid_idx(fpos, R);
        auto geo_ff = make_conv_geometry(query_radius(fluid_idx, fpos, R, true), n, R);
        SpatialHash bound_idx(bpos, R);
        auto geo_fb = make_conv_geometry(query_radius(bound_idx, fpos, R, false), bpos.size(), R);

        ad::Var bpos_v = ctx.constant(bound_pos);
        ad::Var bfeat_v = ctx.constant(bound_feat);

        ad::Var f = embedding_.forward(ctx, fluid_pos, fluid_feat, bpos_v, bfeat_v, geo_ff, geo_fb);
        check_finite(f, "embedding");
        std::vector<ad::Var> history = {f};  // history[l] = F^(l)
        for (std::size_t l = 1; l <= 4; ++l) {
            const Level& lvl = levels_[l - 1];
            ad::Var fc = lvl.psi_cconv.forward(ctx, geo_ff, fluid_pos, history[l - 1]);
            ad::Var fa = lvl.psi_ascc.forward(ctx, geo_ff, fluid_pos, history[l - 1]);
            ad::Var fused = lvl.fab.forward(ctx, fc, fa, fluid_pos, geo_ff);
            if (l >= 3) {
                ad::Var res = history[l - 2];
                if (lvl.has_res_proj) res = lvl.res_proj.forward(ctx, res);
                fused = ad::add(ctx.tape, fused, res);
            }
            check_finite(fused, "level" + std::to_string(l));
            history.push_back(fused);
        }
        ad::Var raw = ad::matmul(ctx.tape, history[4], ctx.p("w_out"), /*transpose_b=*/true);
        return ad::scale(ctx.tape, raw, 1.0 / cfg_.kappa);
    }

    // Diagnostic access for the invariant tests: the ASCC path output of a
    // given level before fusion.
    ad::Var ascc_path(NetCtx& ctx, std::size_t level, const ad::Var& fluid_pos,
                      const ad::Var& features, const std::shared_ptr<ConvGeometry>& geo) const {
        return levels_.at(level - 1).psi_ascc.forward(ctx, geo, fluid_pos, features);
    }

private:
    struct Level {
        LocalExtractor psi_cconv;
        LocalExtractor psi_ascc;
        FabBlock fab;
        LinearLayer res_proj;
        bool has_res_proj = false;
    };

    static void check_finite(const ad::Var& v, const std::string& where) {
        if (!v->value.all_finite())
            throw std::runtime_error("network_forward: non-finite values at " + where);
    }

    NetworkConfig cfg_;
    TypeAwareEmbedding embedding_;
    std::vector<Level> levels_;
};

// Convenience wrapper: one forward pass over a particle system snapshot.
inline Tensor network_forward(const FluidFormerNet& net, ParamRegistry& params,
                              const ParticleSystem& sys, bool training = false) {
    ad::Tape tape;
    NetCtx ctx{tape, params, training};
    Tensor fpos({sys.fluid.size(), 3});
    for (std::size_t i = 0; i < sys.fluid.size(); ++i) {
        fpos.at(i, 0) = sys.fluid[i].position.x;
        fpos.at(i, 1) = sys.fluid[i].position.y;
        fpos.at(i, 2) = sys.fluid[i].position.z;
    }
    Tensor bpos({sys.boundary.size(), 3});
    for (std::size_t i = 0; i < sys.boundary.size(); ++i) {
        bpos.at(i, 0) = sys.boundary[i].position.x;
        bpos.at(i, 1) = sys.boundary[i].position.y;
        bpos.at(i, 2) = sys.boundary[i].position.z;
    }
    ad::Var pos_v = ctx.constant(fpos);
    ad::Var feat_v = ctx.constant(assemble_features(sys));
    ad::Var dx = net.forward(ctx, pos_v, feat_v, bpos, assemble_boundary_features(sys));
    return dx->value;
}

}  // namespace ff
