#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "fluidformer/autodiff.hpp"
#include "fluidformer/params.hpp"
#include "fluidformer/random.hpp"

namespace ff {

// 3D rotary position encoding: channels are split into three contiguous
// thirds assigned to the x, y, z axes; each third is a 1D RoPE with per-pair
// frequencies theta_k = base^(-2k / (d/3)).
struct RopeConfig {
    std::size_t head_dim = 6;       // divisible by 6
    double base = 10000.0;
    double position_scale = 1.0;    // 1/meters, applied before angles

    void validate() const {
        if (head_dim == 0 || head_dim % 6 != 0)
            throw std::invalid_argument("RopeConfig: head_dim must be divisible by 6, got " +
                                        std::to_string(head_dim));
    }
    std::size_t axis_dim() const { return head_dim / 3; }
};

inline double rope_angle(std::size_t k, std::size_t d_axis, double base = 10000.0) {
    return std::pow(base, -2.0 * static_cast<double>(k) / static_cast<double>(d_axis));
}

// Plain (untaped) rotation of [N,d] rows by their positions.
inline Tensor apply_rope(const Tensor& vecs, const Tensor& positions, const RopeConfig& cfg) {
    cfg.validate();
    if (vecs.rank() != 2 || vecs.cols() != cfg.head_dim)
        throw std::invalid_argument("apply_rope: vectors must be [N," +
                                    std::to_string(cfg.head_dim) + "]");
    if (positions.rank() != 2 || positions.cols() != 3 || positions.rows() != vecs.rows())
        throw std::invalid_argument("apply_rope: positions must be [N,3]");
    const std::size_t da = cfg.axis_dim();
    Tensor out = vecs;
    for (std::size_t r = 0; r < vecs.rows(); ++r) {
        for (int axis = 0; axis < 3; ++axis) {
            double coord = positions.at(r, axis) * cfg.position_scale;
            for (std::size_t k = 0; k < da / 2; ++k) {
                double phi = coord * rope_angle(k, da, cfg.base);
                double c = std::cos(phi), s = std::sin(phi);
                std::size_t j = axis * da + 2 * k;
                double x1 = vecs.at(r, j), x2 = vecs.at(r, j + 1);
                out.at(r, j) = c * x1 - s * x2;
                out.at(r, j + 1) = s * x1 + c * x2;
            }
        }
    }
    return out;
}

// Taped RoPE; differentiable w.r.t. both the vectors and the positions.
inline ad::Var rope_op(ad::Tape& tape, const ad::Var& vecs, const ad::Var& positions,
                       RopeConfig cfg) {
    Tensor out = apply_rope(vecs->value, positions->value, cfg);
    return tape.record(std::move(out), {vecs, positions}, [cfg](ad::Node& n) {
        ad::Node& vn = *n.inputs[0];
        ad::Node& pn = *n.inputs[1];
        const std::size_t da = cfg.axis_dim();
        const std::size_t d = cfg.head_dim;
        if (vn.requires_grad) vn.ensure_grad();
        if (pn.requires_grad) pn.ensure_grad();
        for (std::size_t r = 0; r < vn.value.rows(); ++r) {
            for (int axis = 0; axis < 3; ++axis) {
                double coord = pn.value.at(r, axis) * cfg.position_scale;
                double dphi_total = 0.0;
                for (std::size_t k = 0; k < da / 2; ++k) {
                    double theta = rope_angle(k, da, cfg.base);
                    double phi = coord * theta;
                    double c = std::cos(phi), s = std::sin(phi);
                    std::size_t j = axis * da + 2 * k;
                    double g1 = n.grad[r * d + j], g2 = n.grad[r * d + j + 1];
                    double x1 = vn.value.at(r, j), x2 = vn.value.at(r, j + 1);
                    if (vn.requires_grad) {
                        // inverse rotation of the output gradient
                        vn.grad[r * d + j] += c * g1 + s * g2;
                        vn.grad[r * d + j + 1] += -s * g1 + c * g2;
                    }
                    if (pn.requires_grad)
                        dphi_total += theta * (g1 * (-s * x1 - c * x2) + g2 * (c * x1 - s * x2));
                }
                if (pn.requires_grad)
                    pn.grad[r * 3 + axis] += dphi_total * cfg.position_scale;
            }
        }
    });
}

// Reference attention: RoPE on Q and K, dense N x N scores,
// row softmax, weighted V sum. float64 throughout.
inline Tensor attention_naive(const Tensor& Q, const Tensor& K, const Tensor& V,
                              const Tensor& positions, const RopeConfig& cfg) {
    const std::size_t n = Q.rows(), d = Q.cols();
    if (K.rows() != n || V.rows() != n || K.cols() != d)
        throw std::invalid_argument("attention_naive: shape mismatch");
    Tensor Qr = apply_rope(Q, positions, cfg);
    Tensor Kr = apply_rope(K, positions, cfg);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    Tensor out({n, V.cols()});
    std::vector<double> scores(n);
    for (std::size_t i = 0; i < n; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) s += Qr.at(i, c) * Kr.at(j, c);
            scores[j] = s * inv_sqrt_d;
            mx = std::max(mx, scores[j]);
        }
        double denom = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            scores[j] = std::exp(scores[j] - mx);
            denom += scores[j];
        }
        for (std::size_t j = 0; j < n; ++j) {
            double p = scores[j] / denom;
            for (std::size_t c = 0; c < V.cols(); ++c) out.at(i, c) += p * V.at(j, c);
        }
    }
    return out;
}

// Streaming-softmax attention over key tiles with a running max and
// normalizer; never materializes the N x N score matrix. Exactly equal to
// attention_naive up to floating-point rounding.
inline Tensor attention_tiled(const Tensor& Q, const Tensor& K, const Tensor& V,
                              const Tensor& positions, const RopeConfig& cfg, std::size_t tile) {
    if (tile == 0) throw std::invalid_argument("attention_tiled: tile must be >= 1");
    const std::size_t n = Q.rows(), d = Q.cols();
    if (K.rows() != n || V.rows() != n || K.cols() != d)
        throw std::invalid_argument("attention_tiled: shape mismatch");
    Tensor Qr = apply_rope(Q, positions, cfg);
    Tensor Kr = apply_rope(K, positions, cfg);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    const std::size_t dv = V.cols();
    Tensor out({n, dv});
    std::vector<double> acc(dv), s_tile(tile);
    for (std::size_t i = 0; i < n; ++i) {
        double m = -std::numeric_limits<double>::infinity();
        double l = 0.0;
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t j0 = 0; j0 < n; j0 += tile) {
            std::size_t j1 = std::min(j0 + tile, n);
            double m_tile = -std::numeric_limits<double>::infinity();
            for (std::size_t j = j0; j < j1; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < d; ++c) s += Qr.at(i, c) * Kr.at(j, c);
                s_tile[j - j0] = s * inv_sqrt_d;
                m_tile = std::max(m_tile, s_tile[j - j0]);
            }
            double m_new = std::max(m, m_tile);
            double corr = l > 0.0 ? std::exp(m - m_new) : 0.0;
            l *= corr;
            for (double& a : acc) a *= corr;
            for (std::size_t j = j0; j < j1; ++j) {
                double p = std::exp(s_tile[j - j0] - m_new);
                l += p;
                for (std::size_t c = 0; c < dv; ++c) acc[c] += p * V.at(j, c);
            }
            m = m_new;
        }
        for (std::size_t c = 0; c < dv; ++c) out.at(i, c) = acc[c] / l;
    }
    return out;
}

// Multi-head self-attention with per-head 3D rotary position encoding.
struct AttentionLayer {
    std::string prefix;
    std::size_t model_dim = 24;
    std::size_t heads = 4;
    RopeConfig rope;

    std::size_t head_dim() const { return model_dim / heads; }

    void init(ParamRegistry& params, Rng& rng) {
        if (model_dim % heads != 0)
            throw std::invalid_argument("AttentionLayer: model_dim must be divisible by heads");
        RopeConfig check = rope;
        check.head_dim = head_dim();
        check.validate();
        for (std::size_t m = 0; m < heads; ++m) {
            for (const char* w : {"wq", "wk", "wv"}) {
                Tensor t({model_dim, head_dim()});
                init_uniform_fan_in(t, model_dim, rng);
                params.add(prefix + ".h" + std::to_string(m) + "." + w, std::move(t));
            }
        }
        Tensor wo({model_dim, model_dim});
        init_uniform_fan_in(wo, model_dim, rng);
        params.add(prefix + ".wo", std::move(wo));
    }

    ad::Var forward(NetCtx& ctx, const ad::Var& features, const ad::Var& positions) const {
        if (features->value.cols() != model_dim)
            throw std::invalid_argument("mha_forward: feature width " +
                                        std::to_string(features->value.cols()) +
                                        " != model_dim " + std::to_string(model_dim));
        RopeConfig cfg = rope;
        cfg.head_dim = head_dim();
        const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(head_dim()));
        std::vector<ad::Var> head_outs;
        for (std::size_t m = 0; m < heads; ++m) {
            std::string h = prefix + ".h" + std::to_string(m) + ".";
            ad::Var q = ad::matmul(ctx.tape, features, ctx.p(h + "wq"));
            ad::Var k = ad::matmul(ctx.tape, features, ctx.p(h + "wk"));
            ad::Var v = ad::matmul(ctx.tape, features, ctx.p(h + "wv"));
            ad::Var qr = rope_op(ctx.tape, q, positions, cfg);
            ad::Var kr = rope_op(ctx.tape, k, positions, cfg);
            ad::Var scores = ad::scale(ctx.tape, ad::matmul(ctx.tape, qr, kr, true), inv_sqrt_d);
            ad::Var probs = ad::softmax_lastdim(ctx.tape, scores);
            head_outs.push_back(ad::matmul(ctx.tape, probs, v));
        }
        ad::Var cat = heads == 1 ? head_outs[0] : ad::concat_cols(ctx.tape, head_outs);
        return ad::matmul(ctx.tape, cat, ctx.p(prefix + ".wo"));
    }
};

}  // namespace ff
