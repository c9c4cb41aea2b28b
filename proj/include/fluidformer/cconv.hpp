#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

#include "fluidformer/autodiff.hpp"
#include "fluidformer/geometry.hpp"
#include "fluidformer/neighbor.hpp"
#include "fluidformer/params.hpp"
#include "fluidformer/random.hpp"

namespace ff {

// Kernel grid resolution. Even, so the ASCC mirroring is well defined.
constexpr int kKernelRes = 4;

// Smooth compactly supported window: a = (1 - |d|^2/R^2)^3, clamped to 0.
inline double window(const Vec3& d, double R) {
    double q = d.norm2() / (R * R);
    if (q >= 1.0) return 0.0;
    double w = 1.0 - q;
    return w * w * w;
}

// d(window)/dd
inline Vec3 window_grad(const Vec3& d, double R) {
    double q = d.norm2() / (R * R);
    if (q >= 1.0) return {0, 0, 0};
    double w = 1.0 - q;
    double c = 3.0 * w * w * (-2.0 / (R * R));
    return d * c;
}

// Radius-preserving ball-to-cube map: u = (d/R) * (|d/R|_2 / |d/R|_inf).
// Odd (lambda(-d) = -lambda(d)) and maps the ball surface to the cube surface.
inline Vec3 lambda_map(const Vec3& d, double R) {
    double n2 = d.norm();
    if (n2 > R * (1.0 + 1e-9))
        throw std::invalid_argument("lambda_map: displacement exceeds radius");
    if (n2 == 0.0) return {0, 0, 0};
    double ninf = std::max({std::abs(d.x), std::abs(d.y), std::abs(d.z)});
    double scale = n2 / (ninf * R);
    return d * scale;
}

// du/dd, row-major 3x3. Zero at d = 0 (the map has no linearization there).
inline void lambda_jacobian(const Vec3& d, double R, double J[3][3]) {
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) J[a][b] = 0.0;
    double n2 = d.norm();
    if (n2 == 0.0) return;
    double comp[3] = {d.x, d.y, d.z};
    int m = 0;
    for (int a = 1; a < 3; ++a)
        if (std::abs(comp[a]) > std::abs(comp[m])) m = a;
    double ninf = std::abs(comp[m]);
    double sgn = comp[m] >= 0 ? 1.0 : -1.0;
    double r = n2 / ninf;  // u = d * r / R
    for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) {
            double dr_db = comp[b] / (n2 * ninf);
            if (b == m) dr_db -= n2 * sgn / (ninf * ninf);
            J[a][b] = comp[a] * dr_db / R;
            if (a == b) J[a][b] += r / R;
        }
    }
}

// Trilinear stencil of the K^3 kernel grid (nodes spanning [-1,1] per axis)
// evaluated at a mapped coordinate u.
struct TriStencil {
    int cell[8];     // flattened node index (a*K + b)*K + c
    double w[8];     // trilinear weights
    int base[3];     // lower node per axis
    double t[3];     // fractional coordinate per axis
};

inline TriStencil trilinear_stencil(const Vec3& u) {
    constexpr int K = kKernelRes;
    TriStencil st;
    double uu[3] = {u.x, u.y, u.z};
    for (int a = 0; a < 3; ++a) {
        double p = (uu[a] + 1.0) * 0.5 * (K - 1);
        p = std::clamp(p, 0.0, double(K - 1));
        int i0 = std::min(static_cast<int>(std::floor(p)), K - 2);
        st.base[a] = i0;
        st.t[a] = p - i0;
    }
    int idx = 0;
    for (int da = 0; da < 2; ++da)
        for (int db = 0; db < 2; ++db)
            for (int dc = 0; dc < 2; ++dc) {
                int a = st.base[0] + da, b = st.base[1] + db, c = st.base[2] + dc;
                st.cell[idx] = (a * K + b) * K + c;
                st.w[idx] = (da ? st.t[0] : 1.0 - st.t[0]) * (db ? st.t[1] : 1.0 - st.t[1]) *
                            (dc ? st.t[2] : 1.0 - st.t[2]);
                ++idx;
            }
    return st;
}

// dw_corner/du for each of the 8 corners; dp/du = (K-1)/2 per axis.
inline void trilinear_weight_grads(const TriStencil& st, double dw_du[8][3]) {
    constexpr int K = kKernelRes;
    const double dp = 0.5 * (K - 1);
    int idx = 0;
    for (int da = 0; da < 2; ++da)
        for (int db = 0; db < 2; ++db)
            for (int dc = 0; dc < 2; ++dc) {
                double f[3] = {da ? st.t[0] : 1.0 - st.t[0], db ? st.t[1] : 1.0 - st.t[1],
                               dc ? st.t[2] : 1.0 - st.t[2]};
                double s[3] = {da ? 1.0 : -1.0, db ? 1.0 : -1.0, dc ? 1.0 : -1.0};
                dw_du[idx][0] = s[0] * f[1] * f[2] * dp;
                dw_du[idx][1] = f[0] * s[1] * f[2] * dp;
                dw_du[idx][2] = f[0] * f[1] * s[2] * dp;
                ++idx;
            }
}

// Precomputed per-pair interpolation data for one (neighbor list, radius).
// Shared between every conv layer that runs over the same adjacency.
struct ConvGeometry {
    struct Pair {
        std::size_t query, src;
        Vec3 disp;  // x_src - x_query
        double a;   // window value
        TriStencil st;
    };
    std::size_t n_queries = 0;
    std::size_t n_sources = 0;
    double radius = 0.0;
    std::vector<Pair> pairs;
};

inline std::shared_ptr<ConvGeometry> make_conv_geometry(const NeighborList& nl,
                                                        std::size_t n_sources, double R) {
    auto geo = std::make_shared<ConvGeometry>();
    geo->n_queries = nl.queries();
    geo->n_sources = n_sources;
    geo->radius = R;
    geo->pairs.reserve(nl.pairs());
    for (std::size_t q = 0; q < nl.queries(); ++q) {
        for (std::size_t k = nl.offsets[q]; k < nl.offsets[q + 1]; ++k) {
            ConvGeometry::Pair pr;
            pr.query = q;
            pr.src = nl.ids[k];
            pr.disp = nl.displacements[k];
            pr.a = window(pr.disp, R);
            pr.st = trilinear_stencil(lambda_map(pr.disp, R));
            geo->pairs.push_back(pr);
        }
    }
    return geo;
}

namespace detail {

// Scatters per-pair weighted features into the dense [Nq, cells*Cin]
// accumulator so the kernel contraction becomes one GEMM.
inline void scatter_acc(const ConvGeometry& geo, const Tensor& src_feat,
                        const Tensor* query_feat, std::vector<double>& acc, std::size_t cin) {
    constexpr int cells = kKernelRes * kKernelRes * kKernelRes;
    acc.assign(geo.n_queries * cells * cin, 0.0);
    for (const auto& pr : geo.pairs) {
        const double* fs = &src_feat.data[pr.src * cin];
        const double* fq = query_feat ? &query_feat->data[pr.query * cin] : nullptr;
        double* row = &acc[pr.query * cells * cin];
        for (int c = 0; c < 8; ++c) {
            double coef = pr.a * pr.st.w[c];
            if (coef == 0.0) continue;
            double* dst = row + static_cast<std::size_t>(pr.st.cell[c]) * cin;
            if (fq)
                for (std::size_t j = 0; j < cin; ++j) dst[j] += coef * (fs[j] + fq[j]);
            else
                for (std::size_t j = 0; j < cin; ++j) dst[j] += coef * fs[j];
        }
    }
}

}  // namespace detail

// Shared neighbor summation of both convolution variants:
//   out[q] = sum_pairs a * f_pair^T G(lambda(disp))
// where f_pair = f_src (CConv) or f_query + f_src (ASCC, pass query_feat).
// Differentiable w.r.t. kernel, features, and both position sets.
inline ad::Var conv_neighbor_sum(ad::Tape& tape, const ad::Var& kernel, const ad::Var& src_feat,
                                 const ad::Var& query_pos, const ad::Var& src_pos,
                                 std::shared_ptr<ConvGeometry> geo,
                                 const ad::Var& query_feat = nullptr) {
    constexpr int cells = kKernelRes * kKernelRes * kKernelRes;
    const Tensor& Kt = kernel->value;
    if (Kt.rank() != 5 || Kt.shape[0] != kKernelRes || Kt.shape[1] != kKernelRes ||
        Kt.shape[2] != kKernelRes)
        throw std::invalid_argument("conv_neighbor_sum: kernel must be [K,K,K,Cin,Cout]");
    const std::size_t cin = Kt.shape[3];
    const std::size_t cout = Kt.shape[4];
    if (src_feat->value.rank() != 2 || src_feat->value.cols() != cin)
        throw std::invalid_argument("conv_neighbor_sum: feature width mismatch, kernel Cin=" +
                                    std::to_string(cin) + " features " +
                                    shape_str(src_feat->value.shape));
    const std::size_t nq = geo->n_queries;

    std::vector<double> acc;
    detail::scatter_acc(*geo, src_feat->value, query_feat ? &query_feat->value : nullptr, acc,
                        cin);
    Tensor out({nq, cout});
    {
        ad::MatC A(acc.data(), static_cast<Eigen::Index>(nq),
                   static_cast<Eigen::Index>(cells * cin));
        ad::MatC Km(Kt.data.data(), cells * cin, static_cast<Eigen::Index>(cout));
        auto O = ad::as_mat_mut(out.data, nq, cout);
        O = A * Km;
    }

    std::vector<ad::Var> inputs = {kernel, src_feat, query_pos, src_pos};
    bool ascc = static_cast<bool>(query_feat);
    if (ascc) inputs.push_back(query_feat);

    return tape.record(std::move(out), std::move(inputs), [geo, cin, cout, ascc](ad::Node& n) {
        constexpr int cells = kKernelRes * kKernelRes * kKernelRes;
        ad::Node& kn = *n.inputs[0];
        ad::Node& fn = *n.inputs[1];
        ad::Node& qp = *n.inputs[2];
        ad::Node& sp = *n.inputs[3];
        ad::Node* qf = ascc ? n.inputs[4].get() : nullptr;
        const std::size_t nq = geo->n_queries;
        const double R = geo->radius;

        // dK = acc^T * gout  (acc recomputed; cheap relative to the GEMMs)
        std::vector<double> acc;
        detail::scatter_acc(*geo, fn.value, qf ? &qf->value : nullptr, acc, cin);
        if (kn.requires_grad) {
            kn.ensure_grad();
            ad::MatC A(acc.data(), static_cast<Eigen::Index>(nq),
                       static_cast<Eigen::Index>(cells * cin));
            ad::MatC G(n.grad.data(), static_cast<Eigen::Index>(nq),
                       static_cast<Eigen::Index>(cout));
            auto GK = ad::as_mat_mut(kn.grad, cells * cin, cout);
            GK += A.transpose() * G;
        }

        bool need_feat = fn.requires_grad || (qf && qf->requires_grad);
        bool need_pos = qp.requires_grad || sp.requires_grad;
        if (!need_feat && !need_pos) return;

        // dacc = gout * K^T
        std::vector<double> dacc(nq * cells * cin, 0.0);
        {
            ad::MatC G(n.grad.data(), static_cast<Eigen::Index>(nq),
                       static_cast<Eigen::Index>(cout));
            ad::MatC Km(kn.value.data.data(), cells * cin, static_cast<Eigen::Index>(cout));
            auto DA = ad::as_mat_mut(dacc, nq, cells * cin);
            DA = G * Km.transpose();
        }
        if (fn.requires_grad) fn.ensure_grad();
        if (qf && qf->requires_grad) qf->ensure_grad();
        if (qp.requires_grad) qp.ensure_grad();
        if (sp.requires_grad) sp.ensure_grad();

        for (const auto& pr : geo->pairs) {
            const double* drow = &dacc[pr.query * cells * cin];
            const double* fs = &fn.value.data[pr.src * cin];
            const double* fq = qf ? &qf->value.data[pr.query * cin] : nullptr;

            if (need_feat) {
                for (int c = 0; c < 8; ++c) {
                    double coef = pr.a * pr.st.w[c];
                    if (coef == 0.0) continue;
                    const double* d = drow + static_cast<std::size_t>(pr.st.cell[c]) * cin;
                    if (fn.requires_grad)
                        for (std::size_t j = 0; j < cin; ++j)
                            fn.grad[pr.src * cin + j] += coef * d[j];
                    if (qf && qf->requires_grad)
                        for (std::size_t j = 0; j < cin; ++j)
                            qf->grad[pr.query * cin + j] += coef * d[j];
                }
            }
            if (need_pos) {
                // s_c = f_pair . dacc[q, cell_c]
                double s[8];
                for (int c = 0; c < 8; ++c) {
                    const double* d = drow + static_cast<std::size_t>(pr.st.cell[c]) * cin;
                    double dot = 0.0;
                    if (fq)
                        for (std::size_t j = 0; j < cin; ++j) dot += (fs[j] + fq[j]) * d[j];
                    else
                        for (std::size_t j = 0; j < cin; ++j) dot += fs[j] * d[j];
                    s[c] = dot;
                }
                Vec3 aw = window_grad(pr.disp, R);
                double J[3][3];
                lambda_jacobian(pr.disp, R, J);
                double dw_du[8][3];
                trilinear_weight_grads(pr.st, dw_du);
                Vec3 dd{0, 0, 0};
                for (int c = 0; c < 8; ++c) {
                    if (s[c] == 0.0) continue;
                    dd += aw * (pr.st.w[c] * s[c]);
                    // a * dw/dd = a * (dw/du) J
                    double gu[3] = {dw_du[c][0], dw_du[c][1], dw_du[c][2]};
                    Vec3 wd{gu[0] * J[0][0] + gu[1] * J[1][0] + gu[2] * J[2][0],
                            gu[0] * J[0][1] + gu[1] * J[1][1] + gu[2] * J[2][1],
                            gu[0] * J[0][2] + gu[1] * J[1][2] + gu[2] * J[2][2]};
                    dd += wd * (pr.a * s[c]);
                }
                if (sp.requires_grad) {
                    sp.grad[pr.src * 3 + 0] += dd.x;
                    sp.grad[pr.src * 3 + 1] += dd.y;
                    sp.grad[pr.src * 3 + 2] += dd.z;
                }
                if (qp.requires_grad) {
                    qp.grad[pr.query * 3 + 0] -= dd.x;
                    qp.grad[pr.query * 3 + 1] -= dd.y;
                    qp.grad[pr.query * 3 + 2] -= dd.z;
                }
            }
        }
    });
}

// Materializes the point-antisymmetric kernel from its learnable half:
// g_s[K-1-a, K-1-b, K-1-c] = -g_s[a, b, c].
inline ad::Var mirror_antisym_kernel(ad::Tape& tape, const ad::Var& half) {
    constexpr int K = kKernelRes;
    const Tensor& H = half->value;
    if (H.rank() != 5 || H.shape[0] != K / 2 || H.shape[1] != K || H.shape[2] != K)
        throw std::invalid_argument("mirror_antisym_kernel: half kernel must be [K/2,K,K,Cin,Cout]");
    const std::size_t cin = H.shape[3], cout = H.shape[4];
    const std::size_t chan = cin * cout;
    Tensor full({static_cast<std::size_t>(K), static_cast<std::size_t>(K),
                 static_cast<std::size_t>(K), cin, cout});
    auto cell_off = [&](int a, int b, int c) {
        return (static_cast<std::size_t>(a) * K + b) * K * chan + static_cast<std::size_t>(c) * chan;
    };
    for (int a = 0; a < K / 2; ++a)
        for (int b = 0; b < K; ++b)
            for (int c = 0; c < K; ++c) {
                const double* src = &H.data[cell_off(a, b, c)];
                double* dst = &full.data[cell_off(a, b, c)];
                double* mir = &full.data[cell_off(K - 1 - a, K - 1 - b, K - 1 - c)];
                for (std::size_t j = 0; j < chan; ++j) {
                    dst[j] = src[j];
                    mir[j] = -src[j];
                }
            }
    return tape.record(std::move(full), {half}, [cin, cout](ad::Node& n) {
        constexpr int K = kKernelRes;
        const std::size_t chan = cin * cout;
        ad::Node& hn = *n.inputs[0];
        hn.ensure_grad();
        auto cell_off = [&](int a, int b, int c) {
            return (static_cast<std::size_t>(a) * K + b) * K * chan +
                   static_cast<std::size_t>(c) * chan;
        };
        for (int a = 0; a < K / 2; ++a)
            for (int b = 0; b < K; ++b)
                for (int c = 0; c < K; ++c) {
                    double* dst = &hn.grad[cell_off(a, b, c)];
                    const double* g = &n.grad[cell_off(a, b, c)];
                    const double* gm = &n.grad[cell_off(K - 1 - a, K - 1 - b, K - 1 - c)];
                    for (std::size_t j = 0; j < chan; ++j) dst[j] += g[j] - gm[j];
                }
    });
}

// Continuous convolution layer with an optional dense self-weight
// path applied to the query's own features.
struct CConvLayer {
    std::string prefix;
    std::size_t cin = 0, cout = 0;
    bool with_self = true;

    void init(ParamRegistry& params, Rng& rng) {
        Tensor k({kKernelRes, kKernelRes, kKernelRes, cin, cout});
        init_uniform_fan_in(k, cin, rng);
        params.add(prefix + ".kernel", std::move(k));
        if (with_self) {
            Tensor w({cin, cout});
            init_uniform_fan_in(w, cin, rng);
            params.add(prefix + ".self", std::move(w));
        }
    }

    ad::Var forward(NetCtx& ctx, const std::shared_ptr<ConvGeometry>& geo,
                    const ad::Var& query_pos, const ad::Var& query_feat, const ad::Var& src_pos,
                    const ad::Var& src_feat) const {
        ad::Var out = conv_neighbor_sum(ctx.tape, ctx.p(prefix + ".kernel"), src_feat, query_pos,
                                        src_pos, geo);
        if (with_self)
            out = ad::add(ctx.tape, out,
                          ad::matmul(ctx.tape, query_feat, ctx.p(prefix + ".self")));
        return out;
    }
};

// Antisymmetric continuous convolution: shares the neighbor-sum
// machinery but sums (f_query + f_src) against the mirrored kernel. No self
// path: g_s(0) = 0 by antisymmetry.
struct ASCCLayer {
    std::string prefix;
    std::size_t cin = 0, cout = 0;

    void init(ParamRegistry& params, Rng& rng) {
        Tensor k({kKernelRes / 2, kKernelRes, kKernelRes, cin, cout});
        init_uniform_fan_in(k, cin, rng);
        params.add(prefix + ".half_kernel", std::move(k));
    }

    ad::Var forward(NetCtx& ctx, const std::shared_ptr<ConvGeometry>& geo,
                    const ad::Var& query_pos, const ad::Var& query_feat, const ad::Var& src_pos,
                    const ad::Var& src_feat) const {
        ad::Var full = mirror_antisym_kernel(ctx.tape, ctx.p(prefix + ".half_kernel"));
        return conv_neighbor_sum(ctx.tape, full, src_feat, query_pos, src_pos, geo, query_feat);
    }
};

}  // namespace ff
