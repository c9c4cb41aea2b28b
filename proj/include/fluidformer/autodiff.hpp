#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fluidformer/tensor.hpp"

namespace ff::ad {

struct Node;
using Var = std::shared_ptr<Node>;

// One recorded value in the graph. grad has the same layout as value.data
// and is only allocated when the node participates in differentiation.
struct Node {
    Tensor value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<Var> inputs;
    std::function<void(Node&)> backprop;  // pulls node.grad into input grads

    void ensure_grad() {
        if (grad.size() != value.numel()) grad.assign(value.numel(), 0.0);
    }
};

using MatC = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using MatM = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

inline MatC as_mat(const Tensor& t) {
    return MatC(t.data.data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}
inline MatC grad_mat(const Node& n) {
    return MatC(n.grad.data(), static_cast<Eigen::Index>(n.value.rows()),
                static_cast<Eigen::Index>(n.value.cols()));
}
inline MatM as_mat_mut(std::vector<double>& buf, std::size_t r, std::size_t c) {
    return MatM(buf.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

// Records operations in execution order; backward() replays them in reverse.
// Single-owner: one tape per forward/backward pass.
class Tape {
public:
    Var leaf(Tensor t, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        n->value = std::move(t);
        n->requires_grad = requires_grad;
        if (requires_grad) n->ensure_grad();
        order_.push_back(n);
        return n;
    }

    Var record(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backprop) {
        auto n = std::make_shared<Node>();
        n->value = std::move(value);
        n->inputs = std::move(inputs);
        for (const auto& in : n->inputs)
            if (in->requires_grad) { n->requires_grad = true; break; }
        if (n->requires_grad) {
            n->ensure_grad();
            n->backprop = std::move(backprop);
        }
        order_.push_back(n);
        return n;
    }

    void backward(const Var& loss) {
        if (loss->value.numel() != 1)
            throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                        shape_str(loss->value.shape));
        if (!loss->requires_grad) return;
        loss->grad[0] = 1.0;
        for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
            Node& n = **it;
            if (n.requires_grad && n.backprop) n.backprop(n);
        }
    }

    std::size_t size() const { return order_.size(); }

private:
    std::vector<Var> order_;
};

namespace detail {
inline void check_same_shape(const char* op, const Var& a, const Var& b) {
    if (!a->value.same_shape(b->value))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_str(a->value.shape) + " vs " + shape_str(b->value.shape));
}
inline void accumulate(Node& dst, const std::vector<double>& g) {
    dst.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) dst.grad[i] += g[i];
}
}  // namespace detail

// ---- elementwise ----

inline Var add(Tape& t, const Var& a, const Var& b) {
    detail::check_same_shape("add", a, b);
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += b->value.data[i];
    return t.record(std::move(out), {a, b}, [](Node& n) {
        if (n.inputs[0]->requires_grad) detail::accumulate(*n.inputs[0], n.grad);
        if (n.inputs[1]->requires_grad) detail::accumulate(*n.inputs[1], n.grad);
    });
}

inline Var sub(Tape& t, const Var& a, const Var& b) {
    detail::check_same_shape("sub", a, b);
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] -= b->value.data[i];
    return t.record(std::move(out), {a, b}, [](Node& n) {
        if (n.inputs[0]->requires_grad) detail::accumulate(*n.inputs[0], n.grad);
        if (n.inputs[1]->requires_grad) {
            Node& bn = *n.inputs[1];
            bn.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) bn.grad[i] -= n.grad[i];
        }
    });
}

inline Var mul(Tape& t, const Var& a, const Var& b) {
    detail::check_same_shape("mul", a, b);
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= b->value.data[i];
    return t.record(std::move(out), {a, b}, [](Node& n) {
        Node& an = *n.inputs[0];
        Node& bn = *n.inputs[1];
        if (an.requires_grad) {
            an.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) an.grad[i] += n.grad[i] * bn.value.data[i];
        }
        if (bn.requires_grad) {
            bn.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) bn.grad[i] += n.grad[i] * an.value.data[i];
        }
    });
}

inline Var scale(Tape& t, const Var& a, double s) {
    Tensor out = a->value;
    for (double& v : out.data) v *= s;
    return t.record(std::move(out), {a}, [s](Node& n) {
        Node& an = *n.inputs[0];
        an.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) an.grad[i] += s * n.grad[i];
    });
}

inline Var relu(Tape& t, const Var& a) {
    Tensor out = a->value;
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return t.record(std::move(out), {a}, [](Node& n) {
        Node& an = *n.inputs[0];
        an.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            if (an.value.data[i] > 0.0) an.grad[i] += n.grad[i];
    });
}

inline Var sigmoid(Tape& t, const Var& a) {
    Tensor out = a->value;
    for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    return t.record(std::move(out), {a}, [](Node& n) {
        Node& an = *n.inputs[0];
        an.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            double y = n.value.data[i];
            an.grad[i] += n.grad[i] * y * (1.0 - y);
        }
    });
}

inline Var exp(Tape& t, const Var& a) {
    Tensor out = a->value;
    for (double& v : out.data) v = std::exp(v);
    return t.record(std::move(out), {a}, [](Node& n) {
        Node& an = *n.inputs[0];
        an.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) an.grad[i] += n.grad[i] * n.value.data[i];
    });
}

inline Var sqrt(Tape& t, const Var& a) {
    Tensor out = a->value;
    for (double& v : out.data) v = std::sqrt(v);
    return t.record(std::move(out), {a}, [](Node& n) {
        Node& an = *n.inputs[0];
        an.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            an.grad[i] += n.grad[i] * 0.5 / n.value.data[i];
    });
}

inline Var pow(Tape& t, const Var& a, double p) {
    Tensor out = a->value;
    for (double& v : out.data) v = std::pow(v, p);
    return t.record(std::move(out), {a}, [p](Node& n) {
        Node& an = *n.inputs[0];
        an.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            an.grad[i] += n.grad[i] * p * std::pow(an.value.data[i], p - 1.0);
    });
}

// ---- reductions ----

inline Var sum(Tape& t, const Var& a) {
    double s = std::accumulate(a->value.data.begin(), a->value.data.end(), 0.0);
    return t.record(Tensor::scalar(s), {a}, [](Node& n) {
        Node& an = *n.inputs[0];
        an.ensure_grad();
        for (double& g : an.grad) g += n.grad[0];
    });
}

inline Var mean(Tape& t, const Var& a) {
    std::size_t m = a->value.numel();
    if (m == 0) throw std::invalid_argument("mean: empty tensor");
    double s = std::accumulate(a->value.data.begin(), a->value.data.end(), 0.0);
    return t.record(Tensor::scalar(s / static_cast<double>(m)), {a}, [m](Node& n) {
        Node& an = *n.inputs[0];
        an.ensure_grad();
        double g = n.grad[0] / static_cast<double>(m);
        for (double& v : an.grad) v += g;
    });
}

// ---- matrix ops ----

inline Var matmul(Tape& t, const Var& a, const Var& b, bool transpose_b = false) {
    const Tensor& A = a->value;
    const Tensor& B = b->value;
    if (A.rank() != 2 || B.rank() != 2)
        throw std::invalid_argument("matmul: expects rank-2 tensors");
    std::size_t inner_b = transpose_b ? B.cols() : B.rows();
    std::size_t out_c = transpose_b ? B.rows() : B.cols();
    if (A.cols() != inner_b)
        throw std::invalid_argument("matmul: shape mismatch " + shape_str(A.shape) + " x " +
                                    shape_str(B.shape) + (transpose_b ? "^T" : ""));
    Tensor out({A.rows(), out_c});
    auto O = as_mat_mut(out.data, A.rows(), out_c);
    if (transpose_b)
        O = as_mat(A) * as_mat(B).transpose();
    else
        O = as_mat(A) * as_mat(B);
    return t.record(std::move(out), {a, b}, [transpose_b](Node& n) {
        Node& an = *n.inputs[0];
        Node& bn = *n.inputs[1];
        auto G = grad_mat(n);
        if (an.requires_grad) {
            an.ensure_grad();
            auto GA = as_mat_mut(an.grad, an.value.rows(), an.value.cols());
            if (transpose_b) GA += G * as_mat(bn.value);
            else GA += G * as_mat(bn.value).transpose();
        }
        if (bn.requires_grad) {
            bn.ensure_grad();
            auto GB = as_mat_mut(bn.grad, bn.value.rows(), bn.value.cols());
            if (transpose_b) GB += G.transpose() * as_mat(an.value);
            else GB += as_mat(an.value).transpose() * G;
        }
    });
}

inline Var concat_cols(Tape& t, const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    std::size_t rows = parts[0]->value.rows();
    std::size_t cols = 0;
    for (const auto& p : parts) {
        if (p->value.rows() != rows)
            throw std::invalid_argument("concat_cols: row mismatch");
        cols += p->value.cols();
    }
    Tensor out({rows, cols});
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::size_t c = p->value.cols();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < c; ++j) out.at(r, off + j) = p->value.at(r, j);
        off += c;
    }
    return t.record(std::move(out), parts, [](Node& n) {
        std::size_t rows = n.value.rows();
        std::size_t off = 0;
        for (auto& in : n.inputs) {
            std::size_t c = in->value.cols();
            if (in->requires_grad) {
                in->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < c; ++j)
                        in->grad[r * c + j] += n.grad[r * n.value.cols() + off + j];
            }
            off += c;
        }
    });
}

inline Var slice_cols(Tape& t, const Var& a, std::size_t c0, std::size_t c1) {
    const Tensor& A = a->value;
    if (A.rank() != 2 || c1 > A.cols() || c0 >= c1)
        throw std::invalid_argument("slice_cols: bad range");
    Tensor out({A.rows(), c1 - c0});
    for (std::size_t r = 0; r < A.rows(); ++r)
        for (std::size_t j = c0; j < c1; ++j) out.at(r, j - c0) = A.at(r, j);
    return t.record(std::move(out), {a}, [c0](Node& n) {
        Node& an = *n.inputs[0];
        an.ensure_grad();
        std::size_t c = n.value.cols();
        for (std::size_t r = 0; r < n.value.rows(); ++r)
            for (std::size_t j = 0; j < c; ++j)
                an.grad[r * an.value.cols() + c0 + j] += n.grad[r * c + j];
    });
}

inline Var gather_rows(Tape& t, const Var& a, std::vector<std::size_t> idx) {
    const Tensor& A = a->value;
    if (A.rank() != 2) throw std::invalid_argument("gather_rows: expects rank-2");
    Tensor out({idx.size(), A.cols()});
    for (std::size_t k = 0; k < idx.size(); ++k) {
        if (idx[k] >= A.rows()) throw std::out_of_range("gather_rows: index out of range");
        for (std::size_t j = 0; j < A.cols(); ++j) out.at(k, j) = A.at(idx[k], j);
    }
    return t.record(std::move(out), {a}, [idx = std::move(idx)](Node& n) {
        Node& an = *n.inputs[0];
        an.ensure_grad();
        std::size_t c = n.value.cols();
        for (std::size_t k = 0; k < idx.size(); ++k)
            for (std::size_t j = 0; j < c; ++j)
                an.grad[idx[k] * c + j] += n.grad[k * c + j];
    });
}

inline Var scatter_add_rows(Tape& t, const Var& a, std::vector<std::size_t> idx,
                            std::size_t out_rows) {
    const Tensor& A = a->value;
    if (A.rank() != 2 || idx.size() != A.rows())
        throw std::invalid_argument("scatter_add_rows: index count must match rows");
    Tensor out({out_rows, A.cols()});
    for (std::size_t k = 0; k < idx.size(); ++k) {
        if (idx[k] >= out_rows) throw std::out_of_range("scatter_add_rows: index out of range");
        for (std::size_t j = 0; j < A.cols(); ++j) out.at(idx[k], j) += A.at(k, j);
    }
    return t.record(std::move(out), {a}, [idx = std::move(idx)](Node& n) {
        Node& an = *n.inputs[0];
        an.ensure_grad();
        std::size_t c = n.value.cols();
        for (std::size_t k = 0; k < idx.size(); ++k)
            for (std::size_t j = 0; j < c; ++j)
                an.grad[k * c + j] += n.grad[idx[k] * c + j];
    });
}

// ---- row-vector broadcasts over [N,C] ----

inline Var mul_rowvec(Tape& t, const Var& a, const Var& v) {
    const Tensor& A = a->value;
    if (A.rank() != 2 || v->value.numel() != A.cols())
        throw std::invalid_argument("mul_rowvec: vector length must equal columns");
    Tensor out = A;
    for (std::size_t r = 0; r < A.rows(); ++r)
        for (std::size_t j = 0; j < A.cols(); ++j) out.at(r, j) *= v->value.data[j];
    return t.record(std::move(out), {a, v}, [](Node& n) {
        Node& an = *n.inputs[0];
        Node& vn = *n.inputs[1];
        std::size_t c = an.value.cols();
        if (an.requires_grad) {
            an.ensure_grad();
            for (std::size_t r = 0; r < an.value.rows(); ++r)
                for (std::size_t j = 0; j < c; ++j)
                    an.grad[r * c + j] += n.grad[r * c + j] * vn.value.data[j];
        }
        if (vn.requires_grad) {
            vn.ensure_grad();
            for (std::size_t r = 0; r < an.value.rows(); ++r)
                for (std::size_t j = 0; j < c; ++j)
                    vn.grad[j] += n.grad[r * c + j] * an.value.data[r * c + j];
        }
    });
}

inline Var add_rowvec(Tape& t, const Var& a, const Var& v) {
    const Tensor& A = a->value;
    if (A.rank() != 2 || v->value.numel() != A.cols())
        throw std::invalid_argument("add_rowvec: vector length must equal columns");
    Tensor out = A;
    for (std::size_t r = 0; r < A.rows(); ++r)
        for (std::size_t j = 0; j < A.cols(); ++j) out.at(r, j) += v->value.data[j];
    return t.record(std::move(out), {a, v}, [](Node& n) {
        Node& an = *n.inputs[0];
        Node& vn = *n.inputs[1];
        std::size_t c = an.value.cols();
        if (an.requires_grad) detail::accumulate(an, n.grad);
        if (vn.requires_grad) {
            vn.ensure_grad();
            for (std::size_t r = 0; r < an.value.rows(); ++r)
                for (std::size_t j = 0; j < c; ++j) vn.grad[j] += n.grad[r * c + j];
        }
    });
}

// ---- softmax over the last dimension of [N,M] ----

inline Var softmax_lastdim(Tape& t, const Var& a) {
    const Tensor& A = a->value;
    if (A.rank() != 2) throw std::invalid_argument("softmax_lastdim: expects rank-2");
    Tensor out = A;
    for (std::size_t r = 0; r < A.rows(); ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < A.cols(); ++j) mx = std::max(mx, A.at(r, j));
        double denom = 0.0;
        for (std::size_t j = 0; j < A.cols(); ++j) {
            out.at(r, j) = std::exp(A.at(r, j) - mx);
            denom += out.at(r, j);
        }
        for (std::size_t j = 0; j < A.cols(); ++j) out.at(r, j) /= denom;
    }
    return t.record(std::move(out), {a}, [](Node& n) {
        Node& an = *n.inputs[0];
        an.ensure_grad();
        std::size_t c = an.value.cols();
        for (std::size_t r = 0; r < an.value.rows(); ++r) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += n.grad[r * c + j] * n.value.data[r * c + j];
            for (std::size_t j = 0; j < c; ++j)
                an.grad[r * c + j] += n.value.data[r * c + j] * (n.grad[r * c + j] - dot);
        }
    });
}

// Normalizes each column of [N,C] to zero mean, unit variance over the rows.
// Degenerate columns (variance < 1e-12) divide by sqrt(var + 1e-5) instead.
inline Var batch_stat_norm(Tape& t, const Var& a) {
    const Tensor& A = a->value;
    if (A.rank() != 2) throw std::invalid_argument("batch_stat_norm: expects rank-2");
    std::size_t N = A.rows(), C = A.cols();
    if (N == 0) return t.record(Tensor(A.shape), {a}, [](Node&) {});
    std::vector<double> mu(C, 0.0), var(C, 0.0), denom(C, 0.0);
    for (std::size_t r = 0; r < N; ++r)
        for (std::size_t j = 0; j < C; ++j) mu[j] += A.at(r, j);
    for (double& m : mu) m /= static_cast<double>(N);
    for (std::size_t r = 0; r < N; ++r)
        for (std::size_t j = 0; j < C; ++j) {
            double d = A.at(r, j) - mu[j];
            var[j] += d * d;
        }
    for (std::size_t j = 0; j < C; ++j) {
        var[j] /= static_cast<double>(N);
        denom[j] = var[j] < 1e-12 ? std::sqrt(var[j] + 1e-5) : std::sqrt(var[j]);
    }
    Tensor out = A;
    for (std::size_t r = 0; r < N; ++r)
        for (std::size_t j = 0; j < C; ++j) out.at(r, j) = (A.at(r, j) - mu[j]) / denom[j];
    return t.record(std::move(out), {a}, [mu, denom, N, C](Node& n) {
        Node& an = *n.inputs[0];
        an.ensure_grad();
        double inv_n = 1.0 / static_cast<double>(N);
        for (std::size_t j = 0; j < C; ++j) {
            double s = denom[j];
            double gsum = 0.0, gxsum = 0.0;
            for (std::size_t r = 0; r < N; ++r) {
                double g = n.grad[r * C + j];
                gsum += g;
                gxsum += g * (an.value.at(r, j) - mu[j]);
            }
            double dvar = -0.5 * gxsum / (s * s * s);
            double dmu = -gsum / s;
            for (std::size_t r = 0; r < N; ++r) {
                double g = n.grad[r * C + j];
                an.grad[r * C + j] +=
                    g / s + dvar * 2.0 * (an.value.at(r, j) - mu[j]) * inv_n + dmu * inv_n;
            }
        }
    });
}

}  // namespace ff::ad
