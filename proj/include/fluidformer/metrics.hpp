#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "fluidformer/geometry.hpp"
#include "fluidformer/neighbor.hpp"

namespace ff {

constexpr double kMetersToMm = 1000.0;

// Symmetric averaged Chamfer distance, reported in millimeters.
inline double chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("chamfer: empty point set");
    auto one_way = [](const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
        double acc = 0.0;
        for (const auto& p : from) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& q : to) best = std::min(best, (p - q).norm());
            acc += best;
        }
        return acc / static_cast<double>(from.size());
    };
    return 0.5 * (one_way(a, b) + one_way(b, a)) * kMetersToMm;
}

namespace detail {

// Jonker-Volgenant style shortest augmenting path assignment, O(n^3).
// Returns the minimal total cost; rowsol[i] = column matched to row i.
inline double hungarian(const std::vector<std::vector<double>>& cost,
                        std::vector<std::size_t>& rowsol) {
    const std::size_t n = cost.size();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, std::numeric_limits<double>::infinity());
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            std::size_t i0 = p[j0], j1 = 0;
            double delta = std::numeric_limits<double>::infinity();
            for (std::size_t j = 1; j <= n; ++j)
                if (!used[j]) {
                    double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if (cur < minv[j]) {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if (minv[j] < delta) {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    rowsol.assign(n, 0);
    double total = 0.0;
    for (std::size_t j = 1; j <= n; ++j)
        if (p[j]) {
            rowsol[p[j] - 1] = j - 1;
            total += cost[p[j] - 1][j - 1];
        }
    return total;
}

// Entropic OT with epsilon annealing; returns approximate mean transport
// distance for instances too large for the exact solver.
inline double sinkhorn_mean_distance(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
    const std::size_t n = a.size();
    std::vector<std::vector<double>> c(n, std::vector<double>(n));
    double cmax = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            c[i][j] = (a[i] - b[j]).norm();
            cmax = std::max(cmax, c[i][j]);
        }
    if (cmax == 0.0) return 0.0;
    std::vector<double> f(n, 0.0), g(n, 0.0);
    double eps_final = 0.1 * cmax;
    for (double eps = 0.1 * cmax; eps >= 1e-4 * cmax; eps *= 0.5) {
        eps_final = eps;
        for (int it = 0; it < 50; ++it) {
            for (std::size_t i = 0; i < n; ++i) {
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, (g[j] - c[i][j]) / eps);
                double s = 0.0;
                for (std::size_t j = 0; j < n; ++j) s += std::exp((g[j] - c[i][j]) / eps - mx);
                f[i] = -eps * (mx + std::log(s / static_cast<double>(n)));
            }
            for (std::size_t j = 0; j < n; ++j) {
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, (f[i] - c[i][j]) / eps);
                double s = 0.0;
                for (std::size_t i = 0; i < n; ++i) s += std::exp((f[i] - c[i][j]) / eps - mx);
                g[j] = -eps * (mx + std::log(s / static_cast<double>(n)));
            }
        }
    }
    // transport cost under the final plan, at the eps the potentials solve
    double total = 0.0, mass = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double p = std::exp((f[i] + g[j] - c[i][j]) / eps_final) /
                       (static_cast<double>(n) * static_cast<double>(n));
            total += p * c[i][j];
            mass += p;
        }
    return mass > 0.0 ? total / mass : 0.0;
}

}  // namespace detail

constexpr std::size_t kEmdExactLimit = 512;

struct EmdResult {
    double mm = 0.0;
    bool exact = true;
};

// Mean transport distance of the optimal one-to-one assignment, in mm.
// Exact Hungarian up to kEmdExactLimit points, Sinkhorn beyond (flagged).
inline EmdResult emd(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
    if (a.size() != b.size())
        throw std::invalid_argument("emd: point sets must have equal size");
    if (a.empty()) throw std::invalid_argument("emd: empty point set");
    const std::size_t n = a.size();
    EmdResult res;
    if (n <= kEmdExactLimit) {
        std::vector<std::vector<double>> cost(n, std::vector<double>(n));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) cost[i][j] = (a[i] - b[j]).norm();
        std::vector<std::size_t> rowsol;
        res.mm = detail::hungarian(cost, rowsol) / static_cast<double>(n) * kMetersToMm;
        res.exact = true;
    } else {
        res.mm = detail::sinkhorn_mean_distance(a, b) * kMetersToMm;
        res.exact = false;
    }
    return res;
}

// n-frame Sequence Error: sum over frames of the mean identity-matched
// displacement, in mm.
inline double sequence_error(const std::vector<std::vector<Vec3>>& pred,
                             const std::vector<std::vector<Vec3>>& truth, std::size_t n) {
    if (pred.size() < n || truth.size() < n)
        throw std::invalid_argument("sequence_error: fewer frames than n");
    double total = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        if (pred[t].size() != truth[t].size())
            throw std::invalid_argument("sequence_error: particle count mismatch at frame " +
                                        std::to_string(t));
        double acc = 0.0;
        for (std::size_t i = 0; i < pred[t].size(); ++i) acc += (pred[t][i] - truth[t][i]).norm();
        if (!pred[t].empty()) total += acc / static_cast<double>(pred[t].size());
    }
    return total * kMetersToMm;
}

// Standard 3D cubic spline kernel with support h.
inline double cubic_spline_w(double r, double h) {
    double q = r / h;
    if (q >= 1.0) return 0.0;
    const double sigma = 8.0 / (M_PI * h * h * h);
    if (q <= 0.5) return sigma * (1.0 - 6.0 * q * q + 6.0 * q * q * q);
    double t = 1.0 - q;
    return sigma * 2.0 * t * t * t;
}

// One-time calibration: density ratio of an interior particle of an infinite
// rest lattice, so a bulk rest lattice reads exactly rho0.
inline double lattice_density_calibration(double spacing) {
    const double h = 2.0 * spacing;
    double mass = kRestDensity * spacing * spacing * spacing;
    double rho = 0.0;
    int reach = static_cast<int>(std::ceil(h / spacing)) + 1;
    for (int ix = -reach; ix <= reach; ++ix)
        for (int iy = -reach; iy <= reach; ++iy)
            for (int iz = -reach; iz <= reach; ++iz) {
                Vec3 d(ix * spacing, iy * spacing, iz * spacing);
                rho += mass * cubic_spline_w(d.norm(), h);
            }
    return kRestDensity / rho;
}

// Maximum Density Error in g/cm^3: SPH density (self included) against the
// calibrated rest density, under-density clamped to zero.
inline double max_density_error(const std::vector<Vec3>& fluid, double spacing) {
    if (fluid.empty()) throw std::invalid_argument("max_density_error: no fluid particles");
    const double h = 2.0 * spacing;
    const double mass = kRestDensity * spacing * spacing * spacing;
    const double calib = lattice_density_calibration(spacing);
    SpatialHash idx(fluid, h);
    std::vector<std::size_t> ids;
    double worst = 0.0;
    for (const auto& p : fluid) {
        idx.gather(p, h, ids);
        double rho = 0.0;
        for (std::size_t j : ids) rho += mass * cubic_spline_w((fluid[j] - p).norm(), h);
        double err = rho * calib - kRestDensity;
        worst = std::max(worst, err);
    }
    return std::max(0.0, worst) / 1000.0;  // kg/m^3 -> g/cm^3
}

}  // namespace ff
