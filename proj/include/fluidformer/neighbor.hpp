#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "fluidformer/geometry.hpp"

namespace ff {

// Compressed adjacency for fixed-radius queries. displacement[k] is
// point[id[k]] - query_position (neighbor minus query).
struct NeighborList {
    std::vector<std::size_t> offsets;  // size = #queries + 1
    std::vector<std::size_t> ids;
    std::vector<Vec3> displacements;
    std::vector<double> distances;

    std::size_t queries() const { return offsets.empty() ? 0 : offsets.size() - 1; }
    std::size_t pairs() const { return ids.size(); }
};

// Uniform grid over hashed cells; cell_size should be >= query radius so one
// 27-cell stencil covers the ball.
class SpatialHash {
public:
    SpatialHash() = default;
    SpatialHash(std::vector<Vec3> points, double cell_size)
        : points_(std::move(points)), cell_(cell_size) {
        if (cell_size <= 0) throw std::invalid_argument("SpatialHash: cell_size must be > 0");
        for (std::size_t i = 0; i < points_.size(); ++i) {
            if (!points_[i].finite())
                throw std::invalid_argument("SpatialHash: non-finite coordinate at index " +
                                            std::to_string(i));
            cells_[cell_of(points_[i])].push_back(i);
        }
    }

    const std::vector<Vec3>& points() const { return points_; }
    double cell_size() const { return cell_; }

    // All point indices with ||p - q|| <= R (closed ball), ascending id.
    // exclude_index skips one identity (for fluid-fluid self exclusion).
    void gather(const Vec3& q, double R, std::vector<std::size_t>& out,
                std::size_t exclude_index = SIZE_MAX) const {
        out.clear();
        if (points_.empty()) return;
        const double r2 = R * R;
        std::array<std::int64_t, 3> lo = cell_of(q - Vec3(R, R, R));
        std::array<std::int64_t, 3> hi = cell_of(q + Vec3(R, R, R));
        for (std::int64_t cx = lo[0]; cx <= hi[0]; ++cx)
            for (std::int64_t cy = lo[1]; cy <= hi[1]; ++cy)
                for (std::int64_t cz = lo[2]; cz <= hi[2]; ++cz) {
                    auto it = cells_.find({cx, cy, cz});
                    if (it == cells_.end()) continue;
                    for (std::size_t id : it->second) {
                        if (id == exclude_index) continue;
                        if ((points_[id] - q).norm2() <= r2) out.push_back(id);
                    }
                }
        std::sort(out.begin(), out.end());
    }

private:
    std::array<std::int64_t, 3> cell_of(const Vec3& p) const {
        return {static_cast<std::int64_t>(std::floor(p.x / cell_)),
                static_cast<std::int64_t>(std::floor(p.y / cell_)),
                static_cast<std::int64_t>(std::floor(p.z / cell_))};
    }
    // Buckets are keyed on the exact cell triple; the hash only spreads them.
    struct CellHash {
        std::size_t operator()(const std::array<std::int64_t, 3>& c) const {
            std::uint64_t h = 1469598103934665603ull;
            for (std::int64_t v : c)
                for (int b = 0; b < 8; ++b) {
                    h ^= (static_cast<std::uint64_t>(v) >> (8 * b)) & 0xffu;
                    h *= 1099511628211ull;
                }
            return static_cast<std::size_t>(h);
        }
    };

    std::vector<Vec3> points_;
    double cell_ = 1.0;
    std::unordered_map<std::array<std::int64_t, 3>, std::vector<std::size_t>, CellHash> cells_;
};

inline SpatialHash build_index(std::vector<Vec3> points, double cell_size) {
    return SpatialHash(std::move(points), cell_size);
}

// exclude_same_index: query i corresponds to indexed point i (fluid-fluid).
inline NeighborList query_radius(const SpatialHash& index, const std::vector<Vec3>& queries,
                                 double R, bool exclude_same_index = false) {
    if (R <= 0) throw std::invalid_argument("query_radius: R must be > 0");
    for (const auto& q : queries)
        if (!q.finite()) throw std::invalid_argument("query_radius: non-finite query");
    NeighborList nl;
    nl.offsets.reserve(queries.size() + 1);
    nl.offsets.push_back(0);
    std::vector<std::size_t> ids;
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
        index.gather(queries[qi], R, ids, exclude_same_index ? qi : SIZE_MAX);
        for (std::size_t id : ids) {
            Vec3 d = index.points()[id] - queries[qi];
            nl.ids.push_back(id);
            nl.displacements.push_back(d);
            nl.distances.push_back(d.norm());
        }
        nl.offsets.push_back(nl.ids.size());
    }
    return nl;
}

inline std::vector<Vec3> fluid_positions(const ParticleSystem& sys) {
    std::vector<Vec3> out;
    out.reserve(sys.fluid.size());
    for (const auto& p : sys.fluid) out.push_back(p.position);
    return out;
}

inline std::vector<Vec3> boundary_positions(const ParticleSystem& sys) {
    std::vector<Vec3> out;
    out.reserve(sys.boundary.size());
    for (const auto& b : sys.boundary) out.push_back(b.position);
    return out;
}

// Fluid-fluid neighbor counts within R (self excluded); used by the loss.
inline std::vector<std::size_t> count_fluid_neighbors(const ParticleSystem& sys, double R) {
    auto pos = fluid_positions(sys);
    SpatialHash idx(pos, R);
    NeighborList nl = query_radius(idx, pos, R, /*exclude_same_index=*/true);
    std::vector<std::size_t> counts(pos.size());
    for (std::size_t i = 0; i < pos.size(); ++i) counts[i] = nl.offsets[i + 1] - nl.offsets[i];
    return counts;
}

}  // namespace ff
