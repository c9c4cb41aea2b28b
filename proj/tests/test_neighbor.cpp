#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "fluidformer/neighbor.hpp"
#include "helpers.hpp"

using namespace ff;

namespace {

// O(N*M) reference for fixed-radius search.
std::vector<std::vector<std::size_t>> brute_force(const std::vector<Vec3>& pts,
                                                  const std::vector<Vec3>& queries, double R,
                                                  bool exclude_same) {
    std::vector<std::vector<std::size_t>> out(queries.size());
    for (std::size_t q = 0; q < queries.size(); ++q)
        for (std::size_t i = 0; i < pts.size(); ++i) {
            if (exclude_same && i == q) continue;
            if ((pts[i] - queries[q]).norm() <= R) out[q].push_back(i);
        }
    return out;
}

}  // namespace

TEST_CASE("radius query matches brute force on random clouds") {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::size_t n = 50 + trial * 10;
        std::vector<Vec3> pts;
        for (std::size_t i = 0; i < n; ++i) pts.push_back({u(rng), u(rng), u(rng)});
        double R = 0.05 + 0.2 * u(rng);
        SpatialHash idx(pts, R);
        NeighborList nl = query_radius(idx, pts, R, trial % 2 == 0);
        auto want = brute_force(pts, pts, R, trial % 2 == 0);
        REQUIRE(nl.queries() == n);
        for (std::size_t q = 0; q < n; ++q) {
            std::vector<std::size_t> got(nl.ids.begin() + nl.offsets[q],
                                         nl.ids.begin() + nl.offsets[q + 1]);
            REQUIRE(got == want[q]);
        }
    }
}

TEST_CASE("neighbor ids are ascending and the ball is closed") {
    std::vector<Vec3> pts = {{0, 0, 0}, {0.1, 0, 0}, {0.05, 0, 0}, {0.2, 0, 0}};
    SpatialHash idx(pts, 0.1);
    NeighborList nl = query_radius(idx, {{0, 0, 0}}, 0.1);
    std::vector<std::size_t> got(nl.ids.begin(), nl.ids.end());
    // exactly-at-R neighbor (0.1,0,0) must be included; ids sorted
    CHECK(got == std::vector<std::size_t>{0, 1, 2});
    CHECK(nl.distances[1] == Catch::Approx(0.1));
}

TEST_CASE("displacements point from query to neighbor") {
    std::vector<Vec3> pts = {{0.3, 0.1, 0.0}};
    SpatialHash idx(pts, 0.5);
    NeighborList nl = query_radius(idx, {{0.1, 0.1, 0.0}}, 0.5);
    REQUIRE(nl.pairs() == 1);
    CHECK(nl.displacements[0].x == Catch::Approx(0.2));
    CHECK(nl.displacements[0].y == Catch::Approx(0.0));
}

TEST_CASE("self exclusion skips only the identity index") {
    std::vector<Vec3> pts = {{0, 0, 0}, {0, 0, 0}};
    SpatialHash idx(pts, 0.1);
    NeighborList nl = query_radius(idx, pts, 0.1, true);
    REQUIRE(nl.pairs() == 2);  // each sees the coincident other, not itself
    CHECK(nl.ids[0] == 1);
    CHECK(nl.ids[1] == 0);
}

TEST_CASE("non-finite inputs are rejected") {
    std::vector<Vec3> bad = {{0, std::numeric_limits<double>::quiet_NaN(), 0}};
    CHECK_THROWS(SpatialHash(bad, 0.1));
    std::vector<Vec3> pts = {{0, 0, 0}};
    SpatialHash idx(pts, 0.1);
    CHECK_THROWS(query_radius(idx, bad, 0.1));
    CHECK_THROWS(query_radius(idx, pts, -1.0));
}

TEST_CASE("fluid neighbor counts") {
    ParticleSystem sys;
    sys.set_spacing(0.05);
    sys.fluid.push_back({{0, 0, 0}, {0, 0, 0}, 0});
    sys.fluid.push_back({{0.05, 0, 0}, {0, 0, 0}, 0});
    sys.fluid.push_back({{0.5, 0, 0}, {0, 0, 0}, 0});
    auto counts = count_fluid_neighbors(sys, 0.1);
    CHECK(counts == std::vector<std::size_t>{1, 1, 0});
}
