#include <catch2/catch_amalgamated.hpp>
#include <algorithm>
#include <numeric>
#include <random>

#include "fluidformer/loss.hpp"
#include "fluidformer/metrics.hpp"
#include "fluidformer/optimizer.hpp"
#include "helpers.hpp"

using namespace ff;

namespace {

std::vector<Vec3> random_points(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
    std::uniform_real_distribution<double> u(0, scale);
    std::vector<Vec3> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back({u(rng), u(rng), u(rng)});
    return out;
}

double chamfer_oracle(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
    auto dir = [](const std::vector<Vec3>& p, const std::vector<Vec3>& q) {
        double acc = 0;
        for (const auto& x : p) {
            double best = 1e300;
            for (const auto& y : q) best = std::min(best, (x - y).norm());
            acc += best;
        }
        return acc / static_cast<double>(p.size());
    };
    return 0.5 * (dir(a, b) + dir(b, a)) * 1000.0;
}

double emd_exhaustive(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
    std::vector<std::size_t> perm(a.size());
    std::iota(perm.begin(), perm.end(), 0);
    double best = 1e300;
    do {
        double acc = 0;
        for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[perm[i]]).norm();
        best = std::min(best, acc / static_cast<double>(a.size()));
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best * 1000.0;
}

}  // namespace

TEST_CASE("chamfer distance basics") {
    std::mt19937_64 rng(50);
    auto a = random_points(30, rng);
    CHECK(chamfer(a, a) == Catch::Approx(0.0).margin(1e-12));
    CHECK(chamfer({{0, 0, 0}}, {{1, 0, 0}}) == Catch::Approx(1000.0));
    auto b = random_points(25, rng);
    CHECK(chamfer(a, b) == Catch::Approx(chamfer(b, a)));
    CHECK_THROWS(chamfer({}, a));
}

TEST_CASE("chamfer matches the quadratic oracle") {
    std::mt19937_64 rng(51);
    for (int trial = 0; trial < 5; ++trial) {
        auto a = random_points(100, rng);
        auto b = random_points(100, rng);
        CHECK(chamfer(a, b) == Catch::Approx(chamfer_oracle(a, b)).epsilon(1e-10));
    }
}

TEST_CASE("earth mover distance basics") {
    std::mt19937_64 rng(52);
    auto a = random_points(10, rng);
    EmdResult same = emd(a, a);
    CHECK(same.mm == Catch::Approx(0.0).margin(1e-12));
    CHECK(same.exact);
    // two swapped points: optimal matching is the swap, distance 0
    std::vector<Vec3> p = {{0, 0, 0}, {1, 0, 0}};
    std::vector<Vec3> q = {{1, 0, 0}, {0, 0, 0}};
    CHECK(emd(p, q).mm == Catch::Approx(0.0).margin(1e-12));
    auto b = random_points(9, rng);
    CHECK_THROWS(emd(a, b));
}

TEST_CASE("assignment solver equals exhaustive search at n=8") {
    std::mt19937_64 rng(53);
    for (int trial = 0; trial < 10; ++trial) {
        auto a = random_points(8, rng);
        auto b = random_points(8, rng);
        EmdResult r = emd(a, b);
        REQUIRE(r.exact);
        CHECK(r.mm == Catch::Approx(emd_exhaustive(a, b)).epsilon(1e-9));
    }
}

TEST_CASE("transport distance dominates nearest-neighbor matching") {
    std::mt19937_64 rng(54);
    for (int trial = 0; trial < 5; ++trial) {
        auto a = random_points(20, rng);
        auto b = random_points(20, rng);
        double nn = 0;
        for (const auto& x : a) {
            double best = 1e300;
            for (const auto& y : b) best = std::min(best, (x - y).norm());
            nn += best;
        }
        nn = nn / 20.0 * 1000.0;
        CHECK(emd(a, b).mm >= nn - 1e-9);
    }
}

TEST_CASE("large sets fall back to the approximate solver with a flag") {
    std::mt19937_64 rng(55);
    auto a = random_points(600, rng);
    auto b = a;
    for (auto& p : b) p.x += 0.001;
    EmdResult r = emd(a, b);
    CHECK_FALSE(r.exact);
    // identity-shift instance: true emd is exactly 1 mm
    CHECK(r.mm == Catch::Approx(1.0).epsilon(0.2));
}

TEST_CASE("sequence error accumulates mean per-frame displacement") {
    std::mt19937_64 rng(56);
    auto base = random_points(15, rng);
    std::vector<std::vector<Vec3>> truth(12, base), pred(12, base);
    CHECK(sequence_error(pred, truth, 12) == Catch::Approx(0.0).margin(1e-12));
    for (auto& frame : pred)
        for (auto& p : frame) p.x += 0.001;  // constant 1 mm offset
    CHECK(sequence_error(pred, truth, 10) == Catch::Approx(10.0).epsilon(1e-9));
    double prev = 0;
    for (std::size_t n = 1; n <= 12; ++n) {
        double cur = sequence_error(pred, truth, n);
        CHECK(cur >= prev - 1e-12);
        prev = cur;
    }
    CHECK_THROWS(sequence_error(pred, truth, 13));
}

TEST_CASE("density error is calibrated to the rest lattice") {
    const double s = 0.05;
    std::vector<Vec3> lattice;
    for (int x = -4; x <= 4; ++x)
        for (int y = -4; y <= 4; ++y)
            for (int z = -4; z <= 4; ++z) lattice.push_back({x * s, y * s, z * s});
    CHECK(max_density_error(lattice, s) < 0.01);

    CHECK(max_density_error({{0, 0, 0}}, s) == 0.0);  // under-density clamps to zero

    std::vector<Vec3> doubled = lattice;
    doubled.push_back({0, 0, 0});  // coincident particle
    CHECK(max_density_error(doubled, s) > 0.0);
}

TEST_CASE("frame loss worked examples") {
    LossConfig cfg;
    Tensor truth({1, 3});
    Tensor pred({1, 3});
    pred.at(0, 0) = 4.0;  // error vector (4,0,0)
    CHECK(frame_loss_value(pred, truth, {0}, cfg) == Catch::Approx(2.0).epsilon(1e-9));

    Tensor unit({1, 3});
    unit.at(0, 1) = 1.0;
    CHECK(frame_loss_value(unit, truth, {40}, cfg) ==
          Catch::Approx(std::exp(-1.0)).epsilon(1e-9));

    CHECK(frame_loss_value(truth, truth, {5}, cfg) == Catch::Approx(0.0).margin(1e-12));
    CHECK(frame_loss_value(Tensor({0, 3}), Tensor({0, 3}), {}, cfg) == 0.0);
}

TEST_CASE("frame loss is permutation invariant") {
    std::mt19937_64 rng(57);
    const std::size_t n = 9;
    Tensor pred = fftest::random_tensor({n, 3}, rng);
    Tensor truth = fftest::random_tensor({n, 3}, rng);
    std::vector<std::size_t> counts = {0, 3, 7, 12, 2, 5, 40, 1, 9};
    double base = frame_loss_value(pred, truth, counts, {});
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor pp({n, 3}), tp({n, 3});
    std::vector<std::size_t> cp(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (int c = 0; c < 3; ++c) {
            pp.at(i, c) = pred.at(perm[i], c);
            tp.at(i, c) = truth.at(perm[i], c);
        }
        cp[i] = counts[perm[i]];
    }
    CHECK(frame_loss_value(pp, tp, cp, {}) == Catch::Approx(base).epsilon(1e-12));
}

TEST_CASE("learning rate schedule") {
    CHECK(lr_schedule(0) == Catch::Approx(0.01));
    CHECK(lr_schedule(14999) == Catch::Approx(0.01));
    CHECK(lr_schedule(15000) == Catch::Approx(0.005));
    CHECK(lr_schedule(25000) == Catch::Approx(0.0025));
    CHECK(lr_schedule(60000) == Catch::Approx(0.00015625));
}
