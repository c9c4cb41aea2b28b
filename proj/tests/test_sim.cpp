#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>
#include <random>

#include "fluidformer/network.hpp"
#include "fluidformer/sim.hpp"
#include "helpers.hpp"

using namespace ff;

TEST_CASE("predictor matches the midpoint rule under constant gravity") {
    ParticleSystem sys;
    sys.set_spacing(0.05);
    sys.fluid.push_back({{1, 2, 3}, {0.5, -0.25, 0.0}, 0});
    std::vector<Vec3> xt, vt;
    predict(sys, {0, -10, 0}, 0.1, xt, vt);
    CHECK(vt[0].y == Catch::Approx(-0.25 - 1.0));
    // x~ = x + dt*(v + v~)/2 = x + v dt + 0.5 g dt^2
    CHECK(xt[0].y == Catch::Approx(2.0 - 0.025 - 0.05));
    CHECK(xt[0].x == Catch::Approx(1.05));
    CHECK_THROWS(predict(sys, {0, -10, 0}, 0.0, xt, vt));
}

TEST_CASE("zero correction reproduces the ballistic closed form over 100 steps") {
    const double dt = 0.01;
    const Vec3 g{0, -9.81, 0};
    ParticleSystem sys;
    sys.set_spacing(0.05);
    const Vec3 x0{0.5, 10.0, -0.25}, v0{1.0, 0.5, -2.0};
    sys.fluid.push_back({x0, v0, 0});
    std::vector<Vec3> xt, vt;
    Tensor zero({1, 3});
    for (int step = 1; step <= 100; ++step) {
        predict(sys, g, dt, xt, vt);
        correct_and_update(sys, xt, vt, zero, dt);
        double t = step * dt;
        Vec3 want = x0 + v0 * t + g * (0.5 * t * t);
        CHECK(std::fabs(sys.fluid[0].position.x - want.x) < 1e-6);
        CHECK(std::fabs(sys.fluid[0].position.y - want.y) < 1e-6);
        CHECK(std::fabs(sys.fluid[0].position.z - want.z) < 1e-6);
        Vec3 vwant = v0 + g * t;
        CHECK(std::fabs(sys.fluid[0].velocity.y - vwant.y) < 1e-6);
    }
}

TEST_CASE("velocity follows the predicted velocity plus the correction rate") {
    ParticleSystem sys;
    sys.set_spacing(0.05);
    sys.fluid.push_back({{0, 0, 0}, {0, 0, 0}, 0});
    std::vector<Vec3> xt = {{0.1, 0.0, 0.0}};
    std::vector<Vec3> vt = {{1.0, 0.0, 0.0}};
    Tensor dx({1, 3});
    dx.at(0, 0) = 0.02;
    correct_and_update(sys, xt, vt, dx, 0.1);
    CHECK(sys.fluid[0].position.x == Catch::Approx(0.12));
    CHECK(sys.fluid[0].velocity.x == Catch::Approx(1.2));  // 1.0 + 0.02/0.1
}

TEST_CASE("rollout writes frames, timings, and a manifest deterministically") {
    Scene scene;
    scene.spacing = 0.05;
    scene.radius = 0.1;
    scene.dt = 0.01;
    scene.blocks.push_back({{0, 0.1, 0}, {0.15, 0.25, 0.15}, {0, 0, 0}});
    for (int ix = 0; ix < 5; ++ix)
        for (int iz = 0; iz < 5; ++iz)
            scene.boundary.push_back({{ix * 0.05, 0.0, iz * 0.05}, {0, 1, 0}});

    ParamRegistry params;
    FluidFormerNet net;
    NetworkConfig cfg;
    cfg.radius = scene.radius;
    net.init(cfg, params, 1.0 / scene.spacing);

    namespace fs = std::filesystem;
    std::string d1 = fftest::scratch_dir("roll1");
    std::string d2 = fftest::scratch_dir("roll2");
    auto run = [&](const std::string& dir) {
        ParticleSystem sys = init_scene(scene, nullptr);
        return rollout(net, params, scene, sys, 5, dir, 7);
    };
    auto r1 = run(d1);
    auto r2 = run(d2);
    REQUIRE(r1.size() == 5);
    for (const auto& rep : r1) {
        CHECK(!rep.nan_detected);
        CHECK(rep.wall_seconds >= 0.0);
    }
    for (int i = 0; i <= 5; ++i) {
        std::string name = frame_filename(i);
        REQUIRE(fs::exists(fs::path(d1) / name));
        CHECK(fnv1a_file(d1 + "/" + name) == fnv1a_file(d2 + "/" + name));
    }
    CHECK(fs::exists(fs::path(d1) / "timings.csv"));
    std::ifstream man(d1 + "/manifest.txt");
    std::string all((std::istreambuf_iterator<char>(man)), std::istreambuf_iterator<char>());
    CHECK(all.find("seed") != std::string::npos);
    CHECK(all.find("frames") != std::string::npos);
}

TEST_CASE("frame filenames are zero padded") {
    CHECK(frame_filename(0) == "frame_000000.flf");
    CHECK(frame_filename(123456) == "frame_123456.flf");
}
