#include <catch2/catch_amalgamated.hpp>
#include <sstream>

#include "fluidformer/geometry.hpp"
#include "helpers.hpp"

using namespace ff;

TEST_CASE("feature assembly layout") {
    ParticleSystem sys;
    sys.set_spacing(0.05);
    sys.fluid.push_back({{0, 0, 0}, {1, 2, 3}, 0.5});
    sys.fluid.push_back({{1, 1, 1}, {-1, 0, 4}, 0.25});
    Tensor f = assemble_features(sys);
    REQUIRE(f.rows() == 2);
    REQUIRE(f.cols() == 5);
    CHECK(f.at(0, 0) == 1.0);
    CHECK(f.at(0, 1) == 1.0);
    CHECK(f.at(0, 2) == 2.0);
    CHECK(f.at(0, 3) == 3.0);
    CHECK(f.at(0, 4) == 0.5);
    CHECK(f.at(1, 4) == 0.25);

    sys.boundary.push_back({{0, 0, 0}, {0, 1, 0}});
    Tensor b = assemble_boundary_features(sys);
    REQUIRE(b.rows() == 1);
    REQUIRE(b.cols() == 4);
    CHECK(b.at(0, 0) == 1.0);
    CHECK(b.at(0, 2) == 1.0);
}

TEST_CASE("particle mass follows spacing") {
    ParticleSystem sys;
    sys.set_spacing(0.1);
    CHECK(sys.mass == Catch::Approx(1000.0 * 0.001));
}

TEST_CASE("frame roundtrip is bitwise") {
    Frame f;
    f.timestep = 7;
    f.fluid_pos = {{0.1f, 0.2f, 0.3f}, {1.5f, -2.0f, 0.25f}};
    f.fluid_vel = {{0.0f, -1.0f, 0.0f}, {3.0f, 0.5f, -0.125f}};
    f.boundary_pos = {{0.0f, 0.0f, 0.0f}};
    f.boundary_normal = {{0.0f, 1.0f, 0.0f}};
    std::stringstream ss;
    write_frame(f, ss);
    Frame g = read_frame(ss);
    CHECK(f == g);
}

TEST_CASE("frame reader reports corruption with byte offsets") {
    Frame f;
    f.fluid_pos = {{1.0f, 2.0f, 3.0f}};
    f.fluid_vel = {{0.0f, 0.0f, 0.0f}};
    std::ostringstream os;
    write_frame(f, os);
    std::string bytes = os.str();

    SECTION("bad magic") {
        std::string bad = bytes;
        bad[0] = 'X';
        std::istringstream is(bad);
        CHECK_THROWS_AS(read_frame(is), FrameFormatError);
    }
    SECTION("truncated payload") {
        std::istringstream is(bytes.substr(0, bytes.size() - 5));
        try {
            read_frame(is);
            FAIL("expected FrameFormatError");
        } catch (const FrameFormatError& e) {
            CHECK(e.offset > 0);
            CHECK(std::string(e.what()).find("byte") != std::string::npos);
        }
    }
}

TEST_CASE("system/frame conversion roundtrip") {
    ParticleSystem sys;
    sys.set_spacing(0.05);
    sys.fluid.push_back({{0.125, 0.25, 0.5}, {1.0, -2.0, 0.5}, 0.0});
    sys.boundary.push_back({{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}});
    Frame f = to_frame(sys, 3);
    ParticleSystem back = from_frame(f, 0.05);
    REQUIRE(back.fluid.size() == 1);
    REQUIRE(back.boundary.size() == 1);
    CHECK(back.fluid[0].position.x == Catch::Approx(0.125));
    CHECK(back.fluid[0].velocity.y == Catch::Approx(-2.0));
    CHECK(back.boundary[0].normal.y == Catch::Approx(1.0));
}

TEST_CASE("scene parser handles keys, comments, and errors") {
    std::istringstream in(
        "# comment line\n"
        "gravity = 0 -9.81 0\n"
        "dt = 0.01   # trailing comment\n"
        "radius = 0.2\n"
        "spacing = 0.1\n"
        "viscosity = 0.02\n"
        "boundary_particle = 0 0 0  0 1 0\n"
        "boundary_particle = 1 0 0  0 1 0\n"
        "block = 0 0 0  0.3 0.3 0.3  0 0 0\n");
    Scene sc = parse_scene(in);
    CHECK(sc.dt == Catch::Approx(0.01));
    CHECK(sc.radius == Catch::Approx(0.2));
    CHECK(sc.viscosity == Catch::Approx(0.02));
    REQUIRE(sc.boundary.size() == 2);
    REQUIRE(sc.blocks.size() == 1);

    std::istringstream bad1("unknown_key = 1\n");
    CHECK_THROWS_WITH(parse_scene(bad1), Catch::Matchers::ContainsSubstring("unknown key"));
    std::istringstream bad2("dt = oops\n");
    CHECK_THROWS(parse_scene(bad2));
    std::istringstream bad3("dt = -1\nradius = 0.1\nspacing = 0.05\n");
    CHECK_THROWS(parse_scene(bad3));
    std::istringstream bad4("radius = 0.01\nspacing = 0.05\n");
    CHECK_THROWS(parse_scene(bad4));
}

TEST_CASE("scene init samples blocks on a half-spacing-offset lattice") {
    Scene sc;
    sc.spacing = 0.1;
    sc.radius = 0.1;
    sc.blocks.push_back({{0, 0, 0}, {0.3, 0.3, 0.3}, {1, 0, 0}});
    std::ostringstream warn;
    ParticleSystem sys = init_scene(sc, &warn);
    CHECK(sys.fluid.size() == 27);  // 3 per axis
    double min_c = 1e9;
    for (const auto& p : sys.fluid)
        min_c = std::min({min_c, p.position.x, p.position.y, p.position.z});
    CHECK(min_c == Catch::Approx(0.05));
    CHECK(sys.fluid[0].velocity.x == Catch::Approx(1.0));
}
