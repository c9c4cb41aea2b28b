#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fluidformer/tensor.hpp"

namespace ff {

struct Vec3 {
    double x = 0, y = 0, z = 0;

    Vec3() = default;
    Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    double norm2() const { return dot(*this); }
    double norm() const { return std::sqrt(norm2()); }
    double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
    bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

struct FluidParticle {
    Vec3 position;
    Vec3 velocity;
    double viscosity = 0.0;
};

struct BoundaryParticle {
    Vec3 position;
    Vec3 normal;  // unit length
};

// Rest density 1 g/cm^3 in SI units; uniform particle mass is
// rho0 * spacing^3 so a rest lattice has unit density.
constexpr double kRestDensity = 1000.0;  // kg/m^3

struct ParticleSystem {
    std::vector<FluidParticle> fluid;
    std::vector<BoundaryParticle> boundary;
    double particle_spacing = 0.05;  // meters
    double mass = kRestDensity * 0.05 * 0.05 * 0.05;  // kg

    void set_spacing(double s) {
        particle_spacing = s;
        mass = kRestDensity * s * s * s;
    }
};

// f_i = [1, v_x, v_y, v_z, viscosity]
inline Tensor assemble_features(const ParticleSystem& sys) {
    Tensor out({sys.fluid.size(), 5});
    for (std::size_t i = 0; i < sys.fluid.size(); ++i) {
        const auto& p = sys.fluid[i];
        out.at(i, 0) = 1.0;
        out.at(i, 1) = p.velocity.x;
        out.at(i, 2) = p.velocity.y;
        out.at(i, 3) = p.velocity.z;
        out.at(i, 4) = p.viscosity;
    }
    return out;
}

// Boundary features mirror the fluid convention: [1, n_x, n_y, n_z].
inline Tensor assemble_boundary_features(const ParticleSystem& sys) {
    Tensor out({sys.boundary.size(), 4});
    for (std::size_t i = 0; i < sys.boundary.size(); ++i) {
        const auto& b = sys.boundary[i];
        out.at(i, 0) = 1.0;
        out.at(i, 1) = b.normal.x;
        out.at(i, 2) = b.normal.y;
        out.at(i, 3) = b.normal.z;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Frame file format "FLF1": little-endian header
//   magic[4] = "FLF1", u32 version=1, u32 timestep, u32 N, u32 M, u32 reserved=0
// then N*6 float32 (position, velocity interleaved per fluid particle)
// then M*6 float32 (position, normal interleaved per boundary particle).
// ---------------------------------------------------------------------------

struct FrameFormatError : std::runtime_error {
    explicit FrameFormatError(const std::string& what, std::size_t byte_offset)
        : std::runtime_error(what + " (at byte " + std::to_string(byte_offset) + ")"),
          offset(byte_offset) {}
    std::size_t offset;
};

struct Frame {
    std::uint32_t timestep = 0;
    std::vector<std::array<float, 3>> fluid_pos, fluid_vel;
    std::vector<std::array<float, 3>> boundary_pos, boundary_normal;

    bool operator==(const Frame& o) const {
        auto bits_eq = [](const std::vector<std::array<float, 3>>& a,
                          const std::vector<std::array<float, 3>>& b) {
            if (a.size() != b.size()) return false;
            return a.empty() ||
                   std::memcmp(a.data(), b.data(), a.size() * sizeof(a[0])) == 0;
        };
        return timestep == o.timestep && bits_eq(fluid_pos, o.fluid_pos) &&
               bits_eq(fluid_vel, o.fluid_vel) && bits_eq(boundary_pos, o.boundary_pos) &&
               bits_eq(boundary_normal, o.boundary_normal);
    }
};

inline void write_frame(const Frame& f, std::ostream& out) {
    auto write_u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    out.write("FLF1", 4);
    write_u32(1);
    write_u32(f.timestep);
    write_u32(static_cast<std::uint32_t>(f.fluid_pos.size()));
    write_u32(static_cast<std::uint32_t>(f.boundary_pos.size()));
    write_u32(0);
    auto write_vec = [&](const std::array<float, 3>& v) {
        out.write(reinterpret_cast<const char*>(v.data()), 12);
    };
    for (std::size_t i = 0; i < f.fluid_pos.size(); ++i) {
        write_vec(f.fluid_pos[i]);
        write_vec(f.fluid_vel[i]);
    }
    for (std::size_t i = 0; i < f.boundary_pos.size(); ++i) {
        write_vec(f.boundary_pos[i]);
        write_vec(f.boundary_normal[i]);
    }
    if (!out) throw std::runtime_error("write_frame: stream failure");
}

inline Frame read_frame(std::istream& in) {
    std::size_t offset = 0;
    auto read_raw = [&](char* dst, std::size_t n, const char* what) {
        in.read(dst, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in.gcount()) != n)
            throw FrameFormatError(std::string("truncated frame reading ") + what, offset);
        offset += n;
    };
    auto read_u32 = [&](const char* what) {
        std::uint32_t v;
        read_raw(reinterpret_cast<char*>(&v), 4, what);
        return v;
    };
    char magic[4];
    read_raw(magic, 4, "magic");
    if (std::memcmp(magic, "FLF1", 4) != 0) throw FrameFormatError("bad frame magic", 0);
    std::uint32_t version = read_u32("version");
    if (version != 1) throw FrameFormatError("unsupported frame version", 4);
    Frame f;
    f.timestep = read_u32("timestep");
    std::uint32_t n = read_u32("fluid count");
    std::uint32_t m = read_u32("boundary count");
    read_u32("reserved");
    f.fluid_pos.resize(n);
    f.fluid_vel.resize(n);
    f.boundary_pos.resize(m);
    f.boundary_normal.resize(m);
    for (std::uint32_t i = 0; i < n; ++i) {
        read_raw(reinterpret_cast<char*>(f.fluid_pos[i].data()), 12, "fluid position");
        read_raw(reinterpret_cast<char*>(f.fluid_vel[i].data()), 12, "fluid velocity");
    }
    for (std::uint32_t i = 0; i < m; ++i) {
        read_raw(reinterpret_cast<char*>(f.boundary_pos[i].data()), 12, "boundary position");
        read_raw(reinterpret_cast<char*>(f.boundary_normal[i].data()), 12, "boundary normal");
    }
    return f;
}

inline void write_frame_file(const Frame& f, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open frame file for writing: " + path);
    write_frame(f, out);
}

inline Frame read_frame_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open frame file: " + path);
    return read_frame(in);
}

inline Frame to_frame(const ParticleSystem& sys, std::uint32_t timestep) {
    Frame f;
    f.timestep = timestep;
    f.fluid_pos.reserve(sys.fluid.size());
    f.fluid_vel.reserve(sys.fluid.size());
    for (const auto& p : sys.fluid) {
        f.fluid_pos.push_back({static_cast<float>(p.position.x), static_cast<float>(p.position.y),
                               static_cast<float>(p.position.z)});
        f.fluid_vel.push_back({static_cast<float>(p.velocity.x), static_cast<float>(p.velocity.y),
                               static_cast<float>(p.velocity.z)});
    }
    for (const auto& b : sys.boundary) {
        f.boundary_pos.push_back({static_cast<float>(b.position.x),
                                  static_cast<float>(b.position.y),
                                  static_cast<float>(b.position.z)});
        f.boundary_normal.push_back({static_cast<float>(b.normal.x),
                                     static_cast<float>(b.normal.y),
                                     static_cast<float>(b.normal.z)});
    }
    return f;
}

inline ParticleSystem from_frame(const Frame& f, double spacing, double viscosity = 0.0) {
    ParticleSystem sys;
    sys.set_spacing(spacing);
    sys.fluid.reserve(f.fluid_pos.size());
    for (std::size_t i = 0; i < f.fluid_pos.size(); ++i) {
        FluidParticle p;
        p.position = {f.fluid_pos[i][0], f.fluid_pos[i][1], f.fluid_pos[i][2]};
        p.velocity = {f.fluid_vel[i][0], f.fluid_vel[i][1], f.fluid_vel[i][2]};
        p.viscosity = viscosity;
        sys.fluid.push_back(p);
    }
    for (std::size_t i = 0; i < f.boundary_pos.size(); ++i) {
        BoundaryParticle b;
        b.position = {f.boundary_pos[i][0], f.boundary_pos[i][1], f.boundary_pos[i][2]};
        b.normal = {f.boundary_normal[i][0], f.boundary_normal[i][1], f.boundary_normal[i][2]};
        sys.boundary.push_back(b);
    }
    return sys;
}

// ---------------------------------------------------------------------------
// Scene description: flat key/value text file, '#' comments.
//   gravity = 0 -9.81 0
//   dt = 0.02
//   radius = 0.1
//   spacing = 0.05
//   viscosity = 0.0
//   boundary_frame = path/to/frame.flf        (boundary set loaded from file)
//   boundary_particle = x y z nx ny nz        (repeatable)
//   block = minx miny minz maxx maxy maxz vx vy vz   (repeatable fluid box)
// ---------------------------------------------------------------------------

struct FluidBlock {
    Vec3 lo, hi;
    Vec3 velocity;
};

struct Scene {
    Vec3 gravity{0.0, -9.81, 0.0};
    double dt = 0.02;
    double radius = 0.1;           // neighborhood radius R
    double spacing = 0.05;         // particle spacing
    double viscosity = 0.0;
    std::vector<BoundaryParticle> boundary;
    std::string boundary_frame;    // optional path, loaded by init_scene caller
    std::vector<FluidBlock> blocks;

    void validate() const {
        if (dt <= 0) throw std::invalid_argument("scene: dt must be > 0");
        if (radius <= 0) throw std::invalid_argument("scene: radius must be > 0");
        if (spacing <= 0) throw std::invalid_argument("scene: spacing must be > 0");
        if (radius < spacing)
            throw std::invalid_argument("scene: radius must be >= particle spacing");
    }
};

inline Scene parse_scene(std::istream& in) {
    Scene sc;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            std::istringstream probe(line);
            std::string tok;
            if (probe >> tok)
                throw std::invalid_argument("scene: line " + std::to_string(lineno) +
                                            ": expected key = value");
            continue;
        }
        std::istringstream keys(line.substr(0, eq));
        std::string key;
        keys >> key;
        std::istringstream vals(line.substr(eq + 1));
        auto need = [&](double& v) {
            if (!(vals >> v))
                throw std::invalid_argument("scene: line " + std::to_string(lineno) +
                                            ": bad value for " + key);
        };
        if (key == "gravity") {
            need(sc.gravity.x); need(sc.gravity.y); need(sc.gravity.z);
        } else if (key == "dt") {
            need(sc.dt);
        } else if (key == "radius") {
            need(sc.radius);
        } else if (key == "spacing") {
            need(sc.spacing);
        } else if (key == "viscosity") {
            need(sc.viscosity);
        } else if (key == "boundary_frame") {
            vals >> sc.boundary_frame;
        } else if (key == "boundary_particle") {
            BoundaryParticle b;
            need(b.position.x); need(b.position.y); need(b.position.z);
            need(b.normal.x); need(b.normal.y); need(b.normal.z);
            sc.boundary.push_back(b);
        } else if (key == "block") {
            FluidBlock blk;
            need(blk.lo.x); need(blk.lo.y); need(blk.lo.z);
            need(blk.hi.x); need(blk.hi.y); need(blk.hi.z);
            need(blk.velocity.x); need(blk.velocity.y); need(blk.velocity.z);
            sc.blocks.push_back(blk);
        } else if (!key.empty()) {
            throw std::invalid_argument("scene: line " + std::to_string(lineno) +
                                        ": unknown key '" + key + "'");
        }
    }
    sc.validate();
    return sc;
}

inline Scene parse_scene_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open scene file: " + path);
    Scene sc = parse_scene(in);
    if (!sc.boundary_frame.empty()) {
        std::string bpath = sc.boundary_frame;
        if (bpath.front() != '/') {
            auto slash = path.rfind('/');
            if (slash != std::string::npos) bpath = path.substr(0, slash + 1) + bpath;
        }
        Frame bf = read_frame_file(bpath);
        for (std::size_t i = 0; i < bf.boundary_pos.size(); ++i) {
            BoundaryParticle b;
            b.position = {bf.boundary_pos[i][0], bf.boundary_pos[i][1], bf.boundary_pos[i][2]};
            b.normal = {bf.boundary_normal[i][0], bf.boundary_normal[i][1],
                        bf.boundary_normal[i][2]};
            sc.boundary.push_back(b);
        }
    }
    return sc;
}

// Samples fluid blocks on a cubic lattice offset by spacing/2 from the box
// faces; boundary particles are taken verbatim from the scene.
inline ParticleSystem init_scene(const Scene& scene, std::ostream* warn = &std::cerr) {
    scene.validate();
    ParticleSystem sys;
    sys.set_spacing(scene.spacing);
    sys.boundary = scene.boundary;
    const double s = scene.spacing;
    for (const auto& blk : scene.blocks) {
        for (double x = blk.lo.x + s / 2; x <= blk.hi.x - s / 2 + 1e-9; x += s)
            for (double y = blk.lo.y + s / 2; y <= blk.hi.y - s / 2 + 1e-9; y += s)
                for (double z = blk.lo.z + s / 2; z <= blk.hi.z - s / 2 + 1e-9; z += s) {
                    FluidParticle p;
                    p.position = {x, y, z};
                    p.velocity = blk.velocity;
                    p.viscosity = scene.viscosity;
                    sys.fluid.push_back(p);
                }
    }
    if (warn) {
        double lim2 = (0.5 * s) * (0.5 * s);
        for (const auto& p : sys.fluid)
            for (const auto& b : sys.boundary)
                if ((p.position - b.position).norm2() < lim2) {
                    *warn << "warning: fluid particle overlaps boundary within 0.5*spacing\n";
                    goto done;
                }
    done:;
    }
    return sys;
}

}  // namespace ff
