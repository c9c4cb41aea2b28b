#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "fluidformer/autodiff.hpp"
#include "fluidformer/geometry.hpp"
#include "fluidformer/params.hpp"

namespace fftest {

// Central finite difference of a scalar function w.r.t. one buffer entry.
inline double fd(std::vector<double>& buf, std::size_t i,
                 const std::function<double()>& f, double h = 1e-6) {
    double saved = buf[i];
    buf[i] = saved + h;
    double lp = f();
    buf[i] = saved - h;
    double lm = f();
    buf[i] = saved;
    return (lp - lm) / (2.0 * h);
}

inline double rel_err(double a, double b, double floor = 1e-6) {
    return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), floor});
}

inline ff::Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng,
                                double lo = -1.0, double hi = 1.0) {
    ff::Tensor t(std::move(shape));
    std::uniform_real_distribution<double> d(lo, hi);
    for (double& v : t.data) v = d(rng);
    return t;
}

// Fresh scratch directory under the system temp root.
inline std::string scratch_dir(const std::string& tag) {
    auto p = std::filesystem::temp_directory_path() / ("fftest_" + tag);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p.string();
}

// A tiny deterministic trajectory dataset (free fall onto a floor) with a
// handful of particles, for fast training/gradient tests.
inline std::string write_mini_dataset(const std::string& tag, std::size_t n_particles = 6,
                                      std::size_t n_frames = 5, double dt = 0.02) {
    std::string dir = scratch_dir(tag);
    const double s = 0.05;
    {
        std::ofstream sc(dir + "/scene.txt");
        sc << "gravity = 0 -9.81 0\ndt = " << dt << "\nradius = 0.1\nspacing = " << s << "\n";
    }
    std::vector<ff::Vec3> pos, vel;
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> j(-0.005, 0.005);
    for (std::size_t i = 0; i < n_particles; ++i) {
        pos.push_back({0.1 + 0.05 * static_cast<double>(i % 3) + j(rng),
                       0.06 + 0.05 * static_cast<double>(i / 3) + j(rng), 0.1 + j(rng)});
        vel.push_back({0, 0, 0});
    }
    std::vector<std::array<float, 3>> bp, bn;
    for (int ix = 0; ix < 8; ++ix)
        for (int iz = 0; iz < 8; ++iz) {
            bp.push_back({static_cast<float>(ix * s), 0.0f, static_cast<float>(iz * s)});
            bn.push_back({0.0f, 1.0f, 0.0f});
        }
    const ff::Vec3 g{0, -9.81, 0};
    for (std::uint32_t f = 0; f < n_frames; ++f) {
        ff::Frame fr;
        fr.timestep = f;
        fr.boundary_pos = bp;
        fr.boundary_normal = bn;
        for (std::size_t i = 0; i < pos.size(); ++i) {
            fr.fluid_pos.push_back({static_cast<float>(pos[i].x), static_cast<float>(pos[i].y),
                                    static_cast<float>(pos[i].z)});
            fr.fluid_vel.push_back({static_cast<float>(vel[i].x), static_cast<float>(vel[i].y),
                                    static_cast<float>(vel[i].z)});
        }
        char name[32];
        std::snprintf(name, sizeof name, "frame_%06u.flf", f);
        ff::write_frame_file(fr, dir + "/" + name);
        for (std::size_t i = 0; i < pos.size(); ++i) {
            pos[i] += vel[i] * dt + g * (0.5 * dt * dt);
            vel[i] += g * dt;
            if (pos[i].y < 0) {
                pos[i].y = 0;
                vel[i].y = -0.3 * vel[i].y;
            }
        }
    }
    return dir;
}

}  // namespace fftest
