#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fluidformer/geometry.hpp"
#include "fluidformer/loss.hpp"
#include "fluidformer/random.hpp"
#include "fluidformer/sim.hpp"

namespace ff {

// Ordered frame files per scene; windows (t, t+1, t+2) never cross a scene
// boundary. Each scene directory carries its scene.txt.
struct TrajectoryDataset {
    struct SceneTraj {
        Scene scene;
        std::vector<std::string> frame_paths;  // sorted
    };
    struct WindowRef {
        std::size_t scene_idx;
        std::size_t t;
    };

    std::vector<SceneTraj> scenes;
    std::vector<WindowRef> windows;

    static TrajectoryDataset load(const std::string& dir) {
        namespace fs = std::filesystem;
        TrajectoryDataset ds;
        // A dataset dir is either a single scene (scene.txt + frames) or a
        // directory of such scene dirs.
        std::vector<std::string> scene_dirs;
        if (fs::exists(fs::path(dir) / "scene.txt")) {
            scene_dirs.push_back(dir);
        } else {
            for (const auto& e : fs::directory_iterator(dir))
                if (e.is_directory() && fs::exists(e.path() / "scene.txt"))
                    scene_dirs.push_back(e.path().string());
            std::sort(scene_dirs.begin(), scene_dirs.end());
        }
        if (scene_dirs.empty())
            throw std::runtime_error("dataset: no scene.txt found under " + dir);
        for (const auto& sd : scene_dirs) {
            SceneTraj traj;
            traj.scene = parse_scene_file(sd + "/scene.txt");
            for (const auto& e : fs::directory_iterator(sd)) {
                auto p = e.path();
                if (p.extension() == ".flf" && p.filename().string().rfind("frame_", 0) == 0)
                    traj.frame_paths.push_back(p.string());
            }
            std::sort(traj.frame_paths.begin(), traj.frame_paths.end());
            if (traj.frame_paths.size() >= 3) {
                for (std::size_t t = 0; t + 2 < traj.frame_paths.size(); ++t)
                    ds.windows.push_back({ds.scenes.size(), t});
            }
            ds.scenes.push_back(std::move(traj));
        }
        if (ds.windows.empty()) throw std::runtime_error("dataset: no trainable windows");
        return ds;
    }

    TrainingWindow window(const WindowRef& ref) const {
        const auto& traj = scenes[ref.scene_idx];
        TrainingWindow w;
        w.t0 = read_frame_file(traj.frame_paths[ref.t]);
        w.t1 = read_frame_file(traj.frame_paths[ref.t + 1]);
        w.t2 = read_frame_file(traj.frame_paths[ref.t + 2]);
        return w;
    }
};

// ---------------------------------------------------------------------------
// Synthetic desk-scale ground truth: free fall with exact constant-
// acceleration steps, floor (and box walls for damped-box) clamping with
// velocity damping on contact.
// ---------------------------------------------------------------------------

struct ToyDatasetConfig {
    std::size_t frames = 120;
    double dt = 0.02;
    double spacing = 0.05;
    double radius = 0.1;
    Vec3 gravity{0.0, -9.81, 0.0};
};

namespace detail {

inline void clamp_axis(double& x, double& v, double lo, double hi, double restitution) {
    if (x < lo) {
        x = lo;
        if (v < 0) v = -restitution * v;
    } else if (x > hi) {
        x = hi;
        if (v > 0) v = -restitution * v;
    }
}

}  // namespace detail

inline void make_toy_dataset(const std::string& kind, std::uint64_t seed,
                             const std::string& out_dir, ToyDatasetConfig cfg = {}) {
    if (kind != "ballistic" && kind != "damped-box")
        throw std::invalid_argument("make_toy_dataset: kind must be ballistic or damped-box");
    const bool boxed = kind == "damped-box";
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    Rng rng(seed);
    const double s = cfg.spacing;
    const double box = 0.6;  // cubic domain [0,box]^3

    // ~300 fluid particles: 7x6x7 block with seeded jitter, dropped from rest
    std::vector<Vec3> pos, vel;
    Vec3 origin(0.5 * box - 3.5 * s, 0.45 * box, 0.5 * box - 3.5 * s);
    for (int ix = 0; ix < 7; ++ix)
        for (int iy = 0; iy < 6; ++iy)
            for (int iz = 0; iz < 7; ++iz) {
                Vec3 j(rng.uniform(-0.1 * s, 0.1 * s), rng.uniform(-0.1 * s, 0.1 * s),
                       rng.uniform(-0.1 * s, 0.1 * s));
                pos.push_back(origin + Vec3((ix + 0.5) * s, (iy + 0.5) * s, (iz + 0.5) * s) + j);
                vel.push_back({0, 0, 0});
            }

    // boundary: floor plane, plus walls for the boxed variant
    std::vector<BoundaryParticle> boundary;
    int cells = static_cast<int>(box / s);
    for (int ix = 0; ix <= cells; ++ix)
        for (int iz = 0; iz <= cells; ++iz)
            boundary.push_back({{ix * s, 0.0, iz * s}, {0, 1, 0}});
    if (boxed) {
        for (int a = 0; a <= cells; ++a)
            for (int b = 1; b <= cells; ++b) {
                boundary.push_back({{0.0, b * s, a * s}, {1, 0, 0}});
                boundary.push_back({{box, b * s, a * s}, {-1, 0, 0}});
                boundary.push_back({{a * s, b * s, 0.0}, {0, 0, 1}});
                boundary.push_back({{a * s, b * s, box}, {0, 0, -1}});
            }
    }

    {
        std::ofstream sc(out_dir + "/scene.txt");
        sc << "# synthetic " << kind << " dataset (seed " << seed << ")\n";
        sc << "gravity = " << cfg.gravity.x << " " << cfg.gravity.y << " " << cfg.gravity.z
           << "\n";
        sc << "dt = " << cfg.dt << "\n";
        sc << "radius = " << cfg.radius << "\n";
        sc << "spacing = " << cfg.spacing << "\n";
        sc << "boundary_frame = boundary.flf\n";
    }
    {
        Frame bf;
        for (const auto& b : boundary) {
            bf.boundary_pos.push_back({static_cast<float>(b.position.x),
                                       static_cast<float>(b.position.y),
                                       static_cast<float>(b.position.z)});
            bf.boundary_normal.push_back({static_cast<float>(b.normal.x),
                                          static_cast<float>(b.normal.y),
                                          static_cast<float>(b.normal.z)});
        }
        write_frame_file(bf, out_dir + "/boundary.flf");
    }

    const double restitution = 0.3;
    const double floor_friction = 0.8;   // tangential damping on contact
    const double global_damp = boxed ? 0.995 : 1.0;
    const double dt = cfg.dt;
    for (std::uint32_t f = 0; f < cfg.frames; ++f) {
        Frame fr;
        fr.timestep = f;
        for (const auto& b : boundary) {
            fr.boundary_pos.push_back({static_cast<float>(b.position.x),
                                       static_cast<float>(b.position.y),
                                       static_cast<float>(b.position.z)});
            fr.boundary_normal.push_back({static_cast<float>(b.normal.x),
                                          static_cast<float>(b.normal.y),
                                          static_cast<float>(b.normal.z)});
        }
        for (std::size_t i = 0; i < pos.size(); ++i) {
            fr.fluid_pos.push_back({static_cast<float>(pos[i].x), static_cast<float>(pos[i].y),
                                    static_cast<float>(pos[i].z)});
            fr.fluid_vel.push_back({static_cast<float>(vel[i].x), static_cast<float>(vel[i].y),
                                    static_cast<float>(vel[i].z)});
        }
        write_frame_file(fr, out_dir + "/" + frame_filename(f));
        // exact constant-acceleration step, then contact handling
        for (std::size_t i = 0; i < pos.size(); ++i) {
            Vec3& x = pos[i];
            Vec3& v = vel[i];
            x += v * dt + cfg.gravity * (0.5 * dt * dt);
            v += cfg.gravity * dt;
            bool on_floor = x.y < 0.0;
            detail::clamp_axis(x.y, v.y, 0.0, boxed ? box : 1e30, restitution);
            if (on_floor) {
                v.x *= floor_friction;
                v.z *= floor_friction;
            }
            if (boxed) {
                detail::clamp_axis(x.x, v.x, 0.0, box, restitution);
                detail::clamp_axis(x.z, v.z, 0.0, box, restitution);
            }
            v = v * global_damp;
        }
    }
}

}  // namespace ff
