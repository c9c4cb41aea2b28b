#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "fluidformer/geometry.hpp"
#include "fluidformer/network.hpp"

namespace ff {

struct StepReport {
    std::uint32_t timestep = 0;
    double wall_seconds = 0.0;
    double max_correction = 0.0;  // max |dx| component
    double max_speed = 0.0;
    bool nan_detected = false;
};

// Heun predictor under gravity:
//   v~ = v + dt*g,  x~ = x + dt*(v + v~)/2
inline void predict(const ParticleSystem& sys, const Vec3& gravity, double dt,
                    std::vector<Vec3>& x_tilde, std::vector<Vec3>& v_tilde) {
    if (dt <= 0) throw std::invalid_argument("predict: dt must be > 0");
    const std::size_t n = sys.fluid.size();
    x_tilde.resize(n);
    v_tilde.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& p = sys.fluid[i];
        v_tilde[i] = p.velocity + gravity * dt;
        x_tilde[i] = p.position + (p.velocity + v_tilde[i]) * (dt * 0.5);
    }
}

// State update: x' = x~ + dx, v' = (x' - x)/dt.
inline void correct_and_update(ParticleSystem& sys, const std::vector<Vec3>& x_tilde,
                               const std::vector<Vec3>& v_tilde, const Tensor& dx, double dt) {
    const std::size_t n = sys.fluid.size();
    if (x_tilde.size() != n || v_tilde.size() != n || dx.rank() != 2 || dx.rows() != n ||
        dx.cols() != 3)
        throw std::invalid_argument("correct_and_update: shape mismatch");
    for (std::size_t i = 0; i < n; ++i) {
        Vec3 corr(dx.at(i, 0), dx.at(i, 1), dx.at(i, 2));
        sys.fluid[i].position = x_tilde[i] + corr;
        // velocity follows the corrected prediction; with zero correction the
        // midpoint step is exact for constant acceleration
        sys.fluid[i].velocity = v_tilde[i] + corr * (1.0 / dt);
    }
}

inline bool system_finite(const ParticleSystem& sys) {
    for (const auto& p : sys.fluid)
        if (!p.position.finite() || !p.velocity.finite()) return false;
    return true;
}

struct RolloutNanError : std::runtime_error {
    RolloutNanError(std::uint32_t last_good)
        : std::runtime_error("rollout: non-finite state after frame " +
                             std::to_string(last_good)),
          last_good_frame(last_good) {}
    std::uint32_t last_good_frame;
};

inline std::string frame_filename(std::uint32_t idx) {
    std::ostringstream os;
    os << "frame_" << std::setw(6) << std::setfill('0') << idx << ".flf";
    return os.str();
}

inline std::uint64_t fnv1a_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::uint64_t h = 1469598103934665603ull;
    char buf[4096];
    while (f) {
        f.read(buf, sizeof(buf));
        for (std::streamsize i = 0; i < f.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ull;
        }
    }
    return h;
}

// Runs predict -> network correction -> update for n_frames steps, writing a
// frame file per step plus a run manifest and per-step timing CSV.
inline std::vector<StepReport> rollout(const FluidFormerNet& net, ParamRegistry& params,
                                       const Scene& scene, ParticleSystem sys,
                                       std::size_t n_frames, const std::string& out_dir,
                                       std::uint64_t seed = 0,
                                       const std::string& scene_path = "",
                                       const std::string& ckpt_path = "") {
    if (n_frames < 1) throw std::invalid_argument("rollout: n_frames must be >= 1");
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    write_frame_file(to_frame(sys, 0), out_dir + "/" + frame_filename(0));

    std::vector<StepReport> reports;
    std::vector<Vec3> x_tilde, v_tilde;
    for (std::uint32_t step = 1; step <= n_frames; ++step) {
        auto t0 = std::chrono::steady_clock::now();
        predict(sys, scene.gravity, scene.dt, x_tilde, v_tilde);
        // network sees the intermediate state it corrects
        ParticleSystem inter = sys;
        for (std::size_t i = 0; i < sys.fluid.size(); ++i) {
            inter.fluid[i].position = x_tilde[i];
            inter.fluid[i].velocity = v_tilde[i];
        }
        Tensor dx = network_forward(net, params, inter, /*training=*/false);
        correct_and_update(sys, x_tilde, v_tilde, dx, scene.dt);

        StepReport rep;
        rep.timestep = step;
        for (std::size_t i = 0; i < sys.fluid.size(); ++i) {
            for (int c = 0; c < 3; ++c)
                rep.max_correction = std::max(rep.max_correction, std::abs(dx.at(i, c)));
            rep.max_speed = std::max(rep.max_speed, sys.fluid[i].velocity.norm());
        }
        rep.nan_detected = !system_finite(sys) || !dx.all_finite();
        auto t1 = std::chrono::steady_clock::now();
        rep.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
        reports.push_back(rep);
        if (rep.nan_detected) throw RolloutNanError(step - 1);
        write_frame_file(to_frame(sys, step), out_dir + "/" + frame_filename(step));
    }

    {
        std::ofstream csv(out_dir + "/timings.csv");
        csv << "step,wall_seconds,max_correction,max_speed\n";
        for (const auto& r : reports)
            csv << r.timestep << "," << r.wall_seconds << "," << r.max_correction << ","
                << r.max_speed << "\n";
    }
    {
        std::ofstream man(out_dir + "/manifest.txt");
        man << "seed = " << seed << "\n";
        man << "frames = " << n_frames << "\n";
        if (!scene_path.empty()) man << "scene_hash = " << fnv1a_file(scene_path) << "\n";
        if (!ckpt_path.empty()) man << "params_hash = " << fnv1a_file(ckpt_path) << "\n";
    }
    return reports;
}

}  // namespace ff
