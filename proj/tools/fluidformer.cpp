// Command-line frontend: dataset synthesis, training, rollout, evaluation,
// and gradient checking.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "fluidformer/dataset.hpp"
#include "fluidformer/gradcheck.hpp"
#include "fluidformer/metrics.hpp"
#include "fluidformer/network.hpp"
#include "fluidformer/sim.hpp"
#include "fluidformer/train.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNan = 3;

std::vector<ff::Vec3> frame_fluid(const ff::Frame& f) {
    std::vector<ff::Vec3> out;
    out.reserve(f.fluid_pos.size());
    for (const auto& p : f.fluid_pos) out.push_back({p[0], p[1], p[2]});
    return out;
}

std::vector<std::string> sorted_frames(const std::string& dir) {
    namespace fs = std::filesystem;
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".flf" &&
            e.path().filename().string().rfind("frame_", 0) == 0)
            out.push_back(e.path().string());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fluidformer: learned particle fluid simulator"};
    app.require_subcommand(1);

    // --- make-dataset ---
    auto* mk = app.add_subcommand("make-dataset", "synthesize a toy trajectory dataset");
    std::string mk_kind = "ballistic", mk_out;
    std::uint64_t mk_seed = 1;
    ff::ToyDatasetConfig mk_cfg;
    mk->add_option("--kind", mk_kind, "ballistic | damped-box");
    mk->add_option("--out", mk_out, "output directory")->required();
    mk->add_option("--seed", mk_seed, "rng seed");
    mk->add_option("--frames", mk_cfg.frames, "number of frames");

    // --- train ---
    auto* tr = app.add_subcommand("train", "train on a trajectory dataset");
    std::string tr_data, tr_out, tr_profile = "desk";
    ff::TrainConfig tr_cfg;
    bool tr_iters_set = false;
    tr->add_option("--data", tr_data, "dataset directory")->required();
    tr->add_option("--out", tr_out, "output directory")->required();
    tr->add_option("--iters", tr_cfg.iterations, "iterations this invocation")
        ->each([&](const std::string&) { tr_iters_set = true; });
    tr->add_option("--seed", tr_cfg.seed, "rng seed");
    tr->add_option("--profile", tr_profile, "desk (2k iters) | full (60k iters)")
        ->check(CLI::IsMember({"desk", "full"}));

    // --- simulate ---
    auto* sim = app.add_subcommand("simulate", "roll out a scene");
    std::string sim_scene, sim_ckpt, sim_out;
    std::size_t sim_frames = 100;
    std::uint64_t sim_seed = 1234;
    sim->add_option("--scene", sim_scene, "scene file")->required();
    sim->add_option("--ckpt", sim_ckpt, "checkpoint (omit for untrained weights)");
    sim->add_option("--out", sim_out, "output directory")->required();
    sim->add_option("--frames", sim_frames, "frames to roll out");
    sim->add_option("--seed", sim_seed, "weight-init seed when no checkpoint is given");

    // --- eval ---
    auto* ev = app.add_subcommand("eval", "compare prediction frames against ground truth");
    std::string ev_pred, ev_truth, ev_out, ev_metrics = "cd,emd,nse,mde";
    double ev_spacing = 0.05;
    ev->add_option("--pred", ev_pred, "predicted frame directory")->required();
    ev->add_option("--truth", ev_truth, "ground-truth frame directory")->required();
    ev->add_option("--out", ev_out, "metrics csv path")->required();
    ev->add_option("--metrics", ev_metrics, "comma list of cd,emd,nse,mde");
    ev->add_option("--spacing", ev_spacing, "particle spacing (for density error)");

    // --- gradcheck ---
    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    std::string gc_data;
    std::size_t gc_samples = 2;
    double gc_tol = 1e-3;
    gc->add_option("--data", gc_data, "dataset directory (defaults to a built-in toy set)");
    gc->add_option("--samples", gc_samples, "sampled entries per parameter");
    gc->add_option("--tol", gc_tol, "max relative error");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*mk) {
            ff::make_toy_dataset(mk_kind, mk_seed, mk_out, mk_cfg);
            std::cout << "wrote " << mk_cfg.frames << " frames to " << mk_out << "\n";
        } else if (*tr) {
            if (tr_profile == "full" && !tr_iters_set) tr_cfg.iterations = 60000;
            auto ds = ff::TrajectoryDataset::load(tr_data);
            try {
                ff::train(ds, tr_cfg, ff::NetworkConfig{}, tr_out);
            } catch (const ff::TrainHaltError& e) {
                std::cerr << e.what() << "\n";
                return kExitNan;
            }
        } else if (*sim) {
            ff::Scene scene = ff::parse_scene_file(sim_scene);
            ff::ParticleSystem sys = ff::init_scene(scene);
            ff::ParamRegistry params;
            ff::FluidFormerNet net;
            ff::NetworkConfig nc;
            nc.radius = scene.radius;
            nc.seed = sim_seed;
            net.init(nc, params, 1.0 / scene.spacing);
            if (!sim_ckpt.empty()) params.load(sim_ckpt);
            try {
                ff::rollout(net, params, scene, sys, sim_frames, sim_out, sim_seed, sim_scene,
                            sim_ckpt);
            } catch (const ff::RolloutNanError& e) {
                std::cerr << e.what() << "\n";
                return kExitNan;
            }
            std::cout << "wrote " << sim_frames + 1 << " frames to " << sim_out << "\n";
        } else if (*ev) {
            auto pred_paths = sorted_frames(ev_pred);
            auto truth_paths = sorted_frames(ev_truth);
            std::size_t n = std::min(pred_paths.size(), truth_paths.size());
            if (n == 0) throw std::runtime_error("eval: no frame pairs found");
            std::vector<std::vector<ff::Vec3>> pred, truth;
            for (std::size_t i = 0; i < n; ++i) {
                pred.push_back(frame_fluid(ff::read_frame_file(pred_paths[i])));
                truth.push_back(frame_fluid(ff::read_frame_file(truth_paths[i])));
            }
            auto want = [&](const std::string& m) {
                return ("," + ev_metrics + ",").find("," + m + ",") != std::string::npos;
            };
            std::ofstream csv(ev_out);
            csv << "metric,frame,value,units\n";
            for (std::size_t i = 0; i < n; ++i) {
                if (want("cd"))
                    csv << "cd," << i << "," << ff::chamfer(pred[i], truth[i]) << ",mm\n";
                if (want("emd")) {
                    auto r = ff::emd(pred[i], truth[i]);
                    csv << "emd," << i << "," << r.mm << "," << (r.exact ? "mm" : "mm~approx")
                        << "\n";
                }
                if (want("mde"))
                    csv << "mde," << i << "," << ff::max_density_error(pred[i], ev_spacing)
                        << ",g/cm3\n";
            }
            if (want("nse"))
                csv << "nse,all," << ff::sequence_error(pred, truth, n) << ",mm\n";
            std::cout << "wrote " << ev_out << "\n";
        } else if (*gc) {
            namespace fs = std::filesystem;
            std::string data = gc_data;
            if (data.empty()) {
                data = (fs::temp_directory_path() / "ff_gradcheck_data").string();
                ff::ToyDatasetConfig cfg;
                cfg.frames = 4;
                ff::make_toy_dataset("ballistic", 3, data, cfg);
            }
            auto ds = ff::TrajectoryDataset::load(data);
            const ff::Scene& scene = ds.scenes[0].scene;
            ff::TrainingWindow win = ds.window(ds.windows[0]);
            ff::ParamRegistry params;
            ff::FluidFormerNet net;
            ff::NetworkConfig nc;
            nc.radius = scene.radius;
            net.init(nc, params, 1.0 / scene.spacing);
            ff::LossConfig lc;
            auto loss_fn = [&]() {
                ff::ad::Tape tape;
                ff::NetCtx ctx{tape, params, true};
                return ff::composite_loss(ctx, net, win, scene, lc)->value.data[0];
            };
            auto grad_fn = [&]() {
                ff::ad::Tape tape;
                ff::NetCtx ctx{tape, params, true};
                ff::ad::Var loss = ff::composite_loss(ctx, net, win, scene, lc);
                tape.backward(loss);
                std::unordered_map<std::string, std::vector<double>> g;
                for (const auto& [name, var] : ctx.bound)
                    if (var->requires_grad) g[name] = var->grad;
                return g;
            };
            auto rep = ff::gradient_check(params, loss_fn, grad_fn, gc_samples);
            std::cout << "checked " << rep.entries.size() << " entries, max rel err "
                      << rep.max_rel_err << " (" << rep.worst.param << "[" << rep.worst.index
                      << "]: analytic " << rep.worst.analytic << " vs fd " << rep.worst.numeric
                      << ")\n";
            if (!rep.passed(gc_tol)) {
                std::cerr << "gradient check failed (tol " << gc_tol << ")\n";
                return 1;
            }
            std::cout << "gradient check passed\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitOk;
}
