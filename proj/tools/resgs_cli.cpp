// Command-line surface: synthetic-scene generation, training, rendering,
// evaluation, the gradient-check suite and the residual-vs-baseline
// comparison run.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "resgs/gradcheck.hpp"
#include "resgs/io.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fs = std::filesystem;
using namespace resgs;

namespace {

void apply_threads(int threads) {
#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
#else
    (void)threads;
#endif
}

TrainConfig resolve_config(const std::string& config_path, const std::string& mode, int iterations,
                           long long seed, double tau) {
    TrainConfig cfg = config_path.empty() ? TrainConfig{} : load_train_config(config_path);
    if (!mode.empty()) cfg.densify.mode = densify_mode_from_string(mode);
    if (iterations > 0) cfg.total_iterations = iterations;
    if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
    if (tau > 0.0) cfg.densify.tau = tau;
    return cfg;
}

int run_train(const Dataset& dataset, const TrainConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    const std::string hash = config_hash(cfg);
    CheckpointSink sink;
    if (cfg.checkpoint_interval > 0) {
        sink = [&](const GaussianCloud& cloud, int iteration) {
            char name[64];
            std::snprintf(name, sizeof(name), "checkpoint_%06d.ply", iteration);
            save_checkpoint(cloud, (fs::path(out_dir) / name).string(), false, hash);
        };
    }
    TrainResult result = train(dataset, cfg, sink);
    save_checkpoint(result.cloud, (fs::path(out_dir) / "final.ply").string(), true, hash);
    write_metrics_csv(result.log, (fs::path(out_dir) / "metrics.csv").string());
    write_densify_events_csv(result.log, (fs::path(out_dir) / "events.csv").string());
    std::ofstream cfg_out(fs::path(out_dir) / "config.json");
    cfg_out << train_config_to_json(cfg) << "\n";
    if (!result.log.rows.empty()) {
        const RunLogRow& last = result.log.rows.back();
        std::cout << "final: iteration=" << last.iteration << " psnr=" << last.psnr
                  << " ssim=" << last.ssim << " count=" << last.count << "\n";
    }
    std::cout << "wrote " << out_dir << "/final.ply and metrics.csv\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"resgs: residual-split 3D Gaussian splatting trainer/renderer"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "worker thread count (0 = library default)");

    // make-synthetic
    auto* sc_make = app.add_subcommand("make-synthetic", "generate a synthetic scene dataset");
    std::string make_out = "scene";
    SyntheticSpec spec;
    std::string init_mode = "groundtruth-perturbed";
    long long make_seed = 0;
    sc_make->add_option("--out", make_out, "output directory");
    sc_make->add_option("--gaussians", spec.n_gaussians, "ground-truth Gaussian count");
    sc_make->add_option("--train-views", spec.n_train_views, "training view count");
    sc_make->add_option("--test-views", spec.n_test_views, "held-out view count");
    sc_make->add_option("--resolution", spec.resolution, "image resolution (square)");
    sc_make->add_option("--seed", make_seed, "rng seed");
    sc_make->add_option("--sh-degree", spec.sh_degree, "SH degree of the ground truth");
    sc_make->add_option("--init-mode", init_mode, "groundtruth-perturbed | random");
    sc_make->add_option("--points", spec.init_point_count, "initial point count (0 = one per Gaussian)");

    // train
    auto* sc_train = app.add_subcommand("train", "train a cloud on a dataset");
    std::string train_data, train_config_path, train_out = "run", train_mode;
    int train_iters = 0;
    long long train_seed = -1;
    double train_tau = 0.0;
    sc_train->add_option("--data", train_data, "dataset manifest.json")->required();
    sc_train->add_option("--config", train_config_path, "training config json");
    sc_train->add_option("--out", train_out, "output directory");
    sc_train->add_option("--mode", train_mode, "residual-split | baseline-split-clone");
    sc_train->add_option("--iterations", train_iters, "override total iterations");
    sc_train->add_option("--seed", train_seed, "override seed");
    sc_train->add_option("--tau", train_tau, "override densify tau");

    // render
    auto* sc_render = app.add_subcommand("render", "render a checkpoint from a dataset camera");
    std::string render_ckpt, render_data, render_out = "render.ppm";
    int render_view = 0;
    sc_render->add_option("--checkpoint", render_ckpt, "checkpoint .ply")->required();
    sc_render->add_option("--data", render_data, "dataset manifest.json")->required();
    sc_render->add_option("--view", render_view, "view index");
    sc_render->add_option("--out", render_out, "output image (.ppm or .rimg)");

    // eval
    auto* sc_eval = app.add_subcommand("eval", "evaluate a checkpoint against a dataset split");
    std::string eval_ckpt, eval_data, eval_split = "test";
    sc_eval->add_option("--checkpoint", eval_ckpt, "checkpoint .ply")->required();
    sc_eval->add_option("--data", eval_data, "dataset manifest.json")->required();
    sc_eval->add_option("--split", eval_split, "test | train | all");

    // gradcheck
    auto* sc_grad = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    GradCheckConfig gc;
    long long gc_seed = 7;
    sc_grad->add_option("--seed", gc_seed, "rng seed");
    sc_grad->add_option("--scenes", gc.scenes, "number of random scenes");

    // compare
    auto* sc_cmp = app.add_subcommand("compare", "train residual-split and baseline from one seed");
    std::string cmp_data, cmp_config_path, cmp_out = "compare.csv", cmp_dir;
    long long cmp_seed = -1;
    sc_cmp->add_option("--data", cmp_data, "dataset manifest.json")->required();
    sc_cmp->add_option("--config", cmp_config_path, "training config json");
    sc_cmp->add_option("--out", cmp_out, "output csv path");
    sc_cmp->add_option("--run-dir", cmp_dir, "optional directory for per-mode outputs");
    sc_cmp->add_option("--seed", cmp_seed, "override seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    apply_threads(threads);
    try {
        if (*sc_make) {
            spec.seed = static_cast<uint64_t>(make_seed);
            spec.init_mode = init_mode == "random" ? InitMode::Random : InitMode::GroundTruthPerturbed;
            if (init_mode != "random" && init_mode != "groundtruth-perturbed")
                throw LoadError("unknown init mode: " + init_mode);
            write_synthetic(spec, make_out);
            std::cout << "wrote " << make_out << "/manifest.json (" << spec.n_train_views << " train + "
                      << spec.n_test_views << " test views)\n";
        } else if (*sc_train) {
            Dataset ds = load_dataset(train_data);
            TrainConfig cfg = resolve_config(train_config_path, train_mode, train_iters, train_seed, train_tau);
            return run_train(ds, cfg, train_out);
        } else if (*sc_render) {
            GaussianCloud cloud = load_checkpoint(render_ckpt);
            Dataset ds = load_dataset(render_data);
            if (render_view < 0 || render_view >= static_cast<int>(ds.cameras.size()))
                throw LoadError("view index out of range: " + std::to_string(render_view));
            RenderOutput out = render(ds.cameras[render_view], cloud, Vec3{}, cloud.sh_degree);
            save_image(out.image, render_out);
            std::cout << "wrote " << render_out << "\n";
        } else if (*sc_eval) {
            GaussianCloud cloud = load_checkpoint(eval_ckpt);
            Dataset ds = load_dataset(eval_data);
            std::vector<int> views;
            if (eval_split == "test")
                views = ds.test_indices;
            else if (eval_split == "train")
                views = ds.train_indices;
            else if (eval_split == "all")
                for (size_t i = 0; i < ds.cameras.size(); ++i) views.push_back(static_cast<int>(i));
            else
                throw LoadError("unknown split: " + eval_split);
            auto [p, s] = evaluate(cloud, ds, views, Vec3{}, RenderSettings{}, LossConfig{});
            std::cout << "views=" << views.size() << " psnr=" << p << " ssim=" << s << "\n";
        } else if (*sc_grad) {
            gc.seed = static_cast<uint64_t>(gc_seed);
            GradCheckResult res = run_gradcheck(gc, &std::cout);
            std::cout << "checked " << res.checked_params << " parameters, max relative error "
                      << res.max_rel_error << "\n";
            if (!res.passed(gc)) {
                std::cerr << "gradcheck FAILED (" << res.failures << " parameters over tolerance)\n";
                return 1;
            }
            std::cout << "gradcheck passed\n";
        } else if (*sc_cmp) {
            Dataset ds = load_dataset(cmp_data);
            TrainConfig cfg = resolve_config(cmp_config_path, "", 0, cmp_seed, 0.0);
            cfg.densify.mode = DensifyMode::ResidualSplit;
            TrainResult res_rs = train(ds, cfg);
            cfg.densify.mode = DensifyMode::BaselineSplitClone;
            TrainResult res_base = train(ds, cfg);
            write_compare_csv("residual-split", res_rs.log, "baseline-split-clone", res_base.log, cmp_out);
            if (!cmp_dir.empty()) {
                fs::create_directories(cmp_dir);
                save_checkpoint(res_rs.cloud, (fs::path(cmp_dir) / "residual.ply").string(), true);
                save_checkpoint(res_base.cloud, (fs::path(cmp_dir) / "baseline.ply").string(), true);
            }
            std::cout << "wrote " << cmp_out << "\n";
        }
    } catch (const LoadError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        // config / argument validation
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
