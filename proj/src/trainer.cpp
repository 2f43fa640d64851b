#include "resgs/trainer.hpp"

#include <algorithm>
#include <cmath>

namespace resgs {

void OptimizerConfig::validate() const {
    for (double lr : {lr_position_init, lr_position_final, lr_sh, lr_opacity, lr_scale, lr_rotation})
        if (!(lr > 0.0)) throw std::invalid_argument("optimizer: learning rates must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
        throw std::invalid_argument("optimizer: betas must be in [0, 1)");
    if (!(eps > 0.0)) throw std::invalid_argument("optimizer: eps must be positive");
}

StageClock TrainConfig::make_clock() const {
    StageClock clock;
    clock.substages_per_stage = substages_per_stage;
    clock.stage_boundaries =
        stage_boundaries.empty() ? boundaries_from_fractions(stage_fractions, total_iterations)
                                 : stage_boundaries;
    return clock;
}

void TrainConfig::validate() const {
    if (total_iterations < 1) throw std::invalid_argument("config: total_iterations must be >= 1");
    optimizer.validate();
    densify.validate();
    if (densify.densify_stop_iteration > total_iterations)
        throw std::invalid_argument("config: densify stop exceeds total_iterations");
    if (sh_degree < 0 || sh_degree > 3) throw std::invalid_argument("config: sh_degree must be in 0..3");
    if (eval_interval < 0 || checkpoint_interval < 0)
        throw std::invalid_argument("config: intervals must be >= 0");
    StageClock clock = make_clock();
    clock.validate();
    if (clock.total_iterations() != total_iterations)
        throw std::invalid_argument("config: last stage boundary must equal total_iterations");
}

void AdamState::Group::remove_masked(const std::vector<uint8_t>& keep, int dim) {
    size_t w = 0;
    for (size_t i = 0; i < keep.size(); ++i) {
        if (!keep[i]) continue;
        for (int k = 0; k < dim; ++k) {
            m[w * dim + k] = m[i * dim + k];
            v[w * dim + k] = v[i * dim + k];
        }
        ++w;
    }
    m.resize(w * dim);
    v.resize(w * dim);
}

void AdamState::init(size_t n, int sh_stride) {
    position.init(n, 3);
    log_scale.init(n, 3);
    rotation.init(n, 4);
    opacity.init(n, 1);
    sh.init(n, sh_stride);
}

void AdamState::append_zero(size_t count, int sh_stride) {
    position.append_zero(count, 3);
    log_scale.append_zero(count, 3);
    rotation.append_zero(count, 4);
    opacity.append_zero(count, 1);
    sh.append_zero(count, sh_stride);
}

void AdamState::remove_masked(const std::vector<uint8_t>& keep, int sh_stride) {
    position.remove_masked(keep, 3);
    log_scale.remove_masked(keep, 3);
    rotation.remove_masked(keep, 4);
    opacity.remove_masked(keep, 1);
    sh.remove_masked(keep, sh_stride);
}

double position_lr_at(int iteration, const OptimizerConfig& cfg, int total_iterations) {
    double t = std::clamp(static_cast<double>(iteration) / total_iterations, 0.0, 1.0);
    return std::exp(std::log(cfg.lr_position_init) * (1.0 - t) + std::log(cfg.lr_position_final) * t);
}

namespace {

inline void adam_update(double* param, double* m, double* v, const double* g, int dim, double lr,
                        const OptimizerConfig& cfg, double bc1, double bc2) {
    for (int k = 0; k < dim; ++k) {
        m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
        v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
        double mhat = m[k] / bc1;
        double vhat = v[k] / bc2;
        param[k] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

}  // namespace

size_t optimizer_step(GaussianCloud& cloud, const CloudGradients& grads, AdamState& state, int iteration,
                      const OptimizerConfig& cfg, int total_iterations) {
    const size_t n = cloud.size();
    const int stride = cloud.sh_stride();
    const double lr_pos = position_lr_at(iteration, cfg, total_iterations);
    const double t = static_cast<double>(iteration) + 1.0;
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);

    size_t skipped = 0;
#pragma omp parallel for schedule(static) reduction(+ : skipped)
    for (long li = 0; li < static_cast<long>(n); ++li) {
        const size_t i = static_cast<size_t>(li);
        bool finite = std::isfinite(grads.opacity_logit[i]);
        for (int k = 0; k < 3 && finite; ++k)
            finite = std::isfinite(grads.position[3 * i + k]) && std::isfinite(grads.log_scale[3 * i + k]);
        for (int k = 0; k < 4 && finite; ++k) finite = std::isfinite(grads.rotation[4 * i + k]);
        for (int k = 0; k < stride && finite; ++k) finite = std::isfinite(grads.sh[i * stride + k]);
        if (!finite) {
            skipped += 1;
            continue;
        }
        adam_update(cloud.position.data() + 3 * i, state.position.m.data() + 3 * i,
                    state.position.v.data() + 3 * i, grads.position.data() + 3 * i, 3, lr_pos, cfg, bc1, bc2);
        adam_update(cloud.log_scale.data() + 3 * i, state.log_scale.m.data() + 3 * i,
                    state.log_scale.v.data() + 3 * i, grads.log_scale.data() + 3 * i, 3, cfg.lr_scale, cfg,
                    bc1, bc2);
        adam_update(cloud.rotation.data() + 4 * i, state.rotation.m.data() + 4 * i,
                    state.rotation.v.data() + 4 * i, grads.rotation.data() + 4 * i, 4, cfg.lr_rotation, cfg,
                    bc1, bc2);
        adam_update(cloud.opacity_logit.data() + i, state.opacity.m.data() + i, state.opacity.v.data() + i,
                    grads.opacity_logit.data() + i, 1, cfg.lr_opacity, cfg, bc1, bc2);
        adam_update(cloud.sh.data() + i * stride, state.sh.m.data() + i * stride,
                    state.sh.v.data() + i * stride, grads.sh.data() + i * stride, stride, cfg.lr_sh, cfg,
                    bc1, bc2);
    }
    cloud.bump();
    return skipped;
}

std::pair<double, double> evaluate(const GaussianCloud& cloud, const Dataset& dataset,
                                   const std::vector<int>& view_indices, const Vec3& background,
                                   const RenderSettings& settings, const LossConfig& loss_cfg) {
    if (view_indices.empty()) throw std::invalid_argument("evaluate: no views");
    double psnr_sum = 0.0, ssim_sum = 0.0;
    for (int vi : view_indices) {
        RenderOutput out = render(dataset.cameras[vi], cloud, background, cloud.sh_degree, settings);
        psnr_sum += psnr(out.image, dataset.images[vi]);
        ssim_sum += ssim(out.image, dataset.images[vi], loss_cfg);
    }
    double n = static_cast<double>(view_indices.size());
    return {psnr_sum / n, ssim_sum / n};
}

GaussianCloud init_cloud_from_points(const Dataset& dataset, int sh_degree) {
    const auto& pts = dataset.init_positions;
    if (pts.empty()) throw std::invalid_argument("init: dataset has no initial point set");
    const size_t n = pts.size();

    // Mean distance to the 3 nearest neighbors; O(n^2) is fine at desk scale.
    std::vector<double> mean_dist(n, 0.01);
    for (size_t i = 0; i < n; ++i) {
        double best[3] = {1e300, 1e300, 1e300};
        for (size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double d = norm(pts[i] - pts[j]);
            if (d < best[0]) {
                best[2] = best[1];
                best[1] = best[0];
                best[0] = d;
            } else if (d < best[1]) {
                best[2] = best[1];
                best[1] = d;
            } else if (d < best[2]) {
                best[2] = d;
            }
        }
        int have = n >= 4 ? 3 : static_cast<int>(n) - 1;
        double sum = 0.0;
        for (int k = 0; k < have; ++k) sum += best[k];
        mean_dist[i] = have > 0 ? std::fmax(sum / have, 1e-6) : 0.01;
    }

    GaussianCloud cloud;
    cloud.sh_degree = sh_degree;
    int stride = cloud.sh_stride();
    for (size_t i = 0; i < n; ++i) {
        std::vector<double> sh(stride, 0.0);
        Vec3 rgb = i < dataset.init_colors.size() ? dataset.init_colors[i] : Vec3{0.5, 0.5, 0.5};
        sh[0] = (rgb.x - 0.5) / kSH0;
        sh[1] = (rgb.y - 0.5) / kSH0;
        sh[2] = (rgb.z - 0.5) / kSH0;
        double ls = std::log(mean_dist[i]);
        cloud.append(pts[i], {ls, ls, ls}, Quat{}, logit(0.1), sh, 0);
    }
    return cloud;
}

namespace {

std::vector<int> level_histogram(const GaussianCloud& cloud) {
    int max_level = 0;
    for (int l : cloud.level) max_level = std::max(max_level, l);
    std::vector<int> hist(max_level + 1, 0);
    for (int l : cloud.level) hist[l] += 1;
    return hist;
}

}  // namespace

TrainResult train(const Dataset& dataset, const TrainConfig& config, const CheckpointSink& checkpoint_sink) {
    config.validate();
    if (dataset.train_indices.empty()) throw std::invalid_argument("train: dataset has no training views");
    for (int vi : dataset.train_indices) dataset.cameras[vi].validate();

    StageClock clock = config.make_clock();
    const int num_levels = clock.num_stages();

    std::vector<Image> train_images;
    train_images.reserve(dataset.train_indices.size());
    for (int vi : dataset.train_indices) train_images.push_back(dataset.images[vi]);
    ImagePyramid pyramid = build_pyramid(train_images, num_levels);

    DensifyConfig dcfg = config.densify;
    if (dcfg.scene_extent <= 0.0) {
        std::vector<Camera> train_cams;
        for (int vi : dataset.train_indices) train_cams.push_back(dataset.cameras[vi]);
        dcfg.scene_extent = scene_extent_from_cameras(train_cams);
    }

    GaussianCloud cloud = init_cloud_from_points(dataset, config.sh_degree);
    AdamState state;
    state.init(cloud.size(), cloud.sh_stride());
    ViewspaceGradStats stats(cloud.size());

    Rng rng(config.seed);
    const int n_train = static_cast<int>(dataset.train_indices.size());
    std::vector<int> order(n_train);
    for (int i = 0; i < n_train; ++i) order[i] = i;

    RunLog log;
    int last_checkpoint_iter = -1;
    const std::vector<int>& eval_views =
        dataset.test_indices.empty() ? dataset.train_indices : dataset.test_indices;

    for (int iter = 0; iter < config.total_iterations; ++iter) {
        if (iter % n_train == 0) rng.shuffle(order);
        const int local = order[iter % n_train];
        const int view = dataset.train_indices[local];

        StagePoint sp = stage_at(iter, clock);
        Camera cam = scale_camera_for_level(dataset.cameras[view], sp.pyramid_level, num_levels);
        const Image& target = pyramid.level(sp.pyramid_level)[local];

        RenderOutput out = render(cam, cloud, config.background, config.sh_degree, config.render);
        auto diverged = [&](const std::string& what) {
            std::string ckpt = last_checkpoint_iter >= 0
                                   ? "last good checkpoint at iteration " + std::to_string(last_checkpoint_iter)
                                   : "no checkpoint taken";
            return TrainingDiverged("train: " + what + " at iteration " + std::to_string(iter) + " (" +
                                    ckpt + ")");
        };
        for (double v : out.image.data)
            if (!std::isfinite(v)) throw diverged("non-finite render");
        LossResult lr = loss(out.image, target, config.loss);
        if (!std::isfinite(lr.value)) throw diverged("non-finite loss");

        CloudGradients grads;
        backward(out, cam, cloud, lr.grad, grads, &stats);
        log.skipped_gaussian_steps +=
            optimizer_step(cloud, grads, state, iter, config.optimizer, config.total_iterations);
        cloud.renormalize_rotations();

        const int done = iter + 1;

        // Densification window boundary.
        if (done % dcfg.densify_interval == 0 && done >= dcfg.densify_start_iteration &&
            done < dcfg.densify_stop_iteration) {
            DensifyReport report;
            report.count_before = cloud.size();
            report.selected_ids = select(stats, cloud, sp.substage_k, dcfg);
            for (uint32_t gid : report.selected_ids) {
                size_t created_before = report.created.size();
                size_t removed_before = report.removed_indices.size();
                if (dcfg.mode == DensifyMode::ResidualSplit)
                    residual_split(cloud, gid, dcfg, rng, report);
                else
                    baseline_densify(cloud, gid, dcfg, rng, report);
                size_t n_created = report.created.size() - created_before;
                if (n_created > 0) {
                    state.append_zero(n_created, cloud.sh_stride());
                    stats.append(n_created);
                }
                for (size_t r = removed_before; r < report.removed_indices.size(); ++r) {
                    std::vector<uint8_t> keep(stats.size(), 1);
                    keep[report.removed_indices[r]] = 0;
                    state.remove_masked(keep, cloud.sh_stride());
                    stats.remove_masked(keep);
                }
            }
            report.count_after = cloud.size();
            log.events.push_back({done, "densify", std::move(report)});
            reset_stats(stats);
        }

        // Periodic opacity reduction, continuing past the densification phase.
        if (dcfg.opacity_reduction_interval > 0 && done % dcfg.opacity_reduction_interval == 0) {
            opacity_reduction(cloud, dcfg.opacity_reduction_factor);
            DensifyReport report;
            report.count_before = cloud.size();
            prune(cloud, dcfg.prune_opacity_eps, report);
            if (!report.removed_indices.empty()) {
                std::vector<uint8_t> keep(stats.size(), 1);
                for (size_t idx : report.removed_indices) keep[idx] = 0;
                state.remove_masked(keep, cloud.sh_stride());
                stats.remove_masked(keep);
            }
            report.count_after = cloud.size();
            log.events.push_back({done, "prune", std::move(report)});
        }

        if (checkpoint_sink && config.checkpoint_interval > 0 && done % config.checkpoint_interval == 0) {
            checkpoint_sink(cloud, done);
            last_checkpoint_iter = done;
        }

        if (config.eval_interval > 0 &&
            (done % config.eval_interval == 0 || done == config.total_iterations)) {
            auto [p, s] = evaluate(cloud, dataset, eval_views, config.background, config.render, config.loss);
            RunLogRow row;
            row.iteration = done;
            row.train_loss = lr.value;
            row.psnr = p;
            row.ssim = s;
            row.count = cloud.size();
            row.stage = sp.stage;
            row.substage = sp.substage_k;
            row.level_histogram = level_histogram(cloud);
            row.max_level = static_cast<int>(row.level_histogram.size()) - 1;
            log.rows.push_back(std::move(row));
        }
    }

    return {std::move(cloud), std::move(log)};
}

}  // namespace resgs
