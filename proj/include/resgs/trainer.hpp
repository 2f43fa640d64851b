#pragma once

// End-to-end optimization loop: per-group adaptive gradient descent with an
// exponentially decayed position rate, pyramid-staged supervision, the
// densification clock, and run bookkeeping. Deterministic: the same config and
// seed produce a bit-identical cloud at any thread count.

#include <functional>
#include <vector>

#include "resgs/densify.hpp"
#include "resgs/gauss_model.hpp"
#include "resgs/image.hpp"
#include "resgs/loss.hpp"
#include "resgs/rasterizer.hpp"
#include "resgs/schedule.hpp"

namespace resgs {

struct Dataset {
    std::vector<Camera> cameras;
    std::vector<Image> images;
    std::vector<int> train_indices;
    std::vector<int> test_indices;
    std::vector<Vec3> init_positions;
    std::vector<Vec3> init_colors;  // in [0, 1]
};

struct OptimizerConfig {
    double lr_position_init = 1.6e-4;
    double lr_position_final = 1.6e-6;
    double lr_sh = 2.5e-3;
    double lr_opacity = 5e-2;
    double lr_scale = 5e-3;
    double lr_rotation = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-15;

    void validate() const;
};

struct TrainConfig {
    int total_iterations = 3000;
    OptimizerConfig optimizer;
    LossConfig loss;
    DensifyConfig densify;
    RenderSettings render;
    // Cumulative stage ends as fractions of total_iterations (used when
    // stage_boundaries is empty); defaults follow the 2500/3500/rest split.
    std::vector<double> stage_fractions = {2500.0 / 30000.0, 6000.0 / 30000.0, 1.0};
    std::vector<int> stage_boundaries;  // absolute; overrides fractions when non-empty
    int substages_per_stage = 3;  // K
    int sh_degree = 1;
    Vec3 background;
    uint64_t seed = 0;
    int eval_interval = 100;
    int checkpoint_interval = 0;  // 0 disables

    StageClock make_clock() const;
    void validate() const;
};

struct RunLogRow {
    int iteration = 0;  // 1-based: state after this many iterations
    double train_loss = 0.0;
    double psnr = 0.0;
    double ssim = 0.0;
    size_t count = 0;
    int stage = 1;
    int substage = 0;
    int max_level = 0;
    std::vector<int> level_histogram;
};

struct DensifyEvent {
    int iteration = 0;
    std::string kind;  // "densify" or "prune"
    DensifyReport report;
};

struct RunLog {
    std::vector<RunLogRow> rows;
    std::vector<DensifyEvent> events;
    size_t skipped_gaussian_steps = 0;
};

struct TrainResult {
    GaussianCloud cloud;
    RunLog log;
};

// Per-group first/second moment state, rows aligned with cloud indices.
struct AdamState {
    struct Group {
        std::vector<double> m, v;
        void init(size_t n, int dim) {
            m.assign(n * dim, 0.0);
            v.assign(m.size(), 0.0);
        }
        void append_zero(size_t count, int dim) {
            m.resize(m.size() + count * dim, 0.0);
            v.resize(m.size(), 0.0);
        }
        void remove_masked(const std::vector<uint8_t>& keep, int dim);
    };
    Group position, log_scale, rotation, opacity, sh;

    void init(size_t n, int sh_stride);
    void append_zero(size_t count, int sh_stride);
    void remove_masked(const std::vector<uint8_t>& keep, int sh_stride);
};

// Log-linear position learning rate: lr_init at iteration 0, lr_final at total.
double position_lr_at(int iteration, const OptimizerConfig& cfg, int total_iterations);

// One adaptive-moment step over every parameter group; Gaussians with any
// non-finite gradient are skipped (returned count). Quaternions are NOT
// renormalized here.
size_t optimizer_step(GaussianCloud& cloud, const CloudGradients& grads, AdamState& state, int iteration,
                      const OptimizerConfig& cfg, int total_iterations);

// Mean held-out metrics at full resolution.
std::pair<double, double> evaluate(const GaussianCloud& cloud, const Dataset& dataset,
                                   const std::vector<int>& view_indices, const Vec3& background,
                                   const RenderSettings& settings, const LossConfig& loss_cfg);

// Builds the initial cloud from the dataset's point set: SH degree-0 from
// point color, scales from the mean distance to the 3 nearest neighbors,
// opacity 0.1, identity rotation, level 0.
GaussianCloud init_cloud_from_points(const Dataset& dataset, int sh_degree);

using CheckpointSink = std::function<void(const GaussianCloud&, int iteration)>;

TrainResult train(const Dataset& dataset, const TrainConfig& config,
                  const CheckpointSink& checkpoint_sink = nullptr);

}  // namespace resgs
