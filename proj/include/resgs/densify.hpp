#pragma once

// Density-control operators: residual split, baseline split/clone, the
// level-aware varying-threshold selection, pruning and periodic opacity
// reduction. All mutation happens at synchronization points between optimizer
// steps; selection is pure.

#include <string>
#include <vector>

#include "resgs/gauss_model.hpp"
#include "resgs/rasterizer.hpp"

namespace resgs {

enum class DensifyMode { ResidualSplit, BaselineSplitClone };
enum class GradSource { Signed, Absolute };

struct DensifyConfig {
    double tau = 0.00028;              // base gradient threshold
    double alpha = 1.2599210498948732; // 2^(1/3), threshold base; > 1
    double lambda_s = 1.6;             // residual-split scale divisor; > 1
    double beta = 0.3;                 // residual-split opacity factor; in (0, 1)
    DensifyMode mode = DensifyMode::ResidualSplit;
    GradSource grad_source = GradSource::Absolute;
    double baseline_percent_dense = 0.01;  // the k in tau_s = k R
    double scene_extent = 0.0;             // R; <= 0 means "compute from cameras"
    double prune_opacity_eps = 0.005;
    double opacity_reduction_factor = 0.6;
    int opacity_reduction_interval = 600;  // iterations; 0 disables
    int densify_interval = 100;
    int densify_start_iteration = 100;
    int densify_stop_iteration = 1200;

    void validate() const;
};

struct DensifyCreated {
    uint32_t id = 0;
    uint32_t parent_id = 0;
    int level = 0;
};

// One densification / prune event. `removed_indices` are indices valid at the
// moment of removal (after any appends of the same event), in removal order,
// so optimizer state can replay the exact same structural edits.
struct DensifyReport {
    std::vector<uint32_t> selected_ids;
    std::vector<DensifyCreated> created;
    std::vector<uint32_t> pruned_ids;
    std::vector<size_t> removed_indices;
    size_t count_before = 0;
    size_t count_after = 0;
};

// Varying threshold: tau when level >= substage k, tau / alpha^(k - level) below.
double threshold_for(int level, int substage_k, const DensifyConfig& cfg);

// Ids (ascending) of Gaussians whose windowed average viewspace gradient meets
// the level-dependent threshold. Comparison is inclusive (>=); unobserved
// Gaussians are never selected.
std::vector<uint32_t> select(const ViewspaceGradStats& stats, const GaussianCloud& cloud, int substage_k,
                             const DensifyConfig& cfg);

// Adds a downscaled replica (scales / lambda_s, position sampled from the
// parent's distribution, level + 1), then multiplies the parent's opacity by
// beta. The parent's scale and position are untouched. Throws IdNotFound.
void residual_split(GaussianCloud& cloud, uint32_t gid, const DensifyConfig& cfg, Rng& rng,
                    DensifyReport& report);

// 3D-GS split/clone: large Gaussians (max scale >= percent_dense * extent) are
// replaced by two sampled children with scales / 1.6; small ones are cloned
// verbatim. Children inherit the parent's level. Throws IdNotFound.
void baseline_densify(GaussianCloud& cloud, uint32_t gid, const DensifyConfig& cfg, Rng& rng,
                      DensifyReport& report);

// Removes every Gaussian with opacity below eps.
void prune(GaussianCloud& cloud, double eps, DensifyReport& report);

// opacity <- factor * opacity for every Gaussian, in activated space.
void opacity_reduction(GaussianCloud& cloud, double factor);

// 1.1 x radius of the camera-center bounding sphere.
double scene_extent_from_cameras(const std::vector<Camera>& cameras);

const char* to_string(DensifyMode mode);
const char* to_string(GradSource src);
DensifyMode densify_mode_from_string(const std::string& s);
GradSource grad_source_from_string(const std::string& s);

}  // namespace resgs
