#include "resgs/densify.hpp"

#include <cmath>

namespace resgs {

void DensifyConfig::validate() const {
    if (!(alpha > 1.0)) throw std::invalid_argument("densify: alpha must be > 1");
    if (!(lambda_s > 1.0)) throw std::invalid_argument("densify: lambda_s must be > 1");
    if (!(beta > 0.0 && beta < 1.0)) throw std::invalid_argument("densify: beta must be in (0, 1)");
    if (densify_interval < 1) throw std::invalid_argument("densify: densify_interval must be >= 1");
    if (opacity_reduction_interval < 0)
        throw std::invalid_argument("densify: opacity_reduction_interval must be >= 0");
    if (opacity_reduction_interval > 0 &&
        !(opacity_reduction_factor > 0.0 && opacity_reduction_factor < 1.0))
        throw std::invalid_argument("densify: opacity_reduction_factor must be in (0, 1)");
    if (!(prune_opacity_eps > 0.0 && prune_opacity_eps < 1.0))
        throw std::invalid_argument("densify: prune_opacity_eps must be in (0, 1)");
    if (!(tau > 0.0)) throw std::invalid_argument("densify: tau must be > 0");
}

double threshold_for(int level, int substage_k, const DensifyConfig& cfg) {
    if (level >= substage_k) return cfg.tau;
    return cfg.tau / std::pow(cfg.alpha, static_cast<double>(substage_k - level));
}

std::vector<uint32_t> select(const ViewspaceGradStats& stats, const GaussianCloud& cloud, int substage_k,
                             const DensifyConfig& cfg) {
    if (stats.size() != cloud.size())
        throw std::invalid_argument("select: stats size does not match cloud");
    std::vector<uint32_t> out;
    for (size_t i = 0; i < cloud.size(); ++i) {
        if (stats.observation_count[i] <= 0) continue;
        double sum = cfg.grad_source == GradSource::Absolute ? stats.abs_grad_norm_sum[i]
                                                             : stats.signed_grad_norm_sum[i];
        double avg = sum / static_cast<double>(stats.observation_count[i]);
        if (avg >= threshold_for(cloud.level[i], substage_k, cfg)) out.push_back(cloud.id[i]);
    }
    return out;  // index order == id order
}

void residual_split(GaussianCloud& cloud, uint32_t gid, const DensifyConfig& cfg, Rng& rng,
                    DensifyReport& report) {
    auto idx = cloud.find_index(gid);
    if (!idx) throw IdNotFound("residual_split: no Gaussian with id " + std::to_string(gid));
    size_t i = *idx;

    const double log_div = std::log(cfg.lambda_s);
    Vec3 child_log_scale = cloud.scales_log(i) - Vec3{log_div, log_div, log_div};
    Vec3 child_pos = sample_position(cloud.pos(i), cloud.scales_log(i), cloud.rot(i), rng);
    std::vector<double> child_sh(cloud.sh_ptr(i), cloud.sh_ptr(i) + cloud.sh_stride());
    int child_level = cloud.level[i] + 1;
    // Child copies the parent's opacity before the reduction below.
    double child_logit = cloud.opacity_logit[i];

    size_t j = cloud.append(child_pos, child_log_scale, cloud.rot(i), child_logit, child_sh, child_level);
    cloud.set_opacity(i, cfg.beta * cloud.opacity(i));
    cloud.bump();

    report.created.push_back({cloud.id[j], gid, child_level});
}

void baseline_densify(GaussianCloud& cloud, uint32_t gid, const DensifyConfig& cfg, Rng& rng,
                      DensifyReport& report) {
    auto idx = cloud.find_index(gid);
    if (!idx) throw IdNotFound("baseline_densify: no Gaussian with id " + std::to_string(gid));
    size_t i = *idx;

    Vec3 s = cloud.scales(i);
    double s_max = std::fmax(s.x, std::fmax(s.y, s.z));
    double tau_s = cfg.baseline_percent_dense * cfg.scene_extent;

    if (s_max >= tau_s) {
        // Split: two sampled children at scales / 1.6, parent removed.
        const double log_div = std::log(1.6);
        Vec3 child_log_scale = cloud.scales_log(i) - Vec3{log_div, log_div, log_div};
        std::vector<double> sh(cloud.sh_ptr(i), cloud.sh_ptr(i) + cloud.sh_stride());
        Quat rot = cloud.rot(i);
        double logit = cloud.opacity_logit[i];
        int lvl = cloud.level[i];
        Vec3 mu = cloud.pos(i);
        Vec3 parent_log_scale = cloud.scales_log(i);
        for (int child = 0; child < 2; ++child) {
            Vec3 p = sample_position(mu, parent_log_scale, rot, rng);
            size_t j = cloud.append(p, child_log_scale, rot, logit, sh, lvl);
            report.created.push_back({cloud.id[j], gid, lvl});
        }
        std::vector<uint8_t> keep(cloud.size(), 1);
        keep[i] = 0;
        cloud.remove_masked(keep);
        report.pruned_ids.push_back(gid);
        report.removed_indices.push_back(i);
    } else {
        // Clone: exact duplicate at the same position.
        size_t j = cloud.append_copy_of(i);
        report.created.push_back({cloud.id[j], gid, cloud.level[i]});
    }
}

void prune(GaussianCloud& cloud, double eps, DensifyReport& report) {
    if (!(eps > 0.0 && eps < 1.0)) throw std::invalid_argument("prune: eps must be in (0, 1)");
    std::vector<uint8_t> keep(cloud.size(), 1);
    bool any = false;
    for (size_t i = 0; i < cloud.size(); ++i) {
        if (cloud.opacity(i) < eps) {
            keep[i] = 0;
            report.pruned_ids.push_back(cloud.id[i]);
            report.removed_indices.push_back(i);
            any = true;
        }
    }
    if (any) cloud.remove_masked(keep);
}

void opacity_reduction(GaussianCloud& cloud, double factor) {
    if (!(factor > 0.0 && factor < 1.0)) throw std::invalid_argument("opacity_reduction: factor must be in (0, 1)");
    for (size_t i = 0; i < cloud.size(); ++i) cloud.set_opacity(i, factor * cloud.opacity(i));
    cloud.bump();
}

double scene_extent_from_cameras(const std::vector<Camera>& cameras) {
    if (cameras.empty()) throw std::invalid_argument("scene_extent: no cameras");
    Vec3 centroid;
    for (const Camera& c : cameras) centroid += c.center();
    centroid = centroid * (1.0 / static_cast<double>(cameras.size()));
    double radius = 0.0;
    for (const Camera& c : cameras) radius = std::fmax(radius, norm(c.center() - centroid));
    return 1.1 * radius;
}

const char* to_string(DensifyMode mode) {
    return mode == DensifyMode::ResidualSplit ? "residual-split" : "baseline-split-clone";
}
const char* to_string(GradSource src) { return src == GradSource::Signed ? "signed" : "absolute"; }

DensifyMode densify_mode_from_string(const std::string& s) {
    if (s == "residual-split") return DensifyMode::ResidualSplit;
    if (s == "baseline-split-clone") return DensifyMode::BaselineSplitClone;
    throw std::invalid_argument("unknown densify mode: " + s);
}
GradSource grad_source_from_string(const std::string& s) {
    if (s == "signed") return GradSource::Signed;
    if (s == "absolute") return GradSource::Absolute;
    throw std::invalid_argument("unknown grad source: " + s);
}

}  // namespace resgs
