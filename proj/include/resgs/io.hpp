#pragma once

// Dataset ingestion, checkpoint persistence, synthetic-scene generation and
// config (de)serialization.
//
// Formats:
//  - manifest.json: views with full pinhole cameras, train/test split lists,
//    optional initial point set.
//  - images: .rimg (raw little-endian float64, lossless) or .ppm (8-bit P6).
//  - checkpoints: binary little-endian PLY, one vertex per Gaussian with
//    properties x,y,z, f_dc_0..2, f_rest_*, opacity (logit), scale_0..2 (log),
//    rot_0..3 and id; a level property is appended for mid-run checkpoints and
//    dropped from final exports.

#include <string>

#include "resgs/trainer.hpp"

namespace resgs {

// ---- images ----
void save_image(const Image& img, const std::string& path);  // dispatches on extension
Image load_image(const std::string& path);

// ---- dataset ----
Dataset load_dataset(const std::string& manifest_path);
void save_dataset(const Dataset& dataset, const std::string& out_dir,
                  const std::string& image_format = "rimg");

// ---- checkpoints ----
void save_checkpoint(const GaussianCloud& cloud, const std::string& path, bool final_export,
                     const std::string& config_hash = "0");
GaussianCloud load_checkpoint(const std::string& path, std::string* config_hash_out = nullptr);

// ---- synthetic scenes ----
enum class InitMode { GroundTruthPerturbed, Random };

struct SyntheticSpec {
    int n_gaussians = 64;
    int n_train_views = 8;
    int n_test_views = 2;
    int resolution = 128;
    uint64_t seed = 0;
    InitMode init_mode = InitMode::GroundTruthPerturbed;
    int sh_degree = 1;
    double position_noise = 0.03;  // perturbed-init point jitter, world units
    int init_point_count = 0;      // 0: one point per ground-truth Gaussian
};

struct SyntheticScene {
    Dataset dataset;
    GaussianCloud ground_truth;
};

// Samples a ground-truth cloud in the unit box, places cameras on a ring
// looking inward and renders the ground truth as the dataset.
SyntheticScene make_synthetic(const SyntheticSpec& spec, const RenderSettings& settings = {});

// Renders + writes the scene to disk: manifest.json, images/, ground_truth.ply.
SyntheticScene write_synthetic(const SyntheticSpec& spec, const std::string& out_dir,
                               const RenderSettings& settings = {});

// ---- config ----
TrainConfig load_train_config(const std::string& path);
std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& json_text);
std::string config_hash(const TrainConfig& cfg);  // FNV-1a 64 of the canonical JSON, hex

// ---- run logs ----
// Header: iteration,loss,psnr,ssim,count,stage,substage,max_level
void write_metrics_csv(const RunLog& log, const std::string& path);
// Header: iteration,kind,selected,created,pruned,count_before,count_after
void write_densify_events_csv(const RunLog& log, const std::string& path);
// Header: mode,iteration,psnr,ssim,count ; one row per eval point per mode.
void write_compare_csv(const std::string& mode_a, const RunLog& log_a, const std::string& mode_b,
                       const RunLog& log_b, const std::string& path);

}  // namespace resgs
