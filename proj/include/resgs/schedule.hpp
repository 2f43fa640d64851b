#pragma once

// Image-pyramid construction and the stage/substage clock that drives
// supervision resolution and the varying-threshold substage index.

#include <vector>

#include "resgs/gauss_model.hpp"
#include "resgs/image.hpp"

namespace resgs {

// levels[0] is pyramid level 1 (coarsest); levels[L-1] holds the originals.
struct ImagePyramid {
    std::vector<std::vector<Image>> levels;  // [level][view]

    int num_levels() const { return static_cast<int>(levels.size()); }
    // 1-based level accessor matching stage numbering.
    const std::vector<Image>& level(int i) const { return levels[i - 1]; }
};

struct StageClock {
    std::vector<int> stage_boundaries;  // strictly increasing; last entry == total iterations
    int substages_per_stage = 3;        // K

    int num_stages() const { return static_cast<int>(stage_boundaries.size()); }
    int total_iterations() const { return stage_boundaries.back(); }
    void validate() const;
};

struct StagePoint {
    int stage = 1;          // 1-based; also the pyramid level used for supervision
    int substage_k = 0;     // global substage index, 0-based, in [0, L*K)
    int pyramid_level = 1;
};

// Level L holds the originals; each lower level is a 2x2 box-average
// downsample with the trailing odd row/column handled by clamping.
ImagePyramid build_pyramid(const std::vector<Image>& views, int num_levels);

// One 2x2 box-average halving.
Image downsample_half(const Image& in);

// Stage / global substage / pyramid level at an iteration. Throws
// std::out_of_range outside [0, total).
StagePoint stage_at(int iteration, const StageClock& clock);

// Camera with intrinsics scaled by 2^-(L - level) and the matching floor-rule
// image size, for rendering against pyramid level `level`.
Camera scale_camera_for_level(const Camera& full, int level, int num_levels);

// Boundaries from fractions of total iterations (last fraction forced to 1).
std::vector<int> boundaries_from_fractions(const std::vector<double>& fractions, int total_iterations);

}  // namespace resgs
