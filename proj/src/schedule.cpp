#include "resgs/schedule.hpp"

#include <algorithm>
#include <cmath>

namespace resgs {

void StageClock::validate() const {
    if (stage_boundaries.empty()) throw std::invalid_argument("stage clock: no stage boundaries");
    if (substages_per_stage < 1) throw std::invalid_argument("stage clock: K must be >= 1");
    int prev = 0;
    for (int b : stage_boundaries) {
        if (b <= prev) throw std::invalid_argument("stage clock: boundaries must be strictly increasing");
        prev = b;
    }
}

Image downsample_half(const Image& in) {
    int oh = std::max(in.height / 2, 1);
    int ow = std::max(in.width / 2, 1);
    Image out(oh, ow);
    for (int r = 0; r < oh; ++r) {
        int r0 = 2 * r;
        int r1 = std::min(2 * r + 1, in.height - 1);
        for (int c = 0; c < ow; ++c) {
            int c0 = 2 * c;
            int c1 = std::min(2 * c + 1, in.width - 1);
            for (int ch = 0; ch < 3; ++ch)
                out.at(r, c, ch) = 0.25 * (in.at(r0, c0, ch) + in.at(r0, c1, ch) + in.at(r1, c0, ch) +
                                           in.at(r1, c1, ch));
        }
    }
    return out;
}

ImagePyramid build_pyramid(const std::vector<Image>& views, int num_levels) {
    if (num_levels < 1) throw std::invalid_argument("build_pyramid: need at least one level");
    if (views.empty()) throw std::invalid_argument("build_pyramid: no views");
    ImagePyramid pyr;
    pyr.levels.resize(num_levels);
    pyr.levels[num_levels - 1] = views;  // originals, bit-exact
    for (int lvl = num_levels - 2; lvl >= 0; --lvl) {
        pyr.levels[lvl].reserve(views.size());
        for (const Image& img : pyr.levels[lvl + 1]) pyr.levels[lvl].push_back(downsample_half(img));
    }
    return pyr;
}

StagePoint stage_at(int iteration, const StageClock& clock) {
    clock.validate();
    if (iteration < 0 || iteration >= clock.total_iterations())
        throw std::out_of_range("stage_at: iteration " + std::to_string(iteration) + " outside [0, " +
                                std::to_string(clock.total_iterations()) + ")");
    int stage_idx = 0;  // 0-based
    while (iteration >= clock.stage_boundaries[stage_idx]) ++stage_idx;
    int span_start = stage_idx == 0 ? 0 : clock.stage_boundaries[stage_idx - 1];
    int span_len = clock.stage_boundaries[stage_idx] - span_start;
    int k_local;
    int base = span_len / clock.substages_per_stage;
    if (base == 0) {
        k_local = clock.substages_per_stage - 1;  // tiny span: everything in the last substage
    } else {
        k_local = std::min((iteration - span_start) / base, clock.substages_per_stage - 1);
    }
    StagePoint p;
    p.stage = stage_idx + 1;
    p.substage_k = stage_idx * clock.substages_per_stage + k_local;
    p.pyramid_level = p.stage;
    return p;
}

Camera scale_camera_for_level(const Camera& full, int level, int num_levels) {
    if (level < 1 || level > num_levels) throw std::invalid_argument("scale_camera_for_level: bad level");
    int shift = num_levels - level;
    double s = std::ldexp(1.0, -shift);  // 2^-(L - level)
    Camera cam = full;
    cam.fx *= s;
    cam.fy *= s;
    cam.cx *= s;
    cam.cy *= s;
    cam.width = std::max(full.width >> shift, 1);
    cam.height = std::max(full.height >> shift, 1);
    return cam;
}

std::vector<int> boundaries_from_fractions(const std::vector<double>& fractions, int total_iterations) {
    if (fractions.empty()) throw std::invalid_argument("boundaries_from_fractions: empty");
    std::vector<int> out;
    out.reserve(fractions.size());
    for (size_t i = 0; i < fractions.size(); ++i) {
        int b = i + 1 == fractions.size()
                    ? total_iterations
                    : static_cast<int>(std::floor(fractions[i] * total_iterations));
        out.push_back(b);
    }
    return out;
}

}  // namespace resgs
