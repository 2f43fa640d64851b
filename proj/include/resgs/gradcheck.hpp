#pragma once

// Finite-difference verification of the analytic backward pass. Builds seeded
// random scenes, renders with unbounded support and no early termination (the
// smooth regime), and compares every parameter gradient against central
// differences through the public render API only.

#include <ostream>

#include "resgs/rasterizer.hpp"

namespace resgs {

struct GradCheckConfig {
    uint64_t seed = 7;
    int scenes = 20;
    int max_gaussians = 10;
    int image_size = 24;
    double fd_step = 1e-5;
    double rel_tolerance = 1e-5;  // with |g| floored at 1e-3 (absolute 1e-8 near zero)
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    size_t checked_params = 0;
    size_t failures = 0;

    bool passed(const GradCheckConfig& cfg) const { return failures == 0 && max_rel_error <= cfg.rel_tolerance; }
};

// Relative error with the near-zero floor: |a - b| / max(|a|, |b|, 1e-3).
double gradcheck_rel_error(double analytic, double numeric);

GradCheckResult run_gradcheck(const GradCheckConfig& cfg, std::ostream* log = nullptr);

}  // namespace resgs
