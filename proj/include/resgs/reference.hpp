#pragma once

// Serial reference rasterizer. Re-derives projection and front-to-back
// compositing from the definitions with no tiling, no early termination and
// no shared code with the production kernel beyond the parameter structs.
// Kept for testing (it is the compositing oracle) and for the benchmark.

#include "resgs/gauss_model.hpp"
#include "resgs/image.hpp"

namespace resgs::reference {

struct ReferenceSettings {
    double dilation = 0.3;
    double alpha_clamp = 0.999;
    double cutoff_sigma = 0.0;  // <= 0: unbounded support (pure compositing formula)
};

// Alpha-blended image, one Gaussian-sum per pixel, every splat tested at every
// pixel, summation strictly front-to-back with no early exit.
Image render_reference(const Camera& camera, const GaussianCloud& cloud, const Vec3& background,
                       int sh_degree, const ReferenceSettings& settings = {});

}  // namespace resgs::reference
