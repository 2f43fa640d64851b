#pragma once

// Training loss (L1 + D-SSIM) with analytic gradient, plus PSNR and SSIM
// evaluation metrics. SSIM uses a Gaussian window over fully-interior
// positions only (valid convolution), per-channel averaged.

#include "resgs/image.hpp"

namespace resgs {

struct LossConfig {
    double lambda_dssim = 0.2;
    int ssim_window = 11;    // odd, >= 3
    double ssim_sigma = 1.5;
};

struct LossResult {
    double value = 0.0;
    Image grad;  // dLoss/dRendered
};

// (1 - lambda) * mean|r - t| + lambda * (1 - SSIM(r, t)) / 2, with gradient.
LossResult loss(const Image& rendered, const Image& target, const LossConfig& cfg);

// 10 log10(peak^2 / MSE); +infinity when MSE == 0.
double psnr(const Image& a, const Image& b, double peak = 1.0);

// Mean local SSIM in [-1, 1]. Throws ShapeError when images are smaller than the window.
double ssim(const Image& a, const Image& b, const LossConfig& cfg = {});

}  // namespace resgs
