#pragma once

// Exact per-pixel forward rendering and the analytic backward pass.
//
// Forward projects each Gaussian to a screen-space splat (EWA approximation),
// sorts by depth, and alpha-blends front to back per pixel. Backward replays
// the recorded per-pixel contributor lists and produces gradients for every
// cloud parameter plus the viewspace positional gradients that drive
// densification.
//
// Both passes parallelize over pixel rows. Per-row partial gradients are
// merged in fixed row order, so results are bit-stable across thread counts.

#include <cstdint>
#include <vector>

#include "resgs/gauss_model.hpp"
#include "resgs/image.hpp"

namespace resgs {

struct RenderSettings {
    double dilation = 0.3;              // px^2 added to the 2D covariance diagonal
    double alpha_clamp = 0.999;         // upper clamp on per-pixel alpha
    double transmittance_min = 1e-4;    // early termination threshold; 0 disables
    double cutoff_sigma = 3.0;          // Gaussian support radius in sigmas; <= 0 means unbounded
    bool use_tile_grid = true;          // acceleration only; never changes results
    int tile_size = 16;

    bool windowed() const { return cutoff_sigma > 0.0; }
    double q_max() const { return cutoff_sigma * cutoff_sigma; }
};

struct Splat2D {
    Vec2 mean2d;       // pixels; pixel (r, c) samples at (c + 0.5, r + 0.5)
    SymMat2 cov2d;     // after dilation
    SymMat2 conic;     // cov2d^-1, cached
    double depth = 0.0;
    Vec3 color;
    double opacity = 0.0;
    uint32_t source_id = 0;
    size_t source_index = 0;       // index into the cloud at render time
    double view_jacobian[2][3]{};  // d(mean2d)/d(p_cam), cached for backward
    Vec3 p_cam;                    // camera-space center
    Vec3 view_dir;                 // unit direction camera center -> Gaussian, world frame
    double radius_px = 0.0;        // cutoff_sigma * sqrt(max eigenvalue of cov2d)
    uint8_t color_clamped = 0;     // bit c set when channel c clamped at zero in SH eval
};

struct PixelContribution {
    int32_t splat = 0;  // index into RenderOutput::splats
    double alpha = 0.0;
};

struct RenderOutput {
    Image image;
    std::vector<double> final_transmittance;          // height * width
    std::vector<Splat2D> splats;                      // depth-sorted
    std::vector<PixelContribution> contributions;     // CSR payload, row-major pixels
    std::vector<size_t> contribution_offsets;         // pixels + 1 entries
    Vec3 background;
    int sh_degree = 0;
    RenderSettings settings;
    uint64_t cloud_generation = 0;

    std::pair<const PixelContribution*, const PixelContribution*> pixel_contribs(size_t pix) const {
        return {contributions.data() + contribution_offsets[pix],
                contributions.data() + contribution_offsets[pix + 1]};
    }
};

// Gradients for every cloud parameter, laid out like the cloud itself.
struct CloudGradients {
    std::vector<double> position;       // 3 per Gaussian
    std::vector<double> log_scale;      // 3 per Gaussian
    std::vector<double> rotation;       // 4 per Gaussian (raw quaternion, pre-normalization)
    std::vector<double> opacity_logit;  // 1 per Gaussian
    std::vector<double> sh;             // sh stride per Gaussian

    void resize_zero(size_t n, int sh_stride);
};

// Accumulated viewspace positional-gradient statistics over a densification window.
struct ViewspaceGradStats {
    std::vector<double> signed_grad_norm_sum;
    std::vector<double> abs_grad_norm_sum;
    std::vector<int> observation_count;
    std::vector<double> max_screen_radius;

    explicit ViewspaceGradStats(size_t n = 0) { resize(n); }
    size_t size() const { return observation_count.size(); }
    void resize(size_t n);
    void append(size_t n_new);
    void remove_masked(const std::vector<uint8_t>& keep);
};

// Zeroes all accumulators.
void reset_stats(ViewspaceGradStats& stats);

// Projects one Gaussian; returns false when culled (behind near plane, or the
// cutoff_sigma screen ellipse misses the image when windowed).
bool project_gaussian(const Camera& camera, const GaussianCloud& cloud, size_t index,
                      const RenderSettings& settings, Splat2D& out);

// Alpha-blended forward render, front to back.
// Throws std::invalid_argument naming the Gaussian id if a parameter is non-finite.
RenderOutput render(const Camera& camera, const GaussianCloud& cloud, const Vec3& background,
                    int sh_degree, const RenderSettings& settings = {});

// Analytic backward pass. loss_grad_image is dLoss/dImage. Parameter gradients
// are written to grads (resized and zeroed here); viewspace statistics are
// accumulated into stats (which must match the cloud size) when non-null.
// Throws StaleRenderOutput when the cloud mutated since the forward pass.
void backward(const RenderOutput& out, const Camera& camera, const GaussianCloud& cloud,
              const Image& loss_grad_image, CloudGradients& grads, ViewspaceGradStats* stats);

}  // namespace resgs
