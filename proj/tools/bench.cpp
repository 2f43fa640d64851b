// Benchmark comparing the OpenMP rasterization kernels against the serial
// reference implementation, plus forward/backward timings across thread counts.

#include <chrono>
#include <cstdio>

#include "resgs/io.hpp"
#include "resgs/reference.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

using namespace resgs;
using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

double max_channel_diff(const Image& a, const Image& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) m = std::fmax(m, std::fabs(a.data[i] - b.data[i]));
    return m;
}

}  // namespace

int main(int argc, char** argv) {
    int n_gaussians = argc > 1 ? std::atoi(argv[1]) : 512;
    int resolution = argc > 2 ? std::atoi(argv[2]) : 128;
    int reps = argc > 3 ? std::atoi(argv[3]) : 10;

    SyntheticSpec spec;
    spec.n_gaussians = n_gaussians;
    spec.n_train_views = 1;
    spec.n_test_views = 0;
    spec.resolution = resolution;
    spec.seed = 42;
    SyntheticScene scene = make_synthetic(spec);
    const Camera& cam = scene.dataset.cameras[0];
    const GaussianCloud& cloud = scene.ground_truth;
    const Vec3 bg{0.0, 0.0, 0.0};

    std::printf("scene: %d gaussians, %dx%d, %d reps\n", n_gaussians, resolution, resolution, reps);
#ifdef _OPENMP
    std::printf("openmp threads: %d\n", omp_get_max_threads());
#else
    std::printf("openmp: disabled\n");
#endif

    // Matched settings: unbounded support, no early termination, so the
    // parallel kernel and the serial reference compute the same sums.
    RenderSettings exact;
    exact.cutoff_sigma = 0.0;
    exact.transmittance_min = 0.0;
    reference::ReferenceSettings ref;

    auto t0 = Clock::now();
    Image ref_img;
    for (int i = 0; i < reps; ++i)
        ref_img = reference::render_reference(cam, cloud, bg, cloud.sh_degree, ref);
    double ref_ms = ms_since(t0) / reps;

    t0 = Clock::now();
    RenderOutput exact_out;
    for (int i = 0; i < reps; ++i) exact_out = render(cam, cloud, bg, cloud.sh_degree, exact);
    double exact_ms = ms_since(t0) / reps;

    RenderSettings prod;  // defaults: 3-sigma window, tiles, early termination
    t0 = Clock::now();
    RenderOutput prod_out;
    for (int i = 0; i < reps; ++i) prod_out = render(cam, cloud, bg, cloud.sh_degree, prod);
    double prod_ms = ms_since(t0) / reps;

    Image weights(resolution, resolution, Vec3{1.0, 1.0, 1.0});
    for (double& w : weights.data) w /= static_cast<double>(weights.data.size());
    CloudGradients grads;
    t0 = Clock::now();
    for (int i = 0; i < reps; ++i) backward(prod_out, cam, cloud, weights, grads, nullptr);
    double back_ms = ms_since(t0) / reps;

    std::printf("\n%-34s %10.3f ms\n", "reference serial render", ref_ms);
    std::printf("%-34s %10.3f ms  (%.2fx vs reference, max diff %.3g)\n", "parallel render (exact mode)",
                exact_ms, ref_ms / exact_ms, max_channel_diff(ref_img, exact_out.image));
    std::printf("%-34s %10.3f ms  (%.2fx vs reference, max diff %.3g)\n",
                "parallel render (window+tiles)", prod_ms, ref_ms / prod_ms,
                max_channel_diff(ref_img, prod_out.image));
    std::printf("%-34s %10.3f ms\n", "parallel backward (window+tiles)", back_ms);
    return 0;
}
