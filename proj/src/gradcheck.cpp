#include "resgs/gradcheck.hpp"

#include <cmath>

namespace resgs {

namespace {

Camera gradcheck_camera(int image_size) {
    Camera cam;
    cam.width = cam.height = image_size;
    cam.fx = cam.fy = 0.6 * image_size;
    cam.cx = cam.cy = 0.5 * image_size;
    cam.near_clip = 0.1;
    // Looking down +z from -z, slight tilt away from axis alignment.
    Vec3 eye{0.15, -0.1, -2.5};
    Vec3 forward = normalized(Vec3{} - eye);
    Vec3 x_axis = normalized(cross(forward, Vec3{0.0, 1.0, 0.0}));
    Vec3 y_axis = cross(forward, x_axis);
    cam.world_to_camera[0] = {x_axis.x, x_axis.y, x_axis.z};
    cam.world_to_camera[1] = {y_axis.x, y_axis.y, y_axis.z};
    cam.world_to_camera[2] = {forward.x, forward.y, forward.z};
    Vec3 wt = cam.world_to_camera * eye;
    cam.translation = {-wt.x, -wt.y, -wt.z};
    return cam;
}

// Scene kept away from every gradient kink: opacities below the alpha clamp,
// colors clear of the zero clamp, camera depths separated so the sort order is
// stable under the finite-difference step.
GaussianCloud gradcheck_cloud(Rng& rng, const Camera& cam, int n, int degree) {
    GaussianCloud cloud;
    cloud.sh_degree = degree;
    int n_coeffs = sh_coeff_count(degree);
    std::vector<double> depths;
    for (int i = 0; i < n; ++i) {
        Vec3 p;
        double z_cam = 0.0;
        for (int attempt = 0; attempt < 1000; ++attempt) {
            p = {rng.uniform(-0.35, 0.35), rng.uniform(-0.35, 0.35), rng.uniform(-0.35, 0.35)};
            z_cam = cam.to_camera(p).z;
            bool ok = true;
            for (double d : depths)
                if (std::fabs(d - z_cam) < 5e-3) ok = false;
            if (ok) break;
        }
        depths.push_back(z_cam);
        Vec3 ls{std::log(rng.uniform(0.05, 0.15)), std::log(rng.uniform(0.05, 0.15)),
                std::log(rng.uniform(0.05, 0.15))};
        Quat q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
        q = q.normalized();
        std::vector<double> sh(n_coeffs * 3, 0.0);
        for (int ch = 0; ch < 3; ++ch) sh[ch] = (rng.uniform(0.3, 0.8) - 0.5) / kSH0;
        for (int k = 1; k < n_coeffs; ++k)
            for (int ch = 0; ch < 3; ++ch) sh[3 * k + ch] = rng.uniform(-0.1, 0.1);
        cloud.append(p, ls, q, logit(rng.uniform(0.3, 0.8)), sh, 0);
    }
    return cloud;
}

}  // namespace

double gradcheck_rel_error(double analytic, double numeric) {
    double denom = std::fmax(std::fmax(std::fabs(analytic), std::fabs(numeric)), 1e-3);
    return std::fabs(analytic - numeric) / denom;
}

GradCheckResult run_gradcheck(const GradCheckConfig& cfg, std::ostream* log) {
    RenderSettings settings;
    settings.cutoff_sigma = 0.0;      // unbounded support: smooth in every parameter
    settings.transmittance_min = 0.0; // no early termination
    const Vec3 background{0.12, 0.3, 0.08};

    GradCheckResult result;
    for (int scene = 0; scene < cfg.scenes; ++scene) {
        Rng rng(cfg.seed + 1000ull * scene);
        const int degree = scene % 2;
        const int n = 3 + static_cast<int>(rng.uniform_index(cfg.max_gaussians - 2));
        Camera cam = gradcheck_camera(cfg.image_size);
        GaussianCloud cloud = gradcheck_cloud(rng, cam, n, degree);

        // Fixed linear objective: L = sum(image .* weights), weights ~ U(-1,1)/(3HW).
        Image weights(cam.height, cam.width);
        const double norm = 1.0 / static_cast<double>(weights.data.size());
        for (double& w : weights.data) w = rng.uniform(-1.0, 1.0) * norm;

        auto objective = [&]() {
            RenderOutput out = render(cam, cloud, background, degree, settings);
            double L = 0.0;
            for (size_t i = 0; i < out.image.data.size(); ++i) L += out.image.data[i] * weights.data[i];
            return L;
        };

        RenderOutput out = render(cam, cloud, background, degree, settings);
        CloudGradients grads;
        backward(out, cam, cloud, weights, grads, nullptr);

        double scene_max = 0.0;
        auto check_param = [&](double* param, double analytic) {
            const double orig = *param;
            *param = orig + cfg.fd_step;
            double lp = objective();
            *param = orig - cfg.fd_step;
            double lm = objective();
            *param = orig;
            double numeric = (lp - lm) / (2.0 * cfg.fd_step);
            double rel = gradcheck_rel_error(analytic, numeric);
            scene_max = std::fmax(scene_max, rel);
            result.checked_params += 1;
            if (rel > cfg.rel_tolerance) result.failures += 1;
        };

        const int stride = cloud.sh_stride();
        for (size_t i = 0; i < cloud.size(); ++i) {
            for (int k = 0; k < 3; ++k) check_param(&cloud.position[3 * i + k], grads.position[3 * i + k]);
            for (int k = 0; k < 3; ++k) check_param(&cloud.log_scale[3 * i + k], grads.log_scale[3 * i + k]);
            for (int k = 0; k < 4; ++k) check_param(&cloud.rotation[4 * i + k], grads.rotation[4 * i + k]);
            check_param(&cloud.opacity_logit[i], grads.opacity_logit[i]);
            for (int k = 0; k < stride; ++k)
                check_param(&cloud.sh[i * stride + k], grads.sh[i * stride + k]);
        }
        result.max_rel_error = std::fmax(result.max_rel_error, scene_max);
        if (log)
            *log << "scene " << scene << ": n=" << n << " degree=" << degree
                 << " max_rel_error=" << scene_max << "\n";
    }
    return result;
}

}  // namespace resgs
