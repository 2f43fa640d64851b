#pragma once

// Core 3D Gaussian parameterization: storage, covariance construction,
// view-dependent color from spherical harmonics, position sampling, and the
// per-Gaussian fineness level used by residual-split densification.
//
// Scales are stored as logs and opacity as a logit so optimizer steps can
// never leave the valid domain.

#include <cstdint>
#include <optional>
#include <vector>

#include "resgs/errors.hpp"
#include "resgs/rng.hpp"
#include "resgs/vecmath.hpp"

namespace resgs {

constexpr double kSH0 = 0.28209479177387814;  // Y_00

// Number of SH coefficients per color channel for a given degree.
inline int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

struct Camera {
    double fx = 0.0, fy = 0.0;  // focal lengths, pixels
    double cx = 0.0, cy = 0.0;  // principal point, pixels
    int width = 0, height = 0;
    Mat3 world_to_camera = Mat3::identity();
    Vec3 translation;  // p_cam = world_to_camera * p_world + translation
    double near_clip = 0.1;

    Vec3 to_camera(const Vec3& p_world) const { return world_to_camera * p_world + translation; }
    // Camera center in world coordinates: -R^T t.
    Vec3 center() const {
        Vec3 c = mul_transposed(world_to_camera, translation);
        return {-c.x, -c.y, -c.z};
    }

    // Throws std::invalid_argument with a description of the offending field.
    void validate() const;
};

// Trainable scene state, struct-of-arrays. Indices are positionally aligned
// across all fields; ids only ever grow, so index order is id order.
struct GaussianCloud {
    std::vector<double> position;       // 3 per Gaussian
    std::vector<double> log_scale;      // 3 per Gaussian
    std::vector<double> rotation;       // 4 per Gaussian (w, x, y, z)
    std::vector<double> opacity_logit;  // 1 per Gaussian
    std::vector<double> sh;             // sh_coeff_count(degree) * 3 per Gaussian, coefficient-major
    std::vector<int> level;             // transient fineness level
    std::vector<uint32_t> id;           // stable, never reused within a run

    int sh_degree = 0;
    uint32_t next_id = 0;
    uint64_t generation = 0;  // bumped on every mutation; guards stale render auxiliaries

    size_t size() const { return id.size(); }
    int sh_stride() const { return sh_coeff_count(sh_degree) * 3; }

    Vec3 pos(size_t i) const { return {position[3 * i], position[3 * i + 1], position[3 * i + 2]}; }
    Vec3 scales_log(size_t i) const { return {log_scale[3 * i], log_scale[3 * i + 1], log_scale[3 * i + 2]}; }
    Vec3 scales(size_t i) const {
        return {std::exp(log_scale[3 * i]), std::exp(log_scale[3 * i + 1]), std::exp(log_scale[3 * i + 2])};
    }
    Quat rot(size_t i) const {
        return {rotation[4 * i], rotation[4 * i + 1], rotation[4 * i + 2], rotation[4 * i + 3]};
    }
    double opacity(size_t i) const { return sigmoid(opacity_logit[i]); }
    const double* sh_ptr(size_t i) const { return sh.data() + i * sh_stride(); }
    double* sh_ptr(size_t i) { return sh.data() + i * sh_stride(); }

    void set_pos(size_t i, const Vec3& p) {
        position[3 * i] = p.x;
        position[3 * i + 1] = p.y;
        position[3 * i + 2] = p.z;
    }
    void set_opacity(size_t i, double o) { opacity_logit[i] = logit(o); }

    // Appends one Gaussian and returns its index; assigns the next id.
    size_t append(const Vec3& p, const Vec3& log_s, const Quat& q, double op_logit,
                  const std::vector<double>& sh_coeffs, int lvl);
    // Duplicates Gaussian src (fresh id); returns the new index.
    size_t append_copy_of(size_t src);
    // Removes every index i with keep[i] == false, preserving relative order.
    void remove_masked(const std::vector<uint8_t>& keep);

    std::optional<size_t> find_index(uint32_t gid) const;

    void renormalize_rotations();
    void bump() { ++generation; }
};

// Sigma = R S S^T R^T with S = diag(exp(log_scale)).
// Throws std::invalid_argument on non-finite input.
Mat3 build_covariance(const Vec3& log_scale, const Quat& rotation);

// exp(-1/2 (x - mu)^T Sigma^-1 (x - mu)), in (0, 1].
// Throws DegenerateCovariance when cond(Sigma) > 1e12 or Sigma is not PD.
double eval_gaussian(const Vec3& mu, const Mat3& sigma, const Vec3& x);

// Real-SH basis values for a unit direction, degrees 0..3.
// `out` must hold sh_coeff_count(degree) values.
void sh_basis(const Vec3& dir, int degree, double* out);
// Basis gradients w.r.t. the (unit) direction components; out_d* sized like sh_basis out.
void sh_basis_grad(const Vec3& dir, int degree, double* out_dx, double* out_dy, double* out_dz);

// Sum_k sh[k*3+c] * Y_k(dir) + 0.5 per channel, clamped at zero.
Vec3 eval_sh_color(const double* sh_coeffs, const Vec3& view_direction, int degree);

// mu + R S z with z ~ N(0, I3) drawn from rng (three normals, x-y-z order).
Vec3 sample_position(const Vec3& mu, const Vec3& log_scale, const Quat& rotation, Rng& rng);

}  // namespace resgs
