#include "resgs/gauss_model.hpp"

#include <algorithm>
#include <cmath>

namespace resgs {

void Camera::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("camera: focal lengths must be positive");
    if (width < 1 || height < 1) throw std::invalid_argument("camera: image size must be at least 1x1");
    if (!(near_clip > 0.0)) throw std::invalid_argument("camera: near_clip must be positive");
    // R R^T = I within 1e-8
    Mat3 rrt = world_to_camera * world_to_camera.transposed();
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double want = (i == j) ? 1.0 : 0.0;
            if (std::fabs(rrt[i][j] - want) > 1e-8)
                throw std::invalid_argument("camera: world_to_camera rotation is not orthonormal");
        }
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            if (!std::isfinite(world_to_camera[i][j]))
                throw std::invalid_argument("camera: non-finite rotation entry");
    if (!std::isfinite(translation.x) || !std::isfinite(translation.y) || !std::isfinite(translation.z))
        throw std::invalid_argument("camera: non-finite translation");
}

size_t GaussianCloud::append(const Vec3& p, const Vec3& log_s, const Quat& q, double op_logit,
                             const std::vector<double>& sh_coeffs, int lvl) {
    if (static_cast<int>(sh_coeffs.size()) != sh_stride())
        throw std::invalid_argument("append: SH coefficient count does not match cloud degree");
    position.insert(position.end(), {p.x, p.y, p.z});
    log_scale.insert(log_scale.end(), {log_s.x, log_s.y, log_s.z});
    rotation.insert(rotation.end(), {q.w, q.x, q.y, q.z});
    opacity_logit.push_back(op_logit);
    sh.insert(sh.end(), sh_coeffs.begin(), sh_coeffs.end());
    level.push_back(lvl);
    id.push_back(next_id++);
    bump();
    return size() - 1;
}

size_t GaussianCloud::append_copy_of(size_t src) {
    std::vector<double> coeffs(sh_ptr(src), sh_ptr(src) + sh_stride());
    return append(pos(src), scales_log(src), rot(src), opacity_logit[src], coeffs, level[src]);
}

void GaussianCloud::remove_masked(const std::vector<uint8_t>& keep) {
    size_t n = size();
    size_t w = 0;
    int stride = sh_stride();
    for (size_t i = 0; i < n; ++i) {
        if (!keep[i]) continue;
        if (w != i) {
            for (int k = 0; k < 3; ++k) position[3 * w + k] = position[3 * i + k];
            for (int k = 0; k < 3; ++k) log_scale[3 * w + k] = log_scale[3 * i + k];
            for (int k = 0; k < 4; ++k) rotation[4 * w + k] = rotation[4 * i + k];
            opacity_logit[w] = opacity_logit[i];
            for (int k = 0; k < stride; ++k) sh[w * stride + k] = sh[i * stride + k];
            level[w] = level[i];
            id[w] = id[i];
        }
        ++w;
    }
    position.resize(3 * w);
    log_scale.resize(3 * w);
    rotation.resize(4 * w);
    opacity_logit.resize(w);
    sh.resize(w * stride);
    level.resize(w);
    id.resize(w);
    bump();
}

std::optional<size_t> GaussianCloud::find_index(uint32_t gid) const {
    // Ids are sorted by construction (appends only ever use next_id).
    auto it = std::lower_bound(id.begin(), id.end(), gid);
    if (it == id.end() || *it != gid) return std::nullopt;
    return static_cast<size_t>(it - id.begin());
}

void GaussianCloud::renormalize_rotations() {
    for (size_t i = 0; i < size(); ++i) {
        double* q = rotation.data() + 4 * i;
        double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
        for (int k = 0; k < 4; ++k) q[k] /= n;
    }
    bump();
}

Mat3 build_covariance(const Vec3& log_scale, const Quat& rotation) {
    for (double v : {log_scale.x, log_scale.y, log_scale.z, rotation.w, rotation.x, rotation.y, rotation.z})
        if (!std::isfinite(v)) throw std::invalid_argument("build_covariance: non-finite input");
    Mat3 r = rotation_matrix(rotation.normalized());
    Vec3 s{std::exp(log_scale.x), std::exp(log_scale.y), std::exp(log_scale.z)};
    // M = R S, Sigma = M M^T
    Mat3 m = r * Mat3::diag(s);
    Mat3 sigma;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            sigma[i][j] = m[i][0] * m[j][0] + m[i][1] * m[j][1] + m[i][2] * m[j][2];
    return sigma;
}

double eval_gaussian(const Vec3& mu, const Mat3& sigma, const Vec3& x) {
    auto ev = sym3_eigenvalues(sigma);
    if (!(ev[0] > 0.0) || ev[2] / ev[0] > 1e12)
        throw DegenerateCovariance("eval_gaussian: covariance condition number exceeds 1e12");
    // Cholesky: sigma = L L^T
    double l00 = std::sqrt(sigma[0][0]);
    double l10 = sigma[1][0] / l00;
    double l20 = sigma[2][0] / l00;
    double l11 = std::sqrt(sigma[1][1] - l10 * l10);
    double l21 = (sigma[2][1] - l20 * l10) / l11;
    double l22 = std::sqrt(sigma[2][2] - l20 * l20 - l21 * l21);
    Vec3 d = x - mu;
    // forward substitution: L y = d
    double y0 = d.x / l00;
    double y1 = (d.y - l10 * y0) / l11;
    double y2 = (d.z - l20 * y0 - l21 * y1) / l22;
    return std::exp(-0.5 * (y0 * y0 + y1 * y1 + y2 * y2));
}

namespace {
// 3D-GS real-SH constants.
constexpr double kC1 = 0.4886025119029199;
constexpr double kC2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                           -1.0925484305920792, 0.5462742152960396};
constexpr double kC3[7] = {-0.5900435899266435, 2.890611442640554,  -0.4570457994644658,
                           0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                           -0.5900435899266435};
}  // namespace

void sh_basis(const Vec3& dir, int degree, double* out) {
    double x = dir.x, y = dir.y, z = dir.z;
    out[0] = kSH0;
    if (degree < 1) return;
    out[1] = -kC1 * y;
    out[2] = kC1 * z;
    out[3] = -kC1 * x;
    if (degree < 2) return;
    double xx = x * x, yy = y * y, zz = z * z;
    out[4] = kC2[0] * x * y;
    out[5] = kC2[1] * y * z;
    out[6] = kC2[2] * (2.0 * zz - xx - yy);
    out[7] = kC2[3] * x * z;
    out[8] = kC2[4] * (xx - yy);
    if (degree < 3) return;
    out[9] = kC3[0] * y * (3.0 * xx - yy);
    out[10] = kC3[1] * x * y * z;
    out[11] = kC3[2] * y * (4.0 * zz - xx - yy);
    out[12] = kC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    out[13] = kC3[4] * x * (4.0 * zz - xx - yy);
    out[14] = kC3[5] * z * (xx - yy);
    out[15] = kC3[6] * x * (xx - 3.0 * yy);
}

void sh_basis_grad(const Vec3& dir, int degree, double* dx, double* dy, double* dz) {
    double x = dir.x, y = dir.y, z = dir.z;
    int n = sh_coeff_count(degree);
    for (int i = 0; i < n; ++i) dx[i] = dy[i] = dz[i] = 0.0;
    if (degree < 1) return;
    dy[1] = -kC1;
    dz[2] = kC1;
    dx[3] = -kC1;
    if (degree < 2) return;
    dx[4] = kC2[0] * y;
    dy[4] = kC2[0] * x;
    dy[5] = kC2[1] * z;
    dz[5] = kC2[1] * y;
    dx[6] = kC2[2] * -2.0 * x;
    dy[6] = kC2[2] * -2.0 * y;
    dz[6] = kC2[2] * 4.0 * z;
    dx[7] = kC2[3] * z;
    dz[7] = kC2[3] * x;
    dx[8] = kC2[4] * 2.0 * x;
    dy[8] = kC2[4] * -2.0 * y;
    if (degree < 3) return;
    double xx = x * x, yy = y * y, zz = z * z;
    dx[9] = kC3[0] * 6.0 * x * y;
    dy[9] = kC3[0] * (3.0 * xx - 3.0 * yy);
    dx[10] = kC3[1] * y * z;
    dy[10] = kC3[1] * x * z;
    dz[10] = kC3[1] * x * y;
    dx[11] = kC3[2] * -2.0 * x * y;
    dy[11] = kC3[2] * (4.0 * zz - xx - 3.0 * yy);
    dz[11] = kC3[2] * 8.0 * y * z;
    dx[12] = kC3[3] * -6.0 * x * z;
    dy[12] = kC3[3] * -6.0 * y * z;
    dz[12] = kC3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy);
    dx[13] = kC3[4] * (4.0 * zz - 3.0 * xx - yy);
    dy[13] = kC3[4] * -2.0 * x * y;
    dz[13] = kC3[4] * 8.0 * x * z;
    dx[14] = kC3[5] * 2.0 * x * z;
    dy[14] = kC3[5] * -2.0 * y * z;
    dz[14] = kC3[5] * (xx - yy);
    dx[15] = kC3[6] * (3.0 * xx - 3.0 * yy);
    dy[15] = kC3[6] * -6.0 * x * y;
}

Vec3 eval_sh_color(const double* sh_coeffs, const Vec3& view_direction, int degree) {
    double basis[16];
    sh_basis(view_direction, degree, basis);
    int n = sh_coeff_count(degree);
    Vec3 c;
    for (int k = 0; k < n; ++k) {
        c.x += sh_coeffs[3 * k] * basis[k];
        c.y += sh_coeffs[3 * k + 1] * basis[k];
        c.z += sh_coeffs[3 * k + 2] * basis[k];
    }
    c += Vec3{0.5, 0.5, 0.5};
    return {std::fmax(c.x, 0.0), std::fmax(c.y, 0.0), std::fmax(c.z, 0.0)};
}

Vec3 sample_position(const Vec3& mu, const Vec3& log_scale, const Quat& rotation, Rng& rng) {
    Vec3 z{rng.normal(), rng.normal(), rng.normal()};
    Vec3 s{std::exp(log_scale.x), std::exp(log_scale.y), std::exp(log_scale.z)};
    Mat3 r = rotation_matrix(rotation.normalized());
    return mu + r * Vec3{s.x * z.x, s.y * z.y, s.z * z.z};
}

}  // namespace resgs
