#include "resgs/reference.hpp"

#include <algorithm>
#include <cmath>

namespace resgs::reference {

namespace {

struct RefSplat {
    double u = 0.0, v = 0.0;         // screen mean, pixels
    double ixx = 0.0, ixy = 0.0, iyy = 0.0;  // inverse 2D covariance
    double depth = 0.0;
    Vec3 color;
    double opacity = 0.0;
    uint32_t id = 0;
};

}  // namespace

Image render_reference(const Camera& camera, const GaussianCloud& cloud, const Vec3& background,
                       int sh_degree, const ReferenceSettings& settings) {
    const Vec3 cam_center = camera.center();
    std::vector<RefSplat> splats;
    splats.reserve(cloud.size());

    for (size_t i = 0; i < cloud.size(); ++i) {
        Vec3 pc = camera.to_camera(cloud.pos(i));
        if (pc.z <= camera.near_clip) continue;

        // Full 3D covariance from scratch: Sigma = R S S^T R^T.
        Mat3 rot = rotation_matrix(cloud.rot(i).normalized());
        Vec3 s = cloud.scales(i);
        Mat3 sigma;
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b)
                sigma[a][b] = rot[a][0] * s.x * s.x * rot[b][0] + rot[a][1] * s.y * s.y * rot[b][1] +
                              rot[a][2] * s.z * s.z * rot[b][2];
        Mat3 vc = camera.world_to_camera * sigma * camera.world_to_camera.transposed();

        double j00 = camera.fx / pc.z;
        double j02 = -camera.fx * pc.x / (pc.z * pc.z);
        double j11 = camera.fy / pc.z;
        double j12 = -camera.fy * pc.y / (pc.z * pc.z);
        // 2x2 screen covariance
        double cxx = j00 * (vc[0][0] * j00 + vc[0][2] * j02) + j02 * (vc[2][0] * j00 + vc[2][2] * j02) +
                     settings.dilation;
        double cxy = j00 * (vc[0][1] * j11 + vc[0][2] * j12) + j02 * (vc[2][1] * j11 + vc[2][2] * j12);
        double cyy = j11 * (vc[1][1] * j11 + vc[1][2] * j12) + j12 * (vc[2][1] * j11 + vc[2][2] * j12) +
                     settings.dilation;
        double det = cxx * cyy - cxy * cxy;

        RefSplat rs;
        rs.u = camera.fx * pc.x / pc.z + camera.cx;
        rs.v = camera.fy * pc.y / pc.z + camera.cy;
        rs.ixx = cyy / det;
        rs.ixy = -cxy / det;
        rs.iyy = cxx / det;
        rs.depth = pc.z;
        rs.opacity = cloud.opacity(i);
        rs.color = eval_sh_color(cloud.sh_ptr(i), normalized(cloud.pos(i) - cam_center), sh_degree);
        rs.id = cloud.id[i];
        splats.push_back(rs);
    }

    std::sort(splats.begin(), splats.end(), [](const RefSplat& a, const RefSplat& b) {
        if (a.depth != b.depth) return a.depth < b.depth;
        return a.id < b.id;
    });

    const double q_max = settings.cutoff_sigma > 0.0 ? settings.cutoff_sigma * settings.cutoff_sigma : 0.0;
    Image img(camera.height, camera.width);
    for (int r = 0; r < camera.height; ++r) {
        for (int c = 0; c < camera.width; ++c) {
            double px = c + 0.5, py = r + 0.5;
            double t = 1.0;
            Vec3 out;
            for (const RefSplat& rs : splats) {
                double dx = px - rs.u, dy = py - rs.v;
                double q = rs.ixx * dx * dx + 2.0 * rs.ixy * dx * dy + rs.iyy * dy * dy;
                if (q_max > 0.0 && q > q_max) continue;
                double alpha = std::min(rs.opacity * std::exp(-0.5 * q), settings.alpha_clamp);
                out += rs.color * (alpha * t);
                t *= 1.0 - alpha;
            }
            img.set_pixel(r, c, out + background * t);
        }
    }
    return img;
}

}  // namespace resgs::reference
