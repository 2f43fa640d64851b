#include "resgs/rasterizer.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace resgs {

void CloudGradients::resize_zero(size_t n, int sh_stride) {
    position.assign(3 * n, 0.0);
    log_scale.assign(3 * n, 0.0);
    rotation.assign(4 * n, 0.0);
    opacity_logit.assign(n, 0.0);
    sh.assign(n * sh_stride, 0.0);
}

void ViewspaceGradStats::resize(size_t n) {
    signed_grad_norm_sum.assign(n, 0.0);
    abs_grad_norm_sum.assign(n, 0.0);
    observation_count.assign(n, 0);
    max_screen_radius.assign(n, 0.0);
}

void ViewspaceGradStats::append(size_t n_new) {
    signed_grad_norm_sum.resize(size() + n_new, 0.0);
    abs_grad_norm_sum.resize(abs_grad_norm_sum.size() + n_new, 0.0);
    observation_count.resize(observation_count.size() + n_new, 0);
    max_screen_radius.resize(max_screen_radius.size() + n_new, 0.0);
}

void ViewspaceGradStats::remove_masked(const std::vector<uint8_t>& keep) {
    size_t w = 0;
    for (size_t i = 0; i < size(); ++i) {
        if (!keep[i]) continue;
        signed_grad_norm_sum[w] = signed_grad_norm_sum[i];
        abs_grad_norm_sum[w] = abs_grad_norm_sum[i];
        observation_count[w] = observation_count[i];
        max_screen_radius[w] = max_screen_radius[i];
        ++w;
    }
    signed_grad_norm_sum.resize(w);
    abs_grad_norm_sum.resize(w);
    observation_count.resize(w);
    max_screen_radius.resize(w);
}

void reset_stats(ViewspaceGradStats& stats) {
    std::fill(stats.signed_grad_norm_sum.begin(), stats.signed_grad_norm_sum.end(), 0.0);
    std::fill(stats.abs_grad_norm_sum.begin(), stats.abs_grad_norm_sum.end(), 0.0);
    std::fill(stats.observation_count.begin(), stats.observation_count.end(), 0);
    std::fill(stats.max_screen_radius.begin(), stats.max_screen_radius.end(), 0.0);
}

bool project_gaussian(const Camera& camera, const GaussianCloud& cloud, size_t index,
                      const RenderSettings& settings, Splat2D& out) {
    Vec3 mu = cloud.pos(index);
    Vec3 p_cam = camera.to_camera(mu);
    if (p_cam.z <= camera.near_clip) return false;

    double z = p_cam.z;
    double inv_z = 1.0 / z;
    double inv_z2 = inv_z * inv_z;
    out.view_jacobian[0][0] = camera.fx * inv_z;
    out.view_jacobian[0][1] = 0.0;
    out.view_jacobian[0][2] = -camera.fx * p_cam.x * inv_z2;
    out.view_jacobian[1][0] = 0.0;
    out.view_jacobian[1][1] = camera.fy * inv_z;
    out.view_jacobian[1][2] = -camera.fy * p_cam.y * inv_z2;

    Mat3 sigma = build_covariance(cloud.scales_log(index), cloud.rot(index));
    const Mat3& w = camera.world_to_camera;
    Mat3 v = w * sigma * w.transposed();

    // cov2d = J V J^T (upper-left 2x2 of the EWA-transformed covariance)
    double jv[2][3];
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 3; ++b)
            jv[a][b] = out.view_jacobian[a][0] * v[0][b] + out.view_jacobian[a][1] * v[1][b] +
                       out.view_jacobian[a][2] * v[2][b];
    SymMat2 cov;
    cov.xx = jv[0][0] * out.view_jacobian[0][0] + jv[0][1] * out.view_jacobian[0][1] +
             jv[0][2] * out.view_jacobian[0][2];
    cov.xy = jv[0][0] * out.view_jacobian[1][0] + jv[0][1] * out.view_jacobian[1][1] +
             jv[0][2] * out.view_jacobian[1][2];
    cov.yy = jv[1][0] * out.view_jacobian[1][0] + jv[1][1] * out.view_jacobian[1][1] +
             jv[1][2] * out.view_jacobian[1][2];
    cov.xx += settings.dilation;
    cov.yy += settings.dilation;

    out.mean2d = {camera.fx * p_cam.x * inv_z + camera.cx, camera.fy * p_cam.y * inv_z + camera.cy};
    out.cov2d = cov;
    out.conic = cov.inverse();
    out.depth = z;
    out.p_cam = p_cam;

    double sigma_for_radius = settings.windowed() ? settings.cutoff_sigma : 3.0;
    out.radius_px = sigma_for_radius * std::sqrt(cov.max_eigenvalue());

    if (settings.windowed()) {
        // Pixel sample coordinates span [0.5, dim - 0.5].
        if (out.mean2d.x + out.radius_px < 0.5 || out.mean2d.x - out.radius_px > camera.width - 0.5 ||
            out.mean2d.y + out.radius_px < 0.5 || out.mean2d.y - out.radius_px > camera.height - 0.5)
            return false;
    }

    out.opacity = cloud.opacity(index);
    out.source_id = cloud.id[index];
    out.source_index = index;
    out.view_dir = normalized(mu - camera.center());

    // View-dependent color with per-channel clamp mask for the backward pass.
    double basis[16];
    sh_basis(out.view_dir, cloud.sh_degree, basis);
    int n_coeffs = sh_coeff_count(cloud.sh_degree);
    const double* coeffs = cloud.sh_ptr(index);
    Vec3 c{0.5, 0.5, 0.5};
    for (int k = 0; k < n_coeffs; ++k) {
        c.x += coeffs[3 * k] * basis[k];
        c.y += coeffs[3 * k + 1] * basis[k];
        c.z += coeffs[3 * k + 2] * basis[k];
    }
    out.color_clamped = 0;
    if (c.x < 0.0) {
        c.x = 0.0;
        out.color_clamped |= 1;
    }
    if (c.y < 0.0) {
        c.y = 0.0;
        out.color_clamped |= 2;
    }
    if (c.z < 0.0) {
        c.z = 0.0;
        out.color_clamped |= 4;
    }
    out.color = c;
    return true;
}

namespace {

void check_finite(const GaussianCloud& cloud) {
    for (size_t i = 0; i < cloud.size(); ++i) {
        bool ok = std::isfinite(cloud.opacity_logit[i]);
        for (int k = 0; k < 3 && ok; ++k) {
            ok = std::isfinite(cloud.position[3 * i + k]) && std::isfinite(cloud.log_scale[3 * i + k]);
            // exp overflow would poison the projected covariance downstream
            if (ok) {
                double s = std::exp(cloud.log_scale[3 * i + k]);
                ok = std::isfinite(s * s);
            }
        }
        for (int k = 0; k < 4 && ok; ++k) ok = std::isfinite(cloud.rotation[4 * i + k]);
        const double* sh = cloud.sh_ptr(i);
        for (int k = 0; k < cloud.sh_stride() && ok; ++k) ok = std::isfinite(sh[k]);
        if (!ok)
            throw std::invalid_argument("render: non-finite parameter in Gaussian id " +
                                        std::to_string(cloud.id[i]));
    }
}

struct PixelBounds {
    int r0, r1, c0, c1;  // inclusive pixel index ranges
    bool empty;
};

PixelBounds splat_bounds(const Splat2D& s, int width, int height, bool windowed) {
    if (!windowed) return {0, height - 1, 0, width - 1, false};
    // Pixel c samples at c + 0.5: support [m - r, m + r] covers c iff
    // ceil(m - r - 0.5) <= c <= floor(m + r - 0.5).
    int c0 = static_cast<int>(std::ceil(s.mean2d.x - s.radius_px - 0.5));
    int c1 = static_cast<int>(std::floor(s.mean2d.x + s.radius_px - 0.5));
    int r0 = static_cast<int>(std::ceil(s.mean2d.y - s.radius_px - 0.5));
    int r1 = static_cast<int>(std::floor(s.mean2d.y + s.radius_px - 0.5));
    c0 = std::max(c0, 0);
    r0 = std::max(r0, 0);
    c1 = std::min(c1, width - 1);
    r1 = std::min(r1, height - 1);
    return {r0, r1, c0, c1, r0 > r1 || c0 > c1};
}

}  // namespace

RenderOutput render(const Camera& camera, const GaussianCloud& cloud, const Vec3& background,
                    int sh_degree, const RenderSettings& settings) {
    if (sh_degree != cloud.sh_degree)
        throw std::invalid_argument("render: sh_degree does not match cloud degree");
    check_finite(cloud);

    const int width = camera.width, height = camera.height;
    RenderOutput out;
    out.image = Image(height, width);
    out.final_transmittance.assign(static_cast<size_t>(height) * width, 1.0);
    out.background = background;
    out.sh_degree = sh_degree;
    out.settings = settings;
    out.cloud_generation = cloud.generation;

    const size_t n = cloud.size();
    std::vector<uint8_t> accepted(n, 0);
    std::vector<Splat2D> projected(n);
#pragma omp parallel for schedule(static)
    for (long i = 0; i < static_cast<long>(n); ++i)
        accepted[i] = project_gaussian(camera, cloud, static_cast<size_t>(i), settings, projected[i]);

    out.splats.reserve(n);
    for (size_t i = 0; i < n; ++i)
        if (accepted[i]) out.splats.push_back(projected[i]);
    projected.clear();
    projected.shrink_to_fit();

    std::sort(out.splats.begin(), out.splats.end(), [](const Splat2D& a, const Splat2D& b) {
        if (a.depth != b.depth) return a.depth < b.depth;
        return a.source_id < b.source_id;
    });

    const int n_splats = static_cast<int>(out.splats.size());
    const bool windowed = settings.windowed();
    const double q_max = settings.q_max();

    // Optional tile grid: restricts which pixels test each splat, never the math.
    const bool tiled = settings.use_tile_grid && windowed && n_splats > 0;
    const int tile = std::max(settings.tile_size, 1);
    const int tiles_x = tiled ? (width + tile - 1) / tile : 1;
    const int tiles_y = tiled ? (height + tile - 1) / tile : 1;
    std::vector<std::vector<int32_t>> tile_lists;
    if (tiled) {
        tile_lists.resize(static_cast<size_t>(tiles_x) * tiles_y);
        for (int s = 0; s < n_splats; ++s) {
            PixelBounds b = splat_bounds(out.splats[s], width, height, true);
            if (b.empty) continue;
            for (int tr = b.r0 / tile; tr <= b.r1 / tile; ++tr)
                for (int tc = b.c0 / tile; tc <= b.c1 / tile; ++tc)
                    tile_lists[static_cast<size_t>(tr) * tiles_x + tc].push_back(s);
        }
    }

    std::vector<std::vector<PixelContribution>> row_contribs(height);
    std::vector<std::vector<int>> row_counts(height);

#pragma omp parallel for schedule(static)
    for (int r = 0; r < height; ++r) {
        auto& contribs = row_contribs[r];
        auto& counts = row_counts[r];
        counts.assign(width, 0);
        const double py = r + 0.5;
        for (int c = 0; c < width; ++c) {
            const double px = c + 0.5;
            const std::vector<int32_t>* candidates = nullptr;
            if (tiled) candidates = &tile_lists[static_cast<size_t>(r / tile) * tiles_x + c / tile];
            const int n_cand = tiled ? static_cast<int>(candidates->size()) : n_splats;

            double t = 1.0;
            Vec3 accum;
            int emitted = 0;
            for (int ci = 0; ci < n_cand; ++ci) {
                const int s = tiled ? (*candidates)[ci] : ci;
                const Splat2D& sp = out.splats[s];
                const double dx = px - sp.mean2d.x;
                const double dy = py - sp.mean2d.y;
                if (windowed && (std::fabs(dx) > sp.radius_px || std::fabs(dy) > sp.radius_px)) continue;
                const double q = sp.conic.xx * dx * dx + 2.0 * sp.conic.xy * dx * dy + sp.conic.yy * dy * dy;
                if (windowed && q > q_max) continue;
                const double g = std::exp(-0.5 * q);
                const double alpha = std::min(sp.opacity * g, settings.alpha_clamp);
                if (alpha == 0.0) continue;
                contribs.push_back({s, alpha});
                ++emitted;
                accum += sp.color * (alpha * t);
                t *= 1.0 - alpha;
                if (settings.transmittance_min > 0.0 && t < settings.transmittance_min) break;
            }
            counts[c] = emitted;
            out.image.set_pixel(r, c, accum + background * t);
            out.final_transmittance[static_cast<size_t>(r) * width + c] = t;
        }
    }

    // Flatten per-row contributor lists into CSR, row-major.
    size_t total = 0;
    for (int r = 0; r < height; ++r) total += row_contribs[r].size();
    out.contributions.reserve(total);
    out.contribution_offsets.resize(static_cast<size_t>(height) * width + 1);
    size_t off = 0;
    for (int r = 0; r < height; ++r) {
        size_t base = 0;
        for (int c = 0; c < width; ++c) {
            out.contribution_offsets[static_cast<size_t>(r) * width + c] = off;
            off += row_counts[r][c];
            base += row_counts[r][c];
        }
        out.contributions.insert(out.contributions.end(), row_contribs[r].begin(), row_contribs[r].end());
    }
    out.contribution_offsets.back() = off;
    return out;
}

namespace {

// Per-splat gradient partials accumulated over one pixel row.
struct SplatPartial {
    int32_t splat;
    double g_mean_x, g_mean_y;
    double abs_gx, abs_gy;
    double g_conic_xx, g_conic_xy, g_conic_yy;
    double g_color[3];
    double g_opacity;
    uint8_t contributed;
};

struct RowScratch {
    std::vector<double> g_mean_x, g_mean_y, abs_gx, abs_gy;
    std::vector<double> g_conic_xx, g_conic_xy, g_conic_yy;
    std::vector<double> g_col_r, g_col_g, g_col_b, g_opacity;
    std::vector<uint8_t> touched;
    std::vector<int32_t> touched_list;

    void init(size_t n) {
        g_mean_x.assign(n, 0.0);
        g_mean_y.assign(n, 0.0);
        abs_gx.assign(n, 0.0);
        abs_gy.assign(n, 0.0);
        g_conic_xx.assign(n, 0.0);
        g_conic_xy.assign(n, 0.0);
        g_conic_yy.assign(n, 0.0);
        g_col_r.assign(n, 0.0);
        g_col_g.assign(n, 0.0);
        g_col_b.assign(n, 0.0);
        g_opacity.assign(n, 0.0);
        touched.assign(n, 0);
        touched_list.clear();
    }
    void clear_touched() {
        for (int32_t s : touched_list) {
            g_mean_x[s] = g_mean_y[s] = abs_gx[s] = abs_gy[s] = 0.0;
            g_conic_xx[s] = g_conic_xy[s] = g_conic_yy[s] = 0.0;
            g_col_r[s] = g_col_g[s] = g_col_b[s] = g_opacity[s] = 0.0;
            touched[s] = 0;
        }
        touched_list.clear();
    }
    void touch(int32_t s) {
        if (!touched[s]) {
            touched[s] = 1;
            touched_list.push_back(s);
        }
    }
};

}  // namespace

void backward(const RenderOutput& out, const Camera& camera, const GaussianCloud& cloud,
              const Image& loss_grad_image, CloudGradients& grads, ViewspaceGradStats* stats) {
    if (out.cloud_generation != cloud.generation)
        throw StaleRenderOutput("backward: render output is stale (cloud mutated since forward pass)");
    require_same_shape(out.image, loss_grad_image, "backward");
    if (stats && stats->size() != cloud.size())
        throw std::invalid_argument("backward: stats size does not match cloud");

    const int width = out.image.width, height = out.image.height;
    const size_t n_splats = out.splats.size();
    grads.resize_zero(cloud.size(), cloud.sh_stride());

    // Phase A: per-row partial accumulation (parallel, deterministic within a row).
    std::vector<std::vector<SplatPartial>> row_partials(height);

#pragma omp parallel
    {
        RowScratch scratch;
        scratch.init(n_splats);
        std::vector<double> t_buf;

#pragma omp for schedule(static)
        for (int r = 0; r < height; ++r) {
            scratch.clear_touched();
            const double py = r + 0.5;
            for (int c = 0; c < width; ++c) {
                const size_t pix = static_cast<size_t>(r) * width + c;
                auto [begin, end] = out.pixel_contribs(pix);
                const long count = end - begin;
                if (count == 0) continue;
                const double px = c + 0.5;
                const Vec3 g = loss_grad_image.pixel(r, c);

                t_buf.resize(count);
                double t = 1.0;
                for (long i = 0; i < count; ++i) {
                    t_buf[i] = t;
                    t *= 1.0 - begin[i].alpha;
                }
                // t now equals the recorded final transmittance of this pixel.
                Vec3 behind = out.background * t;
                for (long i = count - 1; i >= 0; --i) {
                    const int32_t s = begin[i].splat;
                    const double alpha = begin[i].alpha;
                    const double ti = t_buf[i];
                    const Splat2D& sp = out.splats[s];
                    scratch.touch(s);

                    const double w = alpha * ti;
                    scratch.g_col_r[s] += g.x * w;
                    scratch.g_col_g[s] += g.y * w;
                    scratch.g_col_b[s] += g.z * w;

                    const double inv_one_minus = 1.0 / (1.0 - alpha);
                    const double dl_dalpha = g.x * (sp.color.x * ti - behind.x * inv_one_minus) +
                                             g.y * (sp.color.y * ti - behind.y * inv_one_minus) +
                                             g.z * (sp.color.z * ti - behind.z * inv_one_minus);

                    if (alpha < out.settings.alpha_clamp) {
                        const double gval = alpha / sp.opacity;
                        scratch.g_opacity[s] += gval * dl_dalpha;
                        const double dl_dq = -0.5 * alpha * dl_dalpha;
                        const double dx = px - sp.mean2d.x;
                        const double dy = py - sp.mean2d.y;
                        const double ax = sp.conic.xx * dx + sp.conic.xy * dy;
                        const double ay = sp.conic.xy * dx + sp.conic.yy * dy;
                        const double gmx = -2.0 * dl_dq * ax;
                        const double gmy = -2.0 * dl_dq * ay;
                        scratch.g_mean_x[s] += gmx;
                        scratch.g_mean_y[s] += gmy;
                        scratch.abs_gx[s] += std::fabs(gmx);
                        scratch.abs_gy[s] += std::fabs(gmy);
                        scratch.g_conic_xx[s] += dl_dq * dx * dx;
                        scratch.g_conic_xy[s] += dl_dq * dx * dy;
                        scratch.g_conic_yy[s] += dl_dq * dy * dy;
                    }
                    behind.x += sp.color.x * w;
                    behind.y += sp.color.y * w;
                    behind.z += sp.color.z * w;
                }
            }
            auto& partials = row_partials[r];
            partials.reserve(scratch.touched_list.size());
            for (int32_t s : scratch.touched_list) {
                partials.push_back({s, scratch.g_mean_x[s], scratch.g_mean_y[s], scratch.abs_gx[s],
                                    scratch.abs_gy[s], scratch.g_conic_xx[s], scratch.g_conic_xy[s],
                                    scratch.g_conic_yy[s],
                                    {scratch.g_col_r[s], scratch.g_col_g[s], scratch.g_col_b[s]},
                                    scratch.g_opacity[s], 1});
            }
        }
    }

    // Phase B: merge rows in fixed order into per-splat totals.
    std::vector<Vec2> g_mean2d(n_splats);
    std::vector<Vec2> abs_g(n_splats);
    std::vector<SymMat2> g_conic(n_splats);
    std::vector<Vec3> g_color(n_splats);
    std::vector<double> g_opacity(n_splats, 0.0);
    std::vector<uint8_t> contributed(n_splats, 0);
    for (int r = 0; r < height; ++r) {
        for (const SplatPartial& p : row_partials[r]) {
            g_mean2d[p.splat] += Vec2{p.g_mean_x, p.g_mean_y};
            abs_g[p.splat] += Vec2{p.abs_gx, p.abs_gy};
            g_conic[p.splat] += SymMat2{p.g_conic_xx, p.g_conic_xy, p.g_conic_yy};
            g_color[p.splat] += Vec3{p.g_color[0], p.g_color[1], p.g_color[2]};
            g_opacity[p.splat] += p.g_opacity;
            contributed[p.splat] = 1;
        }
    }

    // Phase C: chain splat-space gradients to cloud parameters (parallel; each
    // Gaussian projects to at most one splat, so writes are disjoint).
    const Mat3& w = camera.world_to_camera;
    const Vec3 cam_center = camera.center();
    const int n_coeffs = sh_coeff_count(cloud.sh_degree);

#pragma omp parallel for schedule(static)
    for (long si = 0; si < static_cast<long>(n_splats); ++si) {
        const Splat2D& sp = out.splats[si];
        const size_t idx = sp.source_index;

        if (stats) {
            stats->signed_grad_norm_sum[idx] += norm(g_mean2d[si]);
            stats->abs_grad_norm_sum[idx] += norm(abs_g[si]);
            if (contributed[si]) {
                stats->observation_count[idx] += 1;
                stats->max_screen_radius[idx] = std::fmax(stats->max_screen_radius[idx], sp.radius_px);
            }
        }

        // Opacity logit.
        const double o = sp.opacity;
        grads.opacity_logit[idx] += g_opacity[si] * o * (1.0 - o);

        // Color -> SH coefficients and view direction.
        double basis[16], bdx[16], bdy[16], bdz[16];
        sh_basis(sp.view_dir, cloud.sh_degree, basis);
        sh_basis_grad(sp.view_dir, cloud.sh_degree, bdx, bdy, bdz);
        const double gc[3] = {(sp.color_clamped & 1) ? 0.0 : g_color[si].x,
                              (sp.color_clamped & 2) ? 0.0 : g_color[si].y,
                              (sp.color_clamped & 4) ? 0.0 : g_color[si].z};
        Vec3 g_dir;
        const double* coeffs = cloud.sh_ptr(idx);
        for (int k = 0; k < n_coeffs; ++k) {
            for (int ch = 0; ch < 3; ++ch) {
                grads.sh[idx * cloud.sh_stride() + 3 * k + ch] += basis[k] * gc[ch];
                const double sc = coeffs[3 * k + ch] * gc[ch];
                g_dir.x += sc * bdx[k];
                g_dir.y += sc * bdy[k];
                g_dir.z += sc * bdz[k];
            }
        }
        Vec3 g_position;
        {
            // dir = (mu - cam_center) / |mu - cam_center|
            const Vec3 v = cloud.pos(idx) - cam_center;
            const double r = norm(v);
            const double proj = dot(sp.view_dir, g_dir);
            g_position += Vec3{(g_dir.x - sp.view_dir.x * proj) / r, (g_dir.y - sp.view_dir.y * proj) / r,
                               (g_dir.z - sp.view_dir.z * proj) / r};
        }

        // mean2d -> camera-space position via the projection Jacobian.
        Vec3 g_pcam{sp.view_jacobian[0][0] * g_mean2d[si].x + sp.view_jacobian[1][0] * g_mean2d[si].y,
                    sp.view_jacobian[0][1] * g_mean2d[si].x + sp.view_jacobian[1][1] * g_mean2d[si].y,
                    sp.view_jacobian[0][2] * g_mean2d[si].x + sp.view_jacobian[1][2] * g_mean2d[si].y};

        // conic -> cov2d: dL/dC = -A (dL/dA) A with A = conic (both symmetric).
        const SymMat2& a = sp.conic;
        const SymMat2& ga = g_conic[si];
        // B = A * gA (full 2x2), gC = -(B * A)
        const double b00 = a.xx * ga.xx + a.xy * ga.xy;
        const double b01 = a.xx * ga.xy + a.xy * ga.yy;
        const double b10 = a.xy * ga.xx + a.yy * ga.xy;
        const double b11 = a.xy * ga.xy + a.yy * ga.yy;
        SymMat2 g_cov{-(b00 * a.xx + b01 * a.xy), -(b00 * a.xy + b01 * a.yy), -(b10 * a.xy + b11 * a.yy)};

        // cov2d = J V J^T + dilation I with V = W Sigma W^T.
        const double (*jac)[3] = sp.view_jacobian;
        // gV = J^T gC J (3x3 symmetric)
        Mat3 gv;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                const double c0 = jac[0][i] * g_cov.xx + jac[1][i] * g_cov.xy;
                const double c1 = jac[0][i] * g_cov.xy + jac[1][i] * g_cov.yy;
                gv[i][j] = c0 * jac[0][j] + c1 * jac[1][j];
            }
        // gJ = 2 gC J V
        Mat3 sigma = build_covariance(cloud.scales_log(idx), cloud.rot(idx));
        Mat3 v_cam = w * sigma * w.transposed();
        double jvm[2][3];
        for (int a2 = 0; a2 < 2; ++a2)
            for (int b2 = 0; b2 < 3; ++b2)
                jvm[a2][b2] = jac[a2][0] * v_cam[0][b2] + jac[a2][1] * v_cam[1][b2] + jac[a2][2] * v_cam[2][b2];
        double gj[2][3];
        for (int b2 = 0; b2 < 3; ++b2) {
            gj[0][b2] = 2.0 * (g_cov.xx * jvm[0][b2] + g_cov.xy * jvm[1][b2]);
            gj[1][b2] = 2.0 * (g_cov.xy * jvm[0][b2] + g_cov.yy * jvm[1][b2]);
        }
        // J entries depend on p_cam.
        {
            const double x = sp.p_cam.x, y = sp.p_cam.y, z = sp.p_cam.z;
            const double inv_z2 = 1.0 / (z * z);
            const double inv_z3 = inv_z2 / z;
            g_pcam.x += gj[0][2] * (-camera.fx * inv_z2);
            g_pcam.y += gj[1][2] * (-camera.fy * inv_z2);
            g_pcam.z += gj[0][0] * (-camera.fx * inv_z2) + gj[0][2] * (2.0 * camera.fx * x * inv_z3) +
                        gj[1][1] * (-camera.fy * inv_z2) + gj[1][2] * (2.0 * camera.fy * y * inv_z3);
        }
        g_position += mul_transposed(w, g_pcam);

        grads.position[3 * idx] += g_position.x;
        grads.position[3 * idx + 1] += g_position.y;
        grads.position[3 * idx + 2] += g_position.z;

        // gSigma = W^T gV W, then Sigma = (R S)(R S)^T.
        Mat3 g_sigma = w.transposed() * gv * w;
        const Quat q_raw = cloud.rot(idx);
        const double qn = q_raw.norm();
        const Quat q = q_raw.normalized();
        const Mat3 rot = rotation_matrix(q);
        const Vec3 s = cloud.scales(idx);
        Mat3 m = rot * Mat3::diag(s);
        // gM = 2 gSigma M
        Mat3 gm = (g_sigma * m) * 2.0;
        for (int k = 0; k < 3; ++k) {
            double gsk = gm[0][k] * rot[0][k] + gm[1][k] * rot[1][k] + gm[2][k] * rot[2][k];
            grads.log_scale[3 * idx + k] += gsk * s[k];
        }
        // gR = gM S
        Mat3 gr;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) gr[i][j] = gm[i][j] * s[j];
        // Contract with dR/dq for the unit quaternion.
        const double qw = q.w, qx = q.x, qy = q.y, qz = q.z;
        double gq[4];
        gq[0] = 2.0 * (gr[0][1] * -qz + gr[0][2] * qy + gr[1][0] * qz + gr[1][2] * -qx + gr[2][0] * -qy +
                       gr[2][1] * qx);
        gq[1] = 2.0 * (gr[0][1] * qy + gr[0][2] * qz + gr[1][0] * qy + gr[1][1] * -2.0 * qx +
                       gr[1][2] * -qw + gr[2][0] * qz + gr[2][1] * qw + gr[2][2] * -2.0 * qx);
        gq[2] = 2.0 * (gr[0][0] * -2.0 * qy + gr[0][1] * qx + gr[0][2] * qw + gr[1][0] * qx +
                       gr[1][2] * qz + gr[2][0] * -qw + gr[2][1] * qz + gr[2][2] * -2.0 * qy);
        gq[3] = 2.0 * (gr[0][0] * -2.0 * qz + gr[0][1] * -qw + gr[0][2] * qx + gr[1][0] * qw +
                       gr[1][1] * -2.0 * qz + gr[1][2] * qy + gr[2][0] * qx + gr[2][1] * qy);
        // Through the normalization q = q_raw / |q_raw|.
        const double dot_gq = gq[0] * qw + gq[1] * qx + gq[2] * qy + gq[3] * qz;
        grads.rotation[4 * idx] += (gq[0] - qw * dot_gq) / qn;
        grads.rotation[4 * idx + 1] += (gq[1] - qx * dot_gq) / qn;
        grads.rotation[4 * idx + 2] += (gq[2] - qy * dot_gq) / qn;
        grads.rotation[4 * idx + 3] += (gq[3] - qz * dot_gq) / qn;
    }
}

}  // namespace resgs
