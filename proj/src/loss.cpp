#include "resgs/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace resgs {

namespace {

constexpr double kC1 = 0.01 * 0.01;  // (0.01 * peak)^2, peak = 1
constexpr double kC2 = 0.03 * 0.03;

std::vector<double> gaussian_kernel(int window, double sigma) {
    std::vector<double> k(window);
    int center = window / 2;
    double sum = 0.0;
    for (int i = 0; i < window; ++i) {
        k[i] = std::exp(-0.5 * (i - center) * (i - center) / (sigma * sigma));
        sum += k[i];
    }
    for (double& v : k) v /= sum;
    return k;
}

// One color channel as a flat plane.
struct Plane {
    int h = 0, w = 0;
    std::vector<double> v;
    Plane() = default;
    Plane(int h_, int w_) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, 0.0) {}
    double& at(int r, int c) { return v[static_cast<size_t>(r) * w + c]; }
    double at(int r, int c) const { return v[static_cast<size_t>(r) * w + c]; }
};

Plane extract_channel(const Image& img, int ch) {
    Plane p(img.height, img.width);
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) p.at(r, c) = img.at(r, c, ch);
    return p;
}

// Separable valid convolution: output (h - win + 1) x (w - win + 1).
Plane conv_valid(const Plane& in, const std::vector<double>& k) {
    int win = static_cast<int>(k.size());
    Plane mid(in.h, in.w - win + 1);
#pragma omp parallel for schedule(static)
    for (int r = 0; r < in.h; ++r)
        for (int c = 0; c < mid.w; ++c) {
            double s = 0.0;
            for (int i = 0; i < win; ++i) s += k[i] * in.at(r, c + i);
            mid.at(r, c) = s;
        }
    Plane out(in.h - win + 1, mid.w);
#pragma omp parallel for schedule(static)
    for (int r = 0; r < out.h; ++r)
        for (int c = 0; c < out.w; ++c) {
            double s = 0.0;
            for (int i = 0; i < win; ++i) s += k[i] * mid.at(r + i, c);
            out.at(r, c) = s;
        }
    return out;
}

// Adjoint of conv_valid: scatters a valid-grid field back to the full grid.
Plane conv_adjoint(const Plane& in, const std::vector<double>& k, int full_h, int full_w) {
    int win = static_cast<int>(k.size());
    Plane mid(full_h, in.w);
#pragma omp parallel for schedule(static)
    for (int r = 0; r < full_h; ++r)
        for (int c = 0; c < in.w; ++c) {
            double s = 0.0;
            for (int i = 0; i < win; ++i) {
                int rr = r - i;
                if (rr >= 0 && rr < in.h) s += k[i] * in.at(rr, c);
            }
            mid.at(r, c) = s;
        }
    Plane out(full_h, full_w);
#pragma omp parallel for schedule(static)
    for (int r = 0; r < full_h; ++r)
        for (int c = 0; c < full_w; ++c) {
            double s = 0.0;
            for (int i = 0; i < win; ++i) {
                int cc = c - i;
                if (cc >= 0 && cc < in.w) s += k[i] * mid.at(r, cc);
            }
            out.at(r, c) = s;
        }
    return out;
}

void validate_cfg(const LossConfig& cfg) {
    if (cfg.ssim_window < 3 || cfg.ssim_window % 2 == 0)
        throw std::invalid_argument("ssim window must be odd and >= 3");
    if (cfg.lambda_dssim < 0.0 || cfg.lambda_dssim > 1.0)
        throw std::invalid_argument("lambda_dssim must be in [0, 1]");
}

// Per-channel SSIM with optional gradient accumulation into grad (scaled by grad_scale).
double ssim_channel(const Plane& x, const Plane& y, const std::vector<double>& k, Plane* grad,
                    double grad_scale) {
    Plane mu_x = conv_valid(x, k);
    Plane mu_y = conv_valid(y, k);

    Plane xx(x.h, x.w), yy(x.h, x.w), xy(x.h, x.w);
    for (size_t i = 0; i < x.v.size(); ++i) {
        xx.v[i] = x.v[i] * x.v[i];
        yy.v[i] = y.v[i] * y.v[i];
        xy.v[i] = x.v[i] * y.v[i];
    }
    Plane m_xx = conv_valid(xx, k);
    Plane m_yy = conv_valid(yy, k);
    Plane m_xy = conv_valid(xy, k);

    const size_t n_pos = mu_x.v.size();
    double total = 0.0;
    // P: dS/dmu_x folded with the sigma chain terms; Q: dS/dm_xx; R: dS/dm_xy.
    Plane p_field, q_field, r_field;
    if (grad) {
        p_field = Plane(mu_x.h, mu_x.w);
        q_field = Plane(mu_x.h, mu_x.w);
        r_field = Plane(mu_x.h, mu_x.w);
    }
    for (size_t i = 0; i < n_pos; ++i) {
        double mx = mu_x.v[i], my = mu_y.v[i];
        double sxx = m_xx.v[i] - mx * mx;
        double syy = m_yy.v[i] - my * my;
        double sxy = m_xy.v[i] - mx * my;
        double a1 = 2.0 * mx * my + kC1;
        double a2 = 2.0 * sxy + kC2;
        double b1 = mx * mx + my * my + kC1;
        double b2 = sxx + syy + kC2;
        double s = (a1 * a2) / (b1 * b2);
        total += s;
        if (grad) {
            double inv_bb = 1.0 / (b1 * b2);
            double ds_dmxx = -s / b2;               // via sxx
            double ds_dmxy = 2.0 * a1 * inv_bb;     // via sxy
            double ds_dmux = 2.0 * my * a2 * inv_bb - s * 2.0 * mx / b1  // direct
                             + ds_dmxx * (-2.0 * mx)                      // via sxx = m_xx - mu_x^2
                             + ds_dmxy * (-my);                           // via sxy = m_xy - mu_x mu_y
            p_field.v[i] = ds_dmux;
            q_field.v[i] = ds_dmxx;
            r_field.v[i] = ds_dmxy;
        }
    }
    if (grad) {
        Plane adj_p = conv_adjoint(p_field, k, x.h, x.w);
        Plane adj_q = conv_adjoint(q_field, k, x.h, x.w);
        Plane adj_r = conv_adjoint(r_field, k, x.h, x.w);
        for (size_t i = 0; i < x.v.size(); ++i)
            grad->v[i] += grad_scale * (adj_p.v[i] + 2.0 * x.v[i] * adj_q.v[i] + y.v[i] * adj_r.v[i]);
    }
    return total / static_cast<double>(n_pos);
}

}  // namespace

double ssim(const Image& a, const Image& b, const LossConfig& cfg) {
    validate_cfg(cfg);
    require_same_shape(a, b, "ssim");
    if (a.height < cfg.ssim_window || a.width < cfg.ssim_window)
        throw ShapeError("ssim: image smaller than the window");
    auto k = gaussian_kernel(cfg.ssim_window, cfg.ssim_sigma);
    double total = 0.0;
    for (int ch = 0; ch < 3; ++ch) {
        Plane x = extract_channel(a, ch);
        Plane y = extract_channel(b, ch);
        total += ssim_channel(x, y, k, nullptr, 0.0);
    }
    return total / 3.0;
}

double psnr(const Image& a, const Image& b, double peak) {
    require_same_shape(a, b, "psnr");
    double mse = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.data.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

LossResult loss(const Image& rendered, const Image& target, const LossConfig& cfg) {
    validate_cfg(cfg);
    require_same_shape(rendered, target, "loss");
    for (double v : rendered.data)
        if (!std::isfinite(v)) throw std::invalid_argument("loss: non-finite rendered value");

    const double lambda = cfg.lambda_dssim;
    const size_t n = rendered.data.size();
    LossResult res;
    res.grad = Image(rendered.height, rendered.width);

    // L1 term; subgradient 0 at exact ties.
    double l1 = 0.0;
    const double l1_w = (1.0 - lambda) / static_cast<double>(n);
    for (size_t i = 0; i < n; ++i) {
        double d = rendered.data[i] - target.data[i];
        l1 += std::fabs(d);
        res.grad.data[i] = d > 0.0 ? l1_w : (d < 0.0 ? -l1_w : 0.0);
    }
    l1 /= static_cast<double>(n);

    double ssim_val = 0.0;
    if (lambda > 0.0) {
        if (rendered.height < cfg.ssim_window || rendered.width < cfg.ssim_window)
            throw ShapeError("loss: image smaller than the SSIM window");
        auto k = gaussian_kernel(cfg.ssim_window, cfg.ssim_sigma);
        // d(loss)/d(ssim_map entry) = -lambda / (2 * 3 * n_positions)
        for (int ch = 0; ch < 3; ++ch) {
            Plane x = extract_channel(rendered, ch);
            Plane y = extract_channel(target, ch);
            Plane gch(rendered.height, rendered.width);
            size_t n_pos = static_cast<size_t>(rendered.height - cfg.ssim_window + 1) *
                           (rendered.width - cfg.ssim_window + 1);
            double scale = -lambda / (2.0 * 3.0 * static_cast<double>(n_pos));
            ssim_val += ssim_channel(x, y, k, &gch, scale);
            for (int r = 0; r < rendered.height; ++r)
                for (int c = 0; c < rendered.width; ++c) res.grad.at(r, c, ch) += gch.at(r, c);
        }
        ssim_val /= 3.0;
    }

    res.value = (1.0 - lambda) * l1 + lambda * (1.0 - ssim_val) / 2.0;
    return res;
}

}  // namespace resgs
