#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "resgs/loss.hpp"
#include "resgs/rng.hpp"
#include "test_utils.hpp"

using namespace resgs;

TEST_CASE("loss is zero with zero gradient for identical images") {
    Rng rng(3);
    Image img = testutil::random_image(rng, 16, 16);
    LossConfig cfg;
    LossResult r = loss(img, img, cfg);
    CHECK(r.value == doctest::Approx(0.0).epsilon(1e-15));
    for (double g : r.grad.data) CHECK(std::fabs(g) < 1e-12);
}

TEST_CASE("pure L1 case: constant offset") {
    Rng rng(4);
    Image rendered = testutil::random_image(rng, 12, 12, 0.1, 0.8);
    Image target = rendered;
    for (double& v : target.data) v += 0.1;
    LossConfig cfg;
    cfg.lambda_dssim = 0.0;
    LossResult r = loss(rendered, target, cfg);
    CHECK(r.value == doctest::Approx(0.1).epsilon(1e-12));
    const double want = -1.0 / static_cast<double>(rendered.data.size());
    for (double g : r.grad.data) CHECK(g == doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("loss gradient matches central finite differences across lambda") {
    Rng rng(5);
    for (double lambda : {0.0, 0.2, 1.0}) {
        Image rendered = testutil::random_image(rng, 14, 15, 0.1, 0.9);
        Image target = testutil::random_image(rng, 14, 15, 0.1, 0.9);
        // Keep the L1 term away from its kink under the finite-difference step.
        for (size_t i = 0; i < rendered.data.size(); ++i)
            if (std::fabs(rendered.data[i] - target.data[i]) < 1e-3) rendered.data[i] += 2e-3;
        LossConfig cfg;
        cfg.lambda_dssim = lambda;
        LossResult r = loss(rendered, target, cfg);
        Rng pick(77);
        const double h = 1e-5;
        for (int probe = 0; probe < 60; ++probe) {
            size_t i = pick.uniform_index(rendered.data.size());
            double orig = rendered.data[i];
            rendered.data[i] = orig + h;
            double lp = loss(rendered, target, cfg).value;
            rendered.data[i] = orig - h;
            double lm = loss(rendered, target, cfg).value;
            rendered.data[i] = orig;
            double fd = (lp - lm) / (2 * h);
            // 1e-5 floor: entries below it sit at the finite-difference noise level.
            double denom = std::fmax(std::fmax(std::fabs(fd), std::fabs(r.grad.data[i])), 1e-5);
            CHECK(std::fabs(fd - r.grad.data[i]) / denom < 1e-6);
        }
    }
}

TEST_CASE("loss rejects shape mismatches and non-finite input") {
    Image a(8, 8), b(8, 9);
    CHECK_THROWS_AS(loss(a, b, LossConfig{}), ShapeError);
    Image c(16, 16), d(16, 16);
    c.data[5] = std::nan("");
    CHECK_THROWS_AS(loss(c, d, LossConfig{}), std::invalid_argument);
}

TEST_CASE("psnr trivial and derived values") {
    Rng rng(6);
    Image a = testutil::random_image(rng, 10, 10);
    CHECK(std::isinf(psnr(a, a)));

    // MSE = 0.01 with peak 1 -> 20 dB
    Image b = a;
    for (double& v : b.data) v += 0.1;
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-12));

    // random pair vs direct formula
    Image c = testutil::random_image(rng, 10, 10);
    double mse = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) mse += (a.data[i] - c.data[i]) * (a.data[i] - c.data[i]);
    mse /= static_cast<double>(a.data.size());
    CHECK(psnr(a, c) == doctest::Approx(10.0 * std::log10(1.0 / mse)).epsilon(1e-9));
}

TEST_CASE("ssim trivial values") {
    Rng rng(7);
    Image a = testutil::random_image(rng, 16, 16);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));

    // constant mu vs constant zero: closed form C1 / (mu^2 + C1)
    double mu = 0.4;
    Image am(16, 16, {mu, mu, mu});
    Image bz(16, 16);
    double c1 = 0.01 * 0.01;
    CHECK(ssim(am, bz) == doctest::Approx(c1 / (mu * mu + c1)).epsilon(1e-12));
}

TEST_CASE("ssim matches the naive sliding-window oracle") {
    Rng rng(8);
    for (int trial = 0; trial < 5; ++trial) {
        Image a = testutil::random_image(rng, 15, 18);
        Image b = testutil::random_image(rng, 15, 18);
        double want = testutil::naive_ssim(a, b, 11, 1.5, 0.01 * 0.01, 0.03 * 0.03);
        CHECK(ssim(a, b) == doctest::Approx(want).epsilon(1e-8));
    }
}

TEST_CASE("ssim is symmetric") {
    Rng rng(9);
    Image a = testutil::random_image(rng, 13, 13);
    Image b = testutil::random_image(rng, 13, 13);
    CHECK(std::fabs(ssim(a, b) - ssim(b, a)) < 1e-12);
}

TEST_CASE("ssim rejects images smaller than the window") {
    Image a(8, 8), b(8, 8);
    CHECK_THROWS_AS(ssim(a, b), ShapeError);
}

TEST_CASE("loss is positive when images differ") {
    Rng rng(10);
    Image a = testutil::random_image(rng, 16, 16);
    Image b = a;
    b.data[40] += 0.25;
    CHECK(loss(a, b, LossConfig{}).value > 0.0);
}
