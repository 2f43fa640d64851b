#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "resgs/densify.hpp"
#include "resgs/reference.hpp"
#include "test_utils.hpp"

using namespace resgs;

namespace {

GaussianCloud make_cloud(int n, int degree = 0) {
    Rng rng(101);
    return testutil::random_cloud(rng, n, degree);
}

ViewspaceGradStats stats_with_avg(const GaussianCloud& cloud, const std::vector<double>& avg,
                                  int count = 4) {
    ViewspaceGradStats stats(cloud.size());
    for (size_t i = 0; i < cloud.size(); ++i) {
        stats.observation_count[i] = count;
        stats.signed_grad_norm_sum[i] = avg[i] * count;
        stats.abs_grad_norm_sum[i] = avg[i] * count;
    }
    return stats;
}

}  // namespace

TEST_CASE("threshold_for: level >= k returns tau, below follows the power rule") {
    DensifyConfig cfg;
    cfg.tau = 0.00028;
    CHECK(threshold_for(5, 3, cfg) == cfg.tau);
    CHECK(threshold_for(3, 3, cfg) == cfg.tau);
    CHECK(threshold_for(0, 3, cfg) == doctest::Approx(0.00014).epsilon(1e-12));

    cfg.tau = 0.00067;
    CHECK(threshold_for(2, 3, cfg) == doctest::Approx(0.00067 * std::pow(2.0, -1.0 / 3.0)).epsilon(1e-12));
    CHECK(threshold_for(2, 3, cfg) == doctest::Approx(0.00053177).epsilon(1e-4));
}

TEST_CASE("threshold_for is non-increasing in k - level") {
    DensifyConfig cfg;
    for (int k = 0; k < 10; ++k) {
        double prev = -1.0;
        for (int level = 9; level >= 0; --level) {
            double t = threshold_for(level, k, cfg);
            if (prev >= 0.0) CHECK(t <= prev + 1e-18);
            prev = t;
            if (level >= k) CHECK(t == cfg.tau);
        }
    }
}

TEST_CASE("select: unobserved Gaussians are never selected") {
    GaussianCloud cloud = make_cloud(5);
    ViewspaceGradStats stats(cloud.size());
    for (size_t i = 0; i < 5; ++i) stats.signed_grad_norm_sum[i] = 1.0;  // counts stay zero
    DensifyConfig cfg;
    CHECK(select(stats, cloud, 0, cfg).empty());
}

TEST_CASE("select: boundary average equal to tau is selected") {
    GaussianCloud cloud = make_cloud(3);
    DensifyConfig cfg;
    cfg.tau = 0.25;
    cfg.grad_source = GradSource::Signed;
    std::vector<double> avg{0.25, 0.2499999, 0.26};
    ViewspaceGradStats stats = stats_with_avg(cloud, avg);
    for (size_t i = 0; i < 3; ++i) cloud.level[i] = 7;  // level >= k: plain tau
    auto ids = select(stats, cloud, 2, cfg);
    CHECK(ids == std::vector<uint32_t>{0, 2});
}

TEST_CASE("select: mixed levels against the brute-force rule") {
    GaussianCloud cloud = make_cloud(24);
    Rng rng(7);
    DensifyConfig cfg;
    cfg.tau = 0.3;
    cfg.grad_source = GradSource::Absolute;
    const int k = 4;
    std::vector<double> avg(cloud.size());
    for (size_t i = 0; i < cloud.size(); ++i) {
        cloud.level[i] = static_cast<int>(rng.uniform_index(7));
        avg[i] = rng.uniform(0.0, 0.5);
    }
    ViewspaceGradStats stats = stats_with_avg(cloud, avg);
    auto ids = select(stats, cloud, k, cfg);

    std::vector<uint32_t> want;
    for (size_t i = 0; i < cloud.size(); ++i) {
        double thr = cloud.level[i] >= k ? cfg.tau : cfg.tau / std::pow(cfg.alpha, k - cloud.level[i]);
        if (avg[i] >= thr) want.push_back(cloud.id[i]);
    }
    CHECK(ids == want);

    // Monotone in gradient: anything with a bigger average at equal level than
    // a selected Gaussian must itself be selected.
    for (size_t i = 0; i < cloud.size(); ++i)
        for (size_t j = 0; j < cloud.size(); ++j) {
            bool i_in = std::find(ids.begin(), ids.end(), cloud.id[i]) != ids.end();
            bool j_in = std::find(ids.begin(), ids.end(), cloud.id[j]) != ids.end();
            if (i_in && cloud.level[j] == cloud.level[i] && avg[j] >= avg[i]) CHECK(j_in);
        }
}

TEST_CASE("select: fixed average selects only low levels when g is between thresholds") {
    GaussianCloud cloud = make_cloud(10);
    DensifyConfig cfg;
    cfg.tau = 0.4;
    cfg.grad_source = GradSource::Signed;
    const int k = 3;
    // g with tau/alpha^(k-l) <= g < tau for l = 0 but not l >= 2.
    double g = cfg.tau / std::pow(cfg.alpha, 2.5);
    std::vector<double> avg(cloud.size(), g);
    for (size_t i = 0; i < cloud.size(); ++i) cloud.level[i] = static_cast<int>(i % 5);
    ViewspaceGradStats stats = stats_with_avg(cloud, avg);
    auto ids = select(stats, cloud, k, cfg);
    for (uint32_t gid : ids) CHECK(cloud.level[*cloud.find_index(gid)] == 0);
    size_t zeros = 0;
    for (size_t i = 0; i < cloud.size(); ++i) zeros += cloud.level[i] == 0;
    CHECK(ids.size() == zeros);
}

TEST_CASE("residual_split: scales, opacity, level and population follow the rules") {
    GaussianCloud cloud = make_cloud(4);
    DensifyConfig cfg;  // lambda_s = 1.6, beta = 0.3
    cloud.log_scale[3 * 1] = std::log(1.6);
    cloud.log_scale[3 * 1 + 1] = std::log(0.8);
    cloud.log_scale[3 * 1 + 2] = std::log(3.2);
    cloud.set_opacity(1, 0.9);
    cloud.level[1] = 2;
    Vec3 parent_pos = cloud.pos(1);
    Vec3 parent_log_scale = cloud.scales_log(1);

    Rng rng(1);
    DensifyReport report;
    residual_split(cloud, 1, cfg, rng, report);

    CHECK(cloud.size() == 5);
    REQUIRE(report.created.size() == 1);
    size_t child = *cloud.find_index(report.created[0].id);
    CHECK(report.created[0].parent_id == 1);
    CHECK(report.created[0].level == 3);
    CHECK(cloud.level[child] == 3);

    Vec3 cs = cloud.scales(child);
    CHECK(cs.x == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(cs.y == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(cs.z == doctest::Approx(2.0).epsilon(1e-12));

    // Child copied the pre-reduction opacity; parent multiplied by beta.
    CHECK(cloud.opacity(child) == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(cloud.opacity(1) == doctest::Approx(0.27).epsilon(1e-12));

    // Parent scale and position untouched.
    CHECK(norm(cloud.pos(1) - parent_pos) == 0.0);
    CHECK(norm(cloud.scales_log(1) - parent_log_scale) == 0.0);

    // Child volume = parent volume / lambda_s^3 exactly (product of scales).
    double parent_vol = std::exp(parent_log_scale.x + parent_log_scale.y + parent_log_scale.z);
    double child_vol = cs.x * cs.y * cs.z;
    CHECK(child_vol == doctest::Approx(parent_vol / std::pow(1.6, 3.0)).epsilon(1e-12));
}

TEST_CASE("residual_split on an unknown id fails") {
    GaussianCloud cloud = make_cloud(2);
    Rng rng(2);
    DensifyReport report;
    CHECK_THROWS_AS(residual_split(cloud, 77, DensifyConfig{}, rng, report), IdNotFound);
    CHECK_THROWS_AS(baseline_densify(cloud, 77, DensifyConfig{}, rng, report), IdNotFound);
}

TEST_CASE("baseline_densify splits large Gaussians and clones small ones") {
    DensifyConfig cfg;
    cfg.scene_extent = 10.0;
    cfg.baseline_percent_dense = 0.01;  // tau_s = 0.1

    SUBCASE("split branch") {
        GaussianCloud cloud = make_cloud(3);
        double s = 0.2;  // 2 * tau_s
        for (int k = 0; k < 3; ++k) cloud.log_scale[3 * 1 + k] = std::log(s);
        Rng rng(3);
        DensifyReport report;
        baseline_densify(cloud, 1, cfg, rng, report);
        CHECK(cloud.size() == 4);  // +2 children, -1 parent
        CHECK(!cloud.find_index(1).has_value());
        CHECK(report.created.size() == 2);
        CHECK(report.pruned_ids == std::vector<uint32_t>{1});
        for (const auto& c : report.created) {
            size_t idx = *cloud.find_index(c.id);
            Vec3 cs = cloud.scales(idx);
            CHECK(cs.x == doctest::Approx(s / 1.6).epsilon(1e-12));
        }
    }

    SUBCASE("clone branch duplicates verbatim") {
        GaussianCloud cloud = make_cloud(3);
        for (int k = 0; k < 3; ++k) cloud.log_scale[3 * 2 + k] = std::log(0.05);  // tau_s / 2
        Rng rng(4);
        DensifyReport report;
        baseline_densify(cloud, 2, cfg, rng, report);
        CHECK(cloud.size() == 4);
        CHECK(report.created.size() == 1);
        size_t clone = *cloud.find_index(report.created[0].id);
        CHECK(norm(cloud.pos(clone) - cloud.pos(2)) == 0.0);
        CHECK(cloud.opacity_logit[clone] == cloud.opacity_logit[2]);
        CHECK(cloud.level[clone] == cloud.level[2]);
        for (int k = 0; k < 4; ++k) CHECK(cloud.rotation[4 * clone + k] == cloud.rotation[4 * 2 + k]);
    }
}

TEST_CASE("repeated baseline splits shrink the max scale by 1.6 per generation") {
    DensifyConfig cfg;
    cfg.scene_extent = 1.0;
    cfg.baseline_percent_dense = 1e-6;  // always split
    GaussianCloud cloud = make_cloud(1);
    double s0 = 0.3;
    for (int k = 0; k < 3; ++k) cloud.log_scale[k] = std::log(s0);
    Rng rng(5);
    uint32_t gid = cloud.id[0];
    for (int gen = 1; gen <= 5; ++gen) {
        DensifyReport report;
        baseline_densify(cloud, gid, cfg, rng, report);
        gid = report.created[0].id;
        size_t idx = *cloud.find_index(gid);
        double smax = std::fmax(cloud.scales(idx).x, std::fmax(cloud.scales(idx).y, cloud.scales(idx).z));
        CHECK(smax == doctest::Approx(s0 * std::pow(1.6, -gen)).epsilon(1e-10));
    }
}

TEST_CASE("baseline split children differ from the parent only in position and scale") {
    DensifyConfig cfg;
    cfg.scene_extent = 1.0;
    cfg.baseline_percent_dense = 1e-6;
    GaussianCloud cloud = make_cloud(2, 1);
    GaussianCloud before = cloud;
    Rng rng(6);
    DensifyReport report;
    baseline_densify(cloud, 0, cfg, rng, report);
    for (const auto& c : report.created) {
        size_t idx = *cloud.find_index(c.id);
        for (int k = 0; k < 4; ++k) CHECK(cloud.rotation[4 * idx + k] == before.rotation[k]);
        CHECK(cloud.opacity_logit[idx] == before.opacity_logit[0]);
        for (int k = 0; k < cloud.sh_stride(); ++k) CHECK(cloud.sh_ptr(idx)[k] == before.sh_ptr(0)[k]);
        CHECK(cloud.level[idx] == before.level[0]);
    }
}

TEST_CASE("prune removes exactly the sub-threshold opacities") {
    GaussianCloud cloud = make_cloud(8);
    std::vector<double> ops{0.5, 0.004, 0.3, 0.0049, 0.005, 0.9, 0.2, 0.001};
    for (size_t i = 0; i < 8; ++i) cloud.set_opacity(i, ops[i]);

    // brute-force filter oracle
    std::vector<uint32_t> expect_removed;
    for (size_t i = 0; i < 8; ++i)
        if (ops[i] < 0.005) expect_removed.push_back(cloud.id[i]);

    DensifyReport report;
    prune(cloud, 0.005, report);
    CHECK(report.pruned_ids == expect_removed);
    CHECK(cloud.size() == 8 - expect_removed.size());
    for (size_t i = 0; i < cloud.size(); ++i) CHECK(cloud.opacity(i) >= 0.005);

    // all above eps: no-op
    DensifyReport r2;
    prune(cloud, 0.005, r2);
    CHECK(r2.pruned_ids.empty());
    CHECK(cloud.size() == 8 - expect_removed.size());
}

TEST_CASE("opacity_reduction composes multiplicatively") {
    GaussianCloud cloud = make_cloud(5);
    cloud.set_opacity(0, 0.5);
    opacity_reduction(cloud, 0.9);
    CHECK(cloud.opacity(0) == doctest::Approx(0.45).epsilon(1e-12));

    GaussianCloud twice = make_cloud(5);
    GaussianCloud once = make_cloud(5);
    opacity_reduction(twice, 0.9);
    opacity_reduction(twice, 0.9);
    opacity_reduction(once, 0.81);
    for (size_t i = 0; i < 5; ++i) CHECK(twice.opacity(i) == doctest::Approx(once.opacity(i)).epsilon(1e-12));

    CHECK_THROWS_AS(opacity_reduction(cloud, 1.0), std::invalid_argument);
}

TEST_CASE("opacity_reduction scales blended contributions per the compositing oracle") {
    Rng rng(55);
    GaussianCloud cloud = testutil::random_cloud(rng, 15, 0);
    Camera cam = testutil::test_camera(16);
    GaussianCloud reduced = cloud;
    opacity_reduction(reduced, 0.7);
    Image before = reference::render_reference(cam, cloud, {0, 0, 0}, 0);
    Image after = reference::render_reference(cam, reduced, {0, 0, 0}, 0);
    double sum_before = 0.0, sum_after = 0.0;
    for (size_t i = 0; i < before.data.size(); ++i) {
        sum_before += before.data[i];
        sum_after += after.data[i];
    }
    CHECK(sum_after < sum_before);
    CHECK(sum_after > 0.7 * 0.7 * sum_before);  // sub-linear: alpha scales by 0.7 but occlusion decreases
}

TEST_CASE("mode switch perturbs only densification outcomes") {
    GaussianCloud base = make_cloud(12);
    DensifyConfig cfg;
    cfg.scene_extent = 1.0;
    std::vector<double> avg(base.size(), 0.0);
    avg[3] = avg[7] = 1.0;  // force selection of ids 3 and 7 only
    ViewspaceGradStats stats = stats_with_avg(base, avg);
    auto ids = select(stats, base, 0, cfg);
    CHECK(ids == std::vector<uint32_t>{3, 7});

    GaussianCloud a = base, b = base;
    Rng rng_a(9), rng_b(9);
    DensifyReport ra, rb;
    for (uint32_t gid : ids) residual_split(a, gid, cfg, rng_a, ra);
    for (uint32_t gid : ids) baseline_densify(b, gid, cfg, rng_b, rb);

    // Untouched Gaussians bit-identical to the original in both modes.
    for (size_t i = 0; i < base.size(); ++i) {
        uint32_t gid = base.id[i];
        if (gid == 3 || gid == 7) continue;
        for (GaussianCloud* c : {&a, &b}) {
            size_t idx = *c->find_index(gid);
            for (int k = 0; k < 3; ++k) {
                CHECK(c->position[3 * idx + k] == base.position[3 * i + k]);
                CHECK(c->log_scale[3 * idx + k] == base.log_scale[3 * i + k]);
            }
            for (int k = 0; k < 4; ++k) CHECK(c->rotation[4 * idx + k] == base.rotation[4 * i + k]);
            CHECK(c->opacity_logit[idx] == base.opacity_logit[i]);
            CHECK(c->level[idx] == base.level[i]);
        }
    }
}

TEST_CASE("scene extent follows the camera bounding sphere") {
    std::vector<Camera> cams;
    for (int i = 0; i < 6; ++i) cams.push_back(testutil::test_camera(16, i * M_PI / 3.0, 2.0, 0.0));
    double r = scene_extent_from_cameras(cams);
    CHECK(r == doctest::Approx(1.1 * 2.0).epsilon(1e-9));
}
