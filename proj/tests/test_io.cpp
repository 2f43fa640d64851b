#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "resgs/io.hpp"
#include "test_utils.hpp"

namespace fs = std::filesystem;
using namespace resgs;

namespace {

struct TempDir {
    fs::path path;
    TempDir(const char* name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const char* name) const { return (path / name).string(); }
};

std::vector<char> read_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("rimg image round-trip is bit-exact") {
    TempDir dir("resgs_io_rimg");
    Rng rng(1);
    Image img = testutil::random_image(rng, 13, 9, -0.2, 1.4);
    save_image(img, dir.file("a.rimg"));
    Image back = load_image(dir.file("a.rimg"));
    REQUIRE(back.same_shape(img));
    CHECK(std::memcmp(back.data.data(), img.data.data(), img.data.size() * sizeof(double)) == 0);
}

TEST_CASE("ppm round-trip stays within one quantization step") {
    TempDir dir("resgs_io_ppm");
    Rng rng(2);
    Image img = testutil::random_image(rng, 10, 10);
    save_image(img, dir.file("a.ppm"));
    Image back = load_image(dir.file("a.ppm"));
    for (size_t i = 0; i < img.data.size(); ++i) CHECK(std::fabs(back.data[i] - img.data[i]) <= 1.0 / 255.0);
}

TEST_CASE("truncated image files are rejected") {
    TempDir dir("resgs_io_trunc");
    Rng rng(3);
    Image img = testutil::random_image(rng, 8, 8);
    save_image(img, dir.file("a.rimg"));
    auto bytes = read_bytes(dir.file("a.rimg"));
    std::ofstream f(dir.file("cut.rimg"), std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    f.close();
    CHECK_THROWS_AS(load_image(dir.file("cut.rimg")), LoadError);
    CHECK_THROWS_AS(load_image(dir.file("missing.rimg")), LoadError);
}

TEST_CASE("checkpoint round-trip is bit-exact for every retained field") {
    TempDir dir("resgs_io_ckpt");
    Rng rng(4);
    GaussianCloud cloud = testutil::random_cloud(rng, 17, 2);
    cloud.level[3] = 2;
    cloud.level[5] = 1;

    for (bool final_export : {false, true}) {
        std::string path = dir.file(final_export ? "final.ply" : "mid.ply");
        save_checkpoint(cloud, path, final_export, "cafe1234");
        std::string hash;
        GaussianCloud back = load_checkpoint(path, &hash);
        CHECK(hash == "cafe1234");
        REQUIRE(back.size() == cloud.size());
        CHECK(back.sh_degree == cloud.sh_degree);
        CHECK(std::memcmp(back.position.data(), cloud.position.data(),
                          cloud.position.size() * sizeof(double)) == 0);
        CHECK(std::memcmp(back.log_scale.data(), cloud.log_scale.data(),
                          cloud.log_scale.size() * sizeof(double)) == 0);
        CHECK(std::memcmp(back.rotation.data(), cloud.rotation.data(),
                          cloud.rotation.size() * sizeof(double)) == 0);
        CHECK(std::memcmp(back.opacity_logit.data(), cloud.opacity_logit.data(),
                          cloud.opacity_logit.size() * sizeof(double)) == 0);
        CHECK(std::memcmp(back.sh.data(), cloud.sh.data(), cloud.sh.size() * sizeof(double)) == 0);
        CHECK(back.id == cloud.id);
        if (final_export) {
            for (int l : back.level) CHECK(l == 0);  // dropped at final export
        } else {
            CHECK(back.level == cloud.level);
        }
        CHECK(back.next_id == cloud.next_id);
    }

    // The final export's header must not mention a level property at all.
    auto final_bytes = read_bytes(dir.file("final.ply"));
    auto mid_bytes = read_bytes(dir.file("mid.ply"));
    auto header_of = [](const std::vector<char>& bytes) {
        std::string text(bytes.begin(), bytes.end());
        return text.substr(0, text.find("end_header"));
    };
    CHECK(header_of(final_bytes).find("level") == std::string::npos);
    CHECK(header_of(mid_bytes).find("property int level") != std::string::npos);
}

TEST_CASE("empty cloud checkpoints round-trip") {
    TempDir dir("resgs_io_empty");
    GaussianCloud cloud;
    cloud.sh_degree = 1;
    save_checkpoint(cloud, dir.file("empty.ply"), true);
    GaussianCloud back = load_checkpoint(dir.file("empty.ply"));
    CHECK(back.size() == 0);
    CHECK(back.sh_degree == 1);
}

TEST_CASE("corrupt checkpoints are rejected") {
    TempDir dir("resgs_io_bad");
    Rng rng(5);
    GaussianCloud cloud = testutil::random_cloud(rng, 4, 0);
    save_checkpoint(cloud, dir.file("ok.ply"), true);
    auto bytes = read_bytes(dir.file("ok.ply"));

    std::ofstream cut(dir.file("cut.ply"), std::ios::binary);
    cut.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 16));
    cut.close();
    CHECK_THROWS_AS(load_checkpoint(dir.file("cut.ply")), LoadError);

    std::string text(bytes.begin(), bytes.end());
    auto pos = text.find("resgs_checkpoint_version 1");
    text.replace(pos, std::string("resgs_checkpoint_version 1").size(), "resgs_checkpoint_version 9");
    std::ofstream wrong(dir.file("wrong.ply"), std::ios::binary);
    wrong.write(text.data(), static_cast<std::streamsize>(text.size()));
    wrong.close();
    CHECK_THROWS_AS(load_checkpoint(dir.file("wrong.ply")), LoadError);

    CHECK_THROWS_AS(load_checkpoint(dir.file("missing.ply")), LoadError);
}

TEST_CASE("synthetic scene round-trips through save and load with bit-equal images") {
    TempDir dir("resgs_io_synth");
    SyntheticSpec spec;
    spec.n_gaussians = 6;
    spec.n_train_views = 3;
    spec.n_test_views = 1;
    spec.resolution = 24;
    spec.seed = 9;
    SyntheticScene scene = write_synthetic(spec, dir.path.string());

    Dataset loaded = load_dataset(dir.file("manifest.json"));
    REQUIRE(loaded.images.size() == scene.dataset.images.size());
    for (size_t i = 0; i < loaded.images.size(); ++i)
        CHECK(std::memcmp(loaded.images[i].data.data(), scene.dataset.images[i].data.data(),
                          loaded.images[i].data.size() * sizeof(double)) == 0);
    CHECK(loaded.train_indices == scene.dataset.train_indices);
    CHECK(loaded.test_indices == scene.dataset.test_indices);
    REQUIRE(loaded.init_positions.size() == scene.dataset.init_positions.size());

    // Ground-truth checkpoint re-renders the dataset exactly.
    GaussianCloud gt = load_checkpoint(dir.file("ground_truth.ply"));
    auto [p, s] = evaluate(gt, loaded, loaded.train_indices, Vec3{}, RenderSettings{}, LossConfig{});
    CHECK(std::isinf(p));
}

TEST_CASE("synthetic generation is deterministic in the seed") {
    SyntheticSpec spec;
    spec.n_gaussians = 5;
    spec.n_train_views = 2;
    spec.n_test_views = 0;
    spec.resolution = 16;
    spec.seed = 31;
    SyntheticScene a = make_synthetic(spec);
    SyntheticScene b = make_synthetic(spec);
    CHECK(std::memcmp(a.ground_truth.position.data(), b.ground_truth.position.data(),
                      a.ground_truth.position.size() * sizeof(double)) == 0);
    for (size_t v = 0; v < a.dataset.images.size(); ++v)
        CHECK(std::memcmp(a.dataset.images[v].data.data(), b.dataset.images[v].data.data(),
                          a.dataset.images[v].data.size() * sizeof(double)) == 0);
}

TEST_CASE("every ground-truth Gaussian center projects inside at least one view") {
    SyntheticSpec spec;
    spec.n_gaussians = 40;
    spec.n_train_views = 6;
    spec.n_test_views = 2;
    spec.resolution = 32;
    spec.seed = 12;
    SyntheticScene scene = make_synthetic(spec);
    for (size_t g = 0; g < scene.ground_truth.size(); ++g) {
        bool visible = false;
        for (const Camera& cam : scene.dataset.cameras) {
            Vec3 pc = cam.to_camera(scene.ground_truth.pos(g));
            if (pc.z <= cam.near_clip) continue;
            double u = cam.fx * pc.x / pc.z + cam.cx;
            double v = cam.fy * pc.y / pc.z + cam.cy;
            if (u >= 0 && u < cam.width && v >= 0 && v < cam.height) visible = true;
        }
        CHECK(visible);
    }
}

TEST_CASE("manifest validation rejects overlapping splits and bad cameras") {
    TempDir dir("resgs_io_manifest");
    SyntheticSpec spec;
    spec.n_gaussians = 3;
    spec.n_train_views = 2;
    spec.n_test_views = 1;
    spec.resolution = 16;
    write_synthetic(spec, dir.path.string());

    std::ifstream f(dir.file("manifest.json"));
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    f.close();

    // overlapping split
    std::string overlapping = text;
    auto pos = overlapping.find("\"test\": [");
    overlapping.replace(pos, std::string("\"test\": [").size(), "\"test\": [0, ");
    std::ofstream(dir.file("manifest.json")) << overlapping;
    CHECK_THROWS_AS(load_dataset(dir.file("manifest.json")), LoadError);

    // missing image path
    std::string missing = text;
    pos = missing.find("view_000");
    missing.replace(pos, 8, "view_zzz");
    std::ofstream(dir.file("manifest.json")) << missing;
    CHECK_THROWS_AS(load_dataset(dir.file("manifest.json")), LoadError);

    // malformed camera (broken rotation)
    std::string bad_cam = text;
    pos = bad_cam.find("\"rotation\": [");
    bad_cam.replace(pos + 14, 1, "9");
    std::ofstream(dir.file("manifest.json")) << bad_cam;
    CHECK_THROWS_AS(load_dataset(dir.file("manifest.json")), LoadError);
}

TEST_CASE("minimal one-view manifest loads") {
    TempDir dir("resgs_io_minimal");
    SyntheticSpec spec;
    spec.n_gaussians = 2;
    spec.n_train_views = 1;
    spec.n_test_views = 0;
    spec.resolution = 12;
    write_synthetic(spec, dir.path.string());
    Dataset ds = load_dataset(dir.file("manifest.json"));
    CHECK(ds.cameras.size() == 1);
    CHECK(ds.train_indices.size() == 1);
}

TEST_CASE("train config survives a json round-trip and rejects unknown keys") {
    TrainConfig cfg;
    cfg.total_iterations = 1234;
    cfg.seed = 99;
    cfg.densify.mode = DensifyMode::BaselineSplitClone;
    cfg.densify.tau = 0.00067;
    cfg.loss.lambda_dssim = 0.35;
    cfg.render.cutoff_sigma = 2.5;
    cfg.stage_boundaries = {100, 400, 1234};

    TrainConfig back = train_config_from_json(train_config_to_json(cfg));
    CHECK(back.total_iterations == 1234);
    CHECK(back.seed == 99);
    CHECK(back.densify.mode == DensifyMode::BaselineSplitClone);
    CHECK(back.densify.tau == cfg.densify.tau);
    CHECK(back.loss.lambda_dssim == cfg.loss.lambda_dssim);
    CHECK(back.render.cutoff_sigma == cfg.render.cutoff_sigma);
    CHECK(back.stage_boundaries == cfg.stage_boundaries);
    CHECK(config_hash(back) == config_hash(cfg));

    CHECK_THROWS_AS(train_config_from_json("{\"totle_iterations\": 5}"), LoadError);
    CHECK_THROWS_AS(train_config_from_json("{\"densify\": {\"tua\": 1}}"), LoadError);
    CHECK_THROWS_AS(train_config_from_json("not json"), LoadError);
}

TEST_CASE("metrics csv has the declared header and one row per eval point") {
    TempDir dir("resgs_io_csv");
    RunLog log;
    for (int i = 1; i <= 3; ++i) {
        RunLogRow row;
        row.iteration = 100 * i;
        row.train_loss = 0.5 / i;
        row.psnr = 20.0 + i;
        row.ssim = 0.8;
        row.count = 10 * i;
        row.stage = 1;
        row.substage = 0;
        row.max_level = 0;
        log.rows.push_back(row);
    }
    write_metrics_csv(log, dir.file("metrics.csv"));
    std::ifstream f(dir.file("metrics.csv"));
    std::string line;
    std::getline(f, line);
    CHECK(line == "iteration,loss,psnr,ssim,count,stage,substage,max_level");
    int rows = 0;
    while (std::getline(f, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 3);

    write_compare_csv("residual-split", log, "baseline-split-clone", log, dir.file("compare.csv"));
    std::ifstream c(dir.file("compare.csv"));
    std::getline(c, line);
    CHECK(line == "mode,iteration,psnr,ssim,count");
    rows = 0;
    while (std::getline(c, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 6);  // one row per eval point per mode
}
