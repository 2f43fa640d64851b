#include "resgs/io.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace resgs {

namespace {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_exact(std::ofstream& f, const void* data, size_t bytes) {
    f.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
}

std::string lower_ext(const std::string& path) {
    std::string ext = fs::path(path).extension().string();
    for (char& c : ext) c = static_cast<char>(std::tolower(c));
    return ext;
}

}  // namespace

// ---------------------------------------------------------------------------
// Images
// ---------------------------------------------------------------------------

namespace {

void save_rimg(const Image& img, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw LoadError("cannot open for write: " + path);
    const char magic[4] = {'R', 'I', 'M', 'G'};
    uint32_t header[4] = {1u, static_cast<uint32_t>(img.height), static_cast<uint32_t>(img.width), 3u};
    write_exact(f, magic, 4);
    write_exact(f, header, sizeof(header));
    write_exact(f, img.data.data(), img.data.size() * sizeof(double));
    if (!f) throw LoadError("write failed: " + path);
}

Image load_rimg(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw LoadError("cannot open image: " + path);
    char magic[4];
    uint32_t header[4];
    f.read(magic, 4);
    f.read(reinterpret_cast<char*>(header), sizeof(header));
    if (!f || std::memcmp(magic, "RIMG", 4) != 0) throw LoadError("not a RIMG file: " + path);
    if (header[0] != 1) throw LoadError("unsupported RIMG version in " + path);
    if (header[3] != 3) throw LoadError("RIMG must have 3 channels: " + path);
    Image img(static_cast<int>(header[1]), static_cast<int>(header[2]));
    f.read(reinterpret_cast<char*>(img.data.data()),
           static_cast<std::streamsize>(img.data.size() * sizeof(double)));
    if (!f) throw LoadError("truncated RIMG file: " + path);
    return img;
}

void save_ppm(const Image& img, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw LoadError("cannot open for write: " + path);
    f << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(img.width) * 3);
    for (int r = 0; r < img.height; ++r) {
        for (int c = 0; c < img.width; ++c)
            for (int ch = 0; ch < 3; ++ch) {
                double v = std::clamp(img.at(r, c, ch), 0.0, 1.0);
                row[3 * c + ch] = static_cast<uint8_t>(std::lround(v * 255.0));
            }
        write_exact(f, row.data(), row.size());
    }
    if (!f) throw LoadError("write failed: " + path);
}

Image load_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw LoadError("cannot open image: " + path);
    std::string magic;
    int w, h, maxval;
    f >> magic >> w >> h >> maxval;
    if (!f || magic != "P6" || maxval != 255) throw LoadError("unsupported PPM file: " + path);
    f.get();  // single whitespace after maxval
    Image img(h, w);
    std::vector<uint8_t> raw(static_cast<size_t>(w) * h * 3);
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!f) throw LoadError("truncated PPM file: " + path);
    for (size_t i = 0; i < raw.size(); ++i) img.data[i] = raw[i] / 255.0;
    return img;
}

}  // namespace

void save_image(const Image& img, const std::string& path) {
    std::string ext = lower_ext(path);
    if (ext == ".rimg")
        save_rimg(img, path);
    else if (ext == ".ppm")
        save_ppm(img, path);
    else
        throw LoadError("unsupported image format: " + path);
}

Image load_image(const std::string& path) {
    std::string ext = lower_ext(path);
    if (ext == ".rimg") return load_rimg(path);
    if (ext == ".ppm") return load_ppm(path);
    throw LoadError("unsupported image format: " + path);
}

// ---------------------------------------------------------------------------
// Dataset manifest
// ---------------------------------------------------------------------------

namespace {

json camera_to_json(const Camera& c) {
    json j;
    j["fx"] = c.fx;
    j["fy"] = c.fy;
    j["cx"] = c.cx;
    j["cy"] = c.cy;
    j["width"] = c.width;
    j["height"] = c.height;
    j["near_clip"] = c.near_clip;
    j["rotation"] = {c.world_to_camera[0][0], c.world_to_camera[0][1], c.world_to_camera[0][2],
                     c.world_to_camera[1][0], c.world_to_camera[1][1], c.world_to_camera[1][2],
                     c.world_to_camera[2][0], c.world_to_camera[2][1], c.world_to_camera[2][2]};
    j["translation"] = {c.translation.x, c.translation.y, c.translation.z};
    return j;
}

Camera camera_from_json(const json& j) {
    Camera c;
    c.fx = j.at("fx").get<double>();
    c.fy = j.at("fy").get<double>();
    c.cx = j.at("cx").get<double>();
    c.cy = j.at("cy").get<double>();
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
    c.near_clip = j.at("near_clip").get<double>();
    auto rot = j.at("rotation");
    if (rot.size() != 9) throw LoadError("camera rotation must have 9 entries");
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k) c.world_to_camera[i][k] = rot[3 * i + k].get<double>();
    auto t = j.at("translation");
    if (t.size() != 3) throw LoadError("camera translation must have 3 entries");
    c.translation = {t[0].get<double>(), t[1].get<double>(), t[2].get<double>()};
    return c;
}

}  // namespace

Dataset load_dataset(const std::string& manifest_path) {
    std::ifstream f(manifest_path);
    if (!f) throw LoadError("cannot open manifest: " + manifest_path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw LoadError("manifest parse error in " + manifest_path + ": " + e.what());
    }
    fs::path base = fs::path(manifest_path).parent_path();

    Dataset ds;
    try {
        for (const auto& vj : j.at("views")) {
            Camera cam = camera_from_json(vj.at("camera"));
            try {
                cam.validate();
            } catch (const std::exception& e) {
                throw LoadError("manifest " + manifest_path + ": malformed camera for view " +
                                std::to_string(ds.cameras.size()) + ": " + e.what());
            }
            std::string img_path = (base / vj.at("image").get<std::string>()).string();
            if (!fs::exists(img_path)) throw LoadError("missing image file: " + img_path);
            Image img = load_image(img_path);
            if (img.width != cam.width || img.height != cam.height)
                throw LoadError("image " + img_path + " size " + std::to_string(img.width) + "x" +
                                std::to_string(img.height) + " does not match camera " +
                                std::to_string(cam.width) + "x" + std::to_string(cam.height));
            ds.cameras.push_back(cam);
            ds.images.push_back(std::move(img));
        }
        for (const auto& t : j.at("train")) ds.train_indices.push_back(t.get<int>());
        for (const auto& t : j.at("test")) ds.test_indices.push_back(t.get<int>());
        if (j.contains("points")) {
            for (const auto& pj : j.at("points")) {
                auto p = pj.at("position");
                auto c = pj.at("rgb");
                ds.init_positions.push_back({p[0].get<double>(), p[1].get<double>(), p[2].get<double>()});
                ds.init_colors.push_back({c[0].get<double>(), c[1].get<double>(), c[2].get<double>()});
            }
        }
    } catch (const json::exception& e) {
        throw LoadError("manifest " + manifest_path + ": " + e.what());
    }

    int n = static_cast<int>(ds.cameras.size());
    std::vector<uint8_t> in_train(n, 0);
    for (int t : ds.train_indices) {
        if (t < 0 || t >= n) throw LoadError("manifest: train index out of range");
        in_train[t] = 1;
    }
    for (int t : ds.test_indices) {
        if (t < 0 || t >= n) throw LoadError("manifest: test index out of range");
        if (in_train[t]) throw LoadError("manifest: view " + std::to_string(t) + " is in both splits");
    }
    return ds;
}

void save_dataset(const Dataset& dataset, const std::string& out_dir, const std::string& image_format) {
    fs::create_directories(fs::path(out_dir) / "images");
    json j;
    j["views"] = json::array();
    for (size_t i = 0; i < dataset.cameras.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "images/view_%03zu.%s", i, image_format.c_str());
        save_image(dataset.images[i], (fs::path(out_dir) / name).string());
        json vj;
        vj["image"] = name;
        vj["camera"] = camera_to_json(dataset.cameras[i]);
        j["views"].push_back(vj);
    }
    j["train"] = dataset.train_indices;
    j["test"] = dataset.test_indices;
    j["points"] = json::array();
    for (size_t i = 0; i < dataset.init_positions.size(); ++i) {
        json pj;
        pj["position"] = {dataset.init_positions[i].x, dataset.init_positions[i].y,
                          dataset.init_positions[i].z};
        pj["rgb"] = {dataset.init_colors[i].x, dataset.init_colors[i].y, dataset.init_colors[i].z};
        j["points"].push_back(pj);
    }
    std::ofstream f(fs::path(out_dir) / "manifest.json");
    if (!f) throw LoadError("cannot write manifest in " + out_dir);
    f << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// PLY checkpoints
// ---------------------------------------------------------------------------

void save_checkpoint(const GaussianCloud& cloud, const std::string& path, bool final_export,
                     const std::string& config_hash) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw LoadError("cannot open checkpoint for write: " + path);

    const int n_coeffs = sh_coeff_count(cloud.sh_degree);
    const int n_rest = (n_coeffs - 1) * 3;
    f << "ply\nformat binary_little_endian 1.0\n";
    f << "comment resgs_checkpoint_version 1\n";
    f << "comment config_hash " << config_hash << "\n";
    f << "element vertex " << cloud.size() << "\n";
    for (const char* p : {"x", "y", "z"}) f << "property double " << p << "\n";
    for (int i = 0; i < 3; ++i) f << "property double f_dc_" << i << "\n";
    for (int i = 0; i < n_rest; ++i) f << "property double f_rest_" << i << "\n";
    f << "property double opacity\n";
    for (int i = 0; i < 3; ++i) f << "property double scale_" << i << "\n";
    for (int i = 0; i < 4; ++i) f << "property double rot_" << i << "\n";
    f << "property uint id\n";
    if (!final_export) f << "property int level\n";
    f << "end_header\n";

    for (size_t i = 0; i < cloud.size(); ++i) {
        std::vector<double> row;
        row.reserve(14 + n_rest);
        for (int k = 0; k < 3; ++k) row.push_back(cloud.position[3 * i + k]);
        const double* sh = cloud.sh_ptr(i);
        for (int ch = 0; ch < 3; ++ch) row.push_back(sh[ch]);  // f_dc: coefficient 0
        // f_rest: channel-major blocks of the remaining coefficients
        for (int ch = 0; ch < 3; ++ch)
            for (int k = 1; k < n_coeffs; ++k) row.push_back(sh[3 * k + ch]);
        row.push_back(cloud.opacity_logit[i]);
        for (int k = 0; k < 3; ++k) row.push_back(cloud.log_scale[3 * i + k]);
        for (int k = 0; k < 4; ++k) row.push_back(cloud.rotation[4 * i + k]);
        write_exact(f, row.data(), row.size() * sizeof(double));
        uint32_t gid = cloud.id[i];
        write_exact(f, &gid, sizeof(gid));
        if (!final_export) {
            int32_t lvl = cloud.level[i];
            write_exact(f, &lvl, sizeof(lvl));
        }
    }
    if (!f) throw LoadError("checkpoint write failed: " + path);
}

GaussianCloud load_checkpoint(const std::string& path, std::string* config_hash_out) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw LoadError("cannot open checkpoint: " + path);

    std::string line;
    if (!std::getline(f, line) || line != "ply") throw LoadError("not a PLY file: " + path);
    if (!std::getline(f, line) || line != "format binary_little_endian 1.0")
        throw LoadError("unsupported PLY format in " + path);

    size_t vertex_count = 0;
    struct Prop {
        std::string type, name;
    };
    std::vector<Prop> props;
    bool version_seen = false;
    while (std::getline(f, line)) {
        if (line == "end_header") break;
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "comment") {
            std::string key, value;
            ls >> key >> value;
            if (key == "resgs_checkpoint_version") {
                if (value != "1") throw LoadError("checkpoint version mismatch in " + path + ": " + value);
                version_seen = true;
            } else if (key == "config_hash" && config_hash_out) {
                *config_hash_out = value;
            }
        } else if (word == "element") {
            std::string name;
            ls >> name >> vertex_count;
            if (name != "vertex") throw LoadError("unexpected PLY element in " + path + ": " + name);
        } else if (word == "property") {
            Prop p;
            ls >> p.type >> p.name;
            props.push_back(p);
        }
    }
    if (!f) throw LoadError("truncated PLY header: " + path);
    if (!version_seen) throw LoadError("missing checkpoint version comment in " + path);

    int n_rest = 0;
    bool has_level = false, has_id = false;
    for (const Prop& p : props) {
        if (p.name.rfind("f_rest_", 0) == 0) ++n_rest;
        if (p.name == "level") has_level = true;
        if (p.name == "id") has_id = true;
    }
    if (n_rest % 3 != 0) throw LoadError("bad f_rest count in " + path);
    int n_coeffs = n_rest / 3 + 1;
    int degree = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n_coeffs)))) - 1;
    if (sh_coeff_count(degree) != n_coeffs) throw LoadError("f_rest count is not a valid SH layout in " + path);

    // Expected layout check (names and order).
    std::vector<std::string> expected = {"x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"};
    for (int i = 0; i < n_rest; ++i) expected.push_back("f_rest_" + std::to_string(i));
    expected.push_back("opacity");
    for (int i = 0; i < 3; ++i) expected.push_back("scale_" + std::to_string(i));
    for (int i = 0; i < 4; ++i) expected.push_back("rot_" + std::to_string(i));
    if (has_id) expected.push_back("id");
    if (has_level) expected.push_back("level");
    if (props.size() != expected.size()) throw LoadError("unexpected property set in " + path);
    for (size_t i = 0; i < props.size(); ++i) {
        if (props[i].name != expected[i]) throw LoadError("unexpected property order in " + path);
        const std::string& want_type =
            props[i].name == "id" ? "uint" : (props[i].name == "level" ? "int" : "double");
        if (props[i].type != want_type)
            throw LoadError("property " + props[i].name + " has type " + props[i].type + ", expected " +
                            want_type + " in " + path);
    }

    GaussianCloud cloud;
    cloud.sh_degree = degree;
    cloud.position.resize(3 * vertex_count);
    cloud.log_scale.resize(3 * vertex_count);
    cloud.rotation.resize(4 * vertex_count);
    cloud.opacity_logit.resize(vertex_count);
    cloud.sh.resize(vertex_count * cloud.sh_stride());
    cloud.level.assign(vertex_count, 0);
    cloud.id.resize(vertex_count);

    const size_t n_doubles = 3 + 3 + n_rest + 1 + 3 + 4;
    std::vector<double> row(n_doubles);
    uint32_t max_id = 0;
    for (size_t i = 0; i < vertex_count; ++i) {
        f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(n_doubles * sizeof(double)));
        if (!f) throw LoadError("truncated checkpoint data: " + path);
        size_t k = 0;
        for (int c = 0; c < 3; ++c) cloud.position[3 * i + c] = row[k++];
        double* sh = cloud.sh_ptr(i);
        for (int ch = 0; ch < 3; ++ch) sh[ch] = row[k++];
        for (int ch = 0; ch < 3; ++ch)
            for (int c = 1; c < n_coeffs; ++c) sh[3 * c + ch] = row[k++];
        cloud.opacity_logit[i] = row[k++];
        for (int c = 0; c < 3; ++c) cloud.log_scale[3 * i + c] = row[k++];
        for (int c = 0; c < 4; ++c) cloud.rotation[4 * i + c] = row[k++];
        if (has_id) {
            uint32_t gid;
            f.read(reinterpret_cast<char*>(&gid), sizeof(gid));
            cloud.id[i] = gid;
        } else {
            cloud.id[i] = static_cast<uint32_t>(i);
        }
        if (has_level) {
            int32_t lvl;
            f.read(reinterpret_cast<char*>(&lvl), sizeof(lvl));
            cloud.level[i] = lvl;
        }
        if (!f) throw LoadError("truncated checkpoint data: " + path);
        max_id = std::max(max_id, cloud.id[i]);
    }
    cloud.next_id = vertex_count == 0 ? 0 : max_id + 1;
    return cloud;
}

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

namespace {

Camera ring_camera(int view, int total_views, int resolution, double ring_radius) {
    double theta = 2.0 * M_PI * view / total_views;
    double height = 0.65 * std::sin(2.399963229728653 * view + 0.7);  // deterministic variety
    Vec3 eye{ring_radius * std::cos(theta), height, ring_radius * std::sin(theta)};
    Vec3 forward = normalized(Vec3{} - eye);
    Vec3 up_hint{0.0, 1.0, 0.0};
    Vec3 x_axis = normalized(cross(forward, up_hint));
    Vec3 y_axis = cross(forward, x_axis);  // proper rotation: x cross y == forward

    Camera cam;
    cam.width = cam.height = resolution;
    double fov = 60.0 * M_PI / 180.0;
    cam.fx = cam.fy = 0.5 * resolution / std::tan(0.5 * fov);
    cam.cx = cam.cy = 0.5 * resolution;
    cam.near_clip = 0.1;
    cam.world_to_camera[0] = {x_axis.x, x_axis.y, x_axis.z};
    cam.world_to_camera[1] = {y_axis.x, y_axis.y, y_axis.z};
    cam.world_to_camera[2] = {forward.x, forward.y, forward.z};
    Vec3 wt = cam.world_to_camera * eye;
    cam.translation = {-wt.x, -wt.y, -wt.z};
    return cam;
}

}  // namespace

SyntheticScene make_synthetic(const SyntheticSpec& spec, const RenderSettings& settings) {
    if (spec.n_gaussians < 1 || spec.n_train_views < 1 || spec.resolution < 8)
        throw std::invalid_argument("make_synthetic: spec out of range");
    Rng rng(spec.seed);

    GaussianCloud gt;
    gt.sh_degree = spec.sh_degree;
    const int n_coeffs = sh_coeff_count(spec.sh_degree);
    for (int i = 0; i < spec.n_gaussians; ++i) {
        Vec3 p{rng.uniform(-0.45, 0.45), rng.uniform(-0.45, 0.45), rng.uniform(-0.45, 0.45)};
        Vec3 ls{std::log(rng.uniform(0.03, 0.12)), std::log(rng.uniform(0.03, 0.12)),
                std::log(rng.uniform(0.03, 0.12))};
        Quat q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
        q = q.normalized();
        double op = rng.uniform(0.55, 0.9);
        std::vector<double> sh(n_coeffs * 3, 0.0);
        for (int ch = 0; ch < 3; ++ch) sh[ch] = (rng.uniform(0.15, 0.85) - 0.5) / kSH0;
        for (int k = 1; k < n_coeffs; ++k)
            for (int ch = 0; ch < 3; ++ch) sh[3 * k + ch] = rng.uniform(-0.08, 0.08);
        gt.append(p, ls, q, logit(op), sh, 0);
    }

    SyntheticScene scene;
    scene.dataset.cameras.reserve(spec.n_train_views + spec.n_test_views);
    const int total_views = spec.n_train_views + spec.n_test_views;
    for (int v = 0; v < total_views; ++v) {
        Camera cam = ring_camera(v, total_views, spec.resolution, 2.6);
        RenderOutput out = render(cam, gt, Vec3{}, spec.sh_degree, settings);
        scene.dataset.cameras.push_back(cam);
        scene.dataset.images.push_back(std::move(out.image));
        if (v < spec.n_train_views)
            scene.dataset.train_indices.push_back(v);
        else
            scene.dataset.test_indices.push_back(v);
    }

    const int n_points = spec.init_point_count > 0 ? spec.init_point_count : spec.n_gaussians;
    if (spec.init_mode == InitMode::GroundTruthPerturbed) {
        for (int i = 0; i < n_points; ++i) {
            size_t src = static_cast<size_t>(i) % gt.size();
            Vec3 p = gt.pos(src) + Vec3{rng.normal(), rng.normal(), rng.normal()} * spec.position_noise;
            const double* sh = gt.sh_ptr(src);
            Vec3 rgb{std::clamp(sh[0] * kSH0 + 0.5 + 0.02 * rng.normal(), 0.0, 1.0),
                     std::clamp(sh[1] * kSH0 + 0.5 + 0.02 * rng.normal(), 0.0, 1.0),
                     std::clamp(sh[2] * kSH0 + 0.5 + 0.02 * rng.normal(), 0.0, 1.0)};
            scene.dataset.init_positions.push_back(p);
            scene.dataset.init_colors.push_back(rgb);
        }
    } else {
        for (int i = 0; i < n_points; ++i) {
            scene.dataset.init_positions.push_back(
                {rng.uniform(-0.45, 0.45), rng.uniform(-0.45, 0.45), rng.uniform(-0.45, 0.45)});
            scene.dataset.init_colors.push_back(
                {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)});
        }
    }
    scene.ground_truth = std::move(gt);
    return scene;
}

SyntheticScene write_synthetic(const SyntheticSpec& spec, const std::string& out_dir,
                               const RenderSettings& settings) {
    SyntheticScene scene = make_synthetic(spec, settings);
    fs::create_directories(out_dir);
    save_dataset(scene.dataset, out_dir);
    save_checkpoint(scene.ground_truth, (fs::path(out_dir) / "ground_truth.ply").string(), true);
    return scene;
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed)
            if (it.key() == a) {
                ok = true;
                break;
            }
        if (!ok) throw LoadError(std::string("config: unknown key '") + it.key() + "' in " + where);
    }
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

std::string train_config_to_json(const TrainConfig& cfg) {
    json j;
    j["total_iterations"] = cfg.total_iterations;
    j["seed"] = cfg.seed;
    j["sh_degree"] = cfg.sh_degree;
    j["background"] = {cfg.background.x, cfg.background.y, cfg.background.z};
    j["eval_interval"] = cfg.eval_interval;
    j["checkpoint_interval"] = cfg.checkpoint_interval;
    j["substages_per_stage"] = cfg.substages_per_stage;
    j["stage_fractions"] = cfg.stage_fractions;
    if (!cfg.stage_boundaries.empty()) j["stage_boundaries"] = cfg.stage_boundaries;
    j["optimizer"] = {{"lr_position_init", cfg.optimizer.lr_position_init},
                      {"lr_position_final", cfg.optimizer.lr_position_final},
                      {"lr_sh", cfg.optimizer.lr_sh},
                      {"lr_opacity", cfg.optimizer.lr_opacity},
                      {"lr_scale", cfg.optimizer.lr_scale},
                      {"lr_rotation", cfg.optimizer.lr_rotation},
                      {"beta1", cfg.optimizer.beta1},
                      {"beta2", cfg.optimizer.beta2},
                      {"eps", cfg.optimizer.eps}};
    j["loss"] = {{"lambda_dssim", cfg.loss.lambda_dssim},
                 {"ssim_window", cfg.loss.ssim_window},
                 {"ssim_sigma", cfg.loss.ssim_sigma}};
    j["densify"] = {{"tau", cfg.densify.tau},
                    {"alpha", cfg.densify.alpha},
                    {"lambda_s", cfg.densify.lambda_s},
                    {"beta", cfg.densify.beta},
                    {"mode", to_string(cfg.densify.mode)},
                    {"grad_source", to_string(cfg.densify.grad_source)},
                    {"baseline_percent_dense", cfg.densify.baseline_percent_dense},
                    {"scene_extent", cfg.densify.scene_extent},
                    {"prune_opacity_eps", cfg.densify.prune_opacity_eps},
                    {"opacity_reduction_factor", cfg.densify.opacity_reduction_factor},
                    {"opacity_reduction_interval", cfg.densify.opacity_reduction_interval},
                    {"densify_interval", cfg.densify.densify_interval},
                    {"densify_start_iteration", cfg.densify.densify_start_iteration},
                    {"densify_stop_iteration", cfg.densify.densify_stop_iteration}};
    j["render"] = {{"dilation", cfg.render.dilation},
                   {"alpha_clamp", cfg.render.alpha_clamp},
                   {"transmittance_min", cfg.render.transmittance_min},
                   {"cutoff_sigma", cfg.render.cutoff_sigma},
                   {"use_tile_grid", cfg.render.use_tile_grid},
                   {"tile_size", cfg.render.tile_size}};
    return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw LoadError(std::string("config parse error: ") + e.what());
    }
    check_keys(j,
               {"total_iterations", "seed", "sh_degree", "background", "eval_interval",
                "checkpoint_interval", "substages_per_stage", "stage_fractions", "stage_boundaries",
                "optimizer", "loss", "densify", "render"},
               "top level");
    TrainConfig cfg;
    try {
        get_if(j, "total_iterations", cfg.total_iterations);
        get_if(j, "seed", cfg.seed);
        get_if(j, "sh_degree", cfg.sh_degree);
        if (j.contains("background")) {
            auto b = j.at("background");
            if (b.size() != 3) throw LoadError("config: background must have 3 entries");
            cfg.background = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>()};
        }
        get_if(j, "eval_interval", cfg.eval_interval);
        get_if(j, "checkpoint_interval", cfg.checkpoint_interval);
        get_if(j, "substages_per_stage", cfg.substages_per_stage);
        get_if(j, "stage_fractions", cfg.stage_fractions);
        get_if(j, "stage_boundaries", cfg.stage_boundaries);
        if (j.contains("optimizer")) {
            const json& o = j.at("optimizer");
            check_keys(o,
                       {"lr_position_init", "lr_position_final", "lr_sh", "lr_opacity", "lr_scale",
                        "lr_rotation", "beta1", "beta2", "eps"},
                       "optimizer");
            get_if(o, "lr_position_init", cfg.optimizer.lr_position_init);
            get_if(o, "lr_position_final", cfg.optimizer.lr_position_final);
            get_if(o, "lr_sh", cfg.optimizer.lr_sh);
            get_if(o, "lr_opacity", cfg.optimizer.lr_opacity);
            get_if(o, "lr_scale", cfg.optimizer.lr_scale);
            get_if(o, "lr_rotation", cfg.optimizer.lr_rotation);
            get_if(o, "beta1", cfg.optimizer.beta1);
            get_if(o, "beta2", cfg.optimizer.beta2);
            get_if(o, "eps", cfg.optimizer.eps);
        }
        if (j.contains("loss")) {
            const json& o = j.at("loss");
            check_keys(o, {"lambda_dssim", "ssim_window", "ssim_sigma"}, "loss");
            get_if(o, "lambda_dssim", cfg.loss.lambda_dssim);
            get_if(o, "ssim_window", cfg.loss.ssim_window);
            get_if(o, "ssim_sigma", cfg.loss.ssim_sigma);
        }
        if (j.contains("densify")) {
            const json& o = j.at("densify");
            check_keys(o,
                       {"tau", "alpha", "lambda_s", "beta", "mode", "grad_source",
                        "baseline_percent_dense", "scene_extent", "prune_opacity_eps",
                        "opacity_reduction_factor", "opacity_reduction_interval", "densify_interval",
                        "densify_start_iteration", "densify_stop_iteration"},
                       "densify");
            get_if(o, "tau", cfg.densify.tau);
            get_if(o, "alpha", cfg.densify.alpha);
            get_if(o, "lambda_s", cfg.densify.lambda_s);
            get_if(o, "beta", cfg.densify.beta);
            if (o.contains("mode")) cfg.densify.mode = densify_mode_from_string(o.at("mode").get<std::string>());
            if (o.contains("grad_source"))
                cfg.densify.grad_source = grad_source_from_string(o.at("grad_source").get<std::string>());
            get_if(o, "baseline_percent_dense", cfg.densify.baseline_percent_dense);
            get_if(o, "scene_extent", cfg.densify.scene_extent);
            get_if(o, "prune_opacity_eps", cfg.densify.prune_opacity_eps);
            get_if(o, "opacity_reduction_factor", cfg.densify.opacity_reduction_factor);
            get_if(o, "opacity_reduction_interval", cfg.densify.opacity_reduction_interval);
            get_if(o, "densify_interval", cfg.densify.densify_interval);
            get_if(o, "densify_start_iteration", cfg.densify.densify_start_iteration);
            get_if(o, "densify_stop_iteration", cfg.densify.densify_stop_iteration);
        }
        if (j.contains("render")) {
            const json& o = j.at("render");
            check_keys(o, {"dilation", "alpha_clamp", "transmittance_min", "cutoff_sigma", "use_tile_grid",
                           "tile_size"},
                       "render");
            get_if(o, "dilation", cfg.render.dilation);
            get_if(o, "alpha_clamp", cfg.render.alpha_clamp);
            get_if(o, "transmittance_min", cfg.render.transmittance_min);
            get_if(o, "cutoff_sigma", cfg.render.cutoff_sigma);
            get_if(o, "use_tile_grid", cfg.render.use_tile_grid);
            get_if(o, "tile_size", cfg.render.tile_size);
        }
    } catch (const json::exception& e) {
        throw LoadError(std::string("config: ") + e.what());
    }
    return cfg;
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw LoadError("cannot open config: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return train_config_from_json(ss.str());
}

std::string config_hash(const TrainConfig& cfg) {
    std::string text = train_config_to_json(cfg);
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016" PRIx64, h);
    return buf;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

void write_metrics_csv(const RunLog& log, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw LoadError("cannot write metrics csv: " + path);
    f << "iteration,loss,psnr,ssim,count,stage,substage,max_level\n";
    for (const RunLogRow& r : log.rows)
        f << r.iteration << "," << format_double(r.train_loss) << "," << format_double(r.psnr) << ","
          << format_double(r.ssim) << "," << r.count << "," << r.stage << "," << r.substage << ","
          << r.max_level << "\n";
}

void write_densify_events_csv(const RunLog& log, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw LoadError("cannot write events csv: " + path);
    f << "iteration,kind,selected,created,pruned,count_before,count_after\n";
    for (const DensifyEvent& e : log.events)
        f << e.iteration << "," << e.kind << "," << e.report.selected_ids.size() << ","
          << e.report.created.size() << "," << e.report.pruned_ids.size() << "," << e.report.count_before
          << "," << e.report.count_after << "\n";
}

void write_compare_csv(const std::string& mode_a, const RunLog& log_a, const std::string& mode_b,
                       const RunLog& log_b, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw LoadError("cannot write compare csv: " + path);
    f << "mode,iteration,psnr,ssim,count\n";
    auto dump = [&f](const std::string& mode, const RunLog& log) {
        for (const RunLogRow& r : log.rows)
            f << mode << "," << r.iteration << "," << format_double(r.psnr) << "," << format_double(r.ssim)
              << "," << r.count << "\n";
    };
    dump(mode_a, log_a);
    dump(mode_b, log_b);
}

}  // namespace resgs
