// SPDX-License-Identifier: Apache-2.0

#include "neusg/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "json.hpp"
#include "neusg/error.hpp"
#include "neusg/io.hpp"
#include "neusg/mesh.hpp"
#include "neusg/parallel.hpp"
#include "neusg/rng.hpp"

namespace neusg {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

std::vector<const View*> Scene::train_views() const {
    std::vector<const View*> out;
    for (int i : train) out.push_back(&views[static_cast<std::size_t>(i)]);
    return out;
}

void assign_split(Scene& scene, std::uint64_t seed, double test_fraction) {
    if (test_fraction < 0.0 || test_fraction >= 1.0) throw ContractViolation("test fraction must be in [0, 1)");
    const std::size_t n = scene.views.size();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng = Rng::stream(seed, "split");
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    const auto n_test = static_cast<std::size_t>(std::floor(test_fraction * static_cast<double>(n)));
    scene.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
    scene.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
    std::sort(scene.test.begin(), scene.test.end());
    std::sort(scene.train.begin(), scene.train.end());
    scene.split_seed = seed;
    scene.test_fraction = test_fraction;
}

// ---- manifest -------------------------------------------------------------------

namespace {

const json& field(const json& j, const char* key, const std::string& path) {
    if (!j.is_object() || !j.contains(key)) throw LoadError(path + "." + key + ": missing");
    return j.at(key);
}

double number(const json& j, const std::string& path) {
    if (!j.is_number()) throw LoadError(path + ": expected a number");
    const double v = j.get<double>();
    if (!std::isfinite(v)) throw LoadError(path + ": not finite");
    return v;
}

Vec3 vec3(const json& j, const std::string& path) {
    if (!j.is_array() || j.size() != 3) throw LoadError(path + ": expected 3 numbers");
    return {number(j[0], path + "[0]"), number(j[1], path + "[1]"), number(j[2], path + "[2]")};
}

Image load_image(const fs::path& p) {
    return p.extension() == ".pfm" ? read_pfm(p) : read_png(p);
}

}  // namespace

Scene load_scene(const fs::path& manifest) {
    json j;
    try {
        j = json::parse(read_file(manifest));
    } catch (const json::parse_error& e) {
        throw LoadError(manifest.string() + ": malformed JSON: " + e.what());
    }
    const fs::path base = manifest.parent_path();
    Scene scene;

    const json& bounds = field(j, "bounds", "manifest");
    scene.offset = vec3(field(bounds, "center", "bounds"), "bounds.center");
    scene.scale = number(field(bounds, "radius", "bounds"), "bounds.radius");
    if (!(scene.scale > 0.0)) throw LoadError("bounds.radius: must be positive");
    if (j.contains("synthetic")) scene.preset = field(j["synthetic"], "preset", "synthetic").get<std::string>();

    const json& views = field(j, "views", "manifest");
    if (!views.is_array() || views.empty()) throw LoadError("views: expected a non-empty array");
    for (std::size_t i = 0; i < views.size(); ++i) {
        const std::string path = "views[" + std::to_string(i) + "]";
        const json& v = views[i];
        View view;
        const json& img = field(v, "image", path);
        if (!img.is_string()) throw LoadError(path + ".image: expected a string");
        view.image_path = img.get<std::string>();
        Camera& cam = view.camera;
        const auto dim = [&](const char* key) {
            const double d = number(field(v, key, path), path + "." + key);
            if (d < 1 || d != std::floor(d)) throw LoadError(path + "." + key + ": expected a positive integer");
            return static_cast<int>(d);
        };
        cam.width = dim("width");
        cam.height = dim("height");
        const json& k = field(v, "intrinsics", path);
        cam.fx = number(field(k, "fx", path + ".intrinsics"), path + ".intrinsics.fx");
        cam.fy = number(field(k, "fy", path + ".intrinsics"), path + ".intrinsics.fy");
        cam.cx = number(field(k, "cx", path + ".intrinsics"), path + ".intrinsics.cx");
        cam.cy = number(field(k, "cy", path + ".intrinsics"), path + ".intrinsics.cy");
        const json& r = field(v, "rotation", path);
        if (!r.is_array() || r.size() != 3) throw LoadError(path + ".rotation: expected 3 rows");
        for (int row = 0; row < 3; ++row)
            cam.rotation.row(row) = vec3(r[static_cast<std::size_t>(row)], path + ".rotation[" + std::to_string(row) + "]");
        const Vec3 t = vec3(field(v, "translation", path), path + ".translation");
        try {
            cam.validate(1e-6);
        } catch (const ContractViolation& e) {
            throw LoadError(path + ".rotation: " + e.what());
        }
        // Unit coordinates: x_cam / scale = R u + (R offset + t) / scale.
        cam.translation = (cam.rotation * scene.offset + t) / scene.scale;

        const fs::path file = base / view.image_path;
        if (!fs::exists(file)) throw LoadError(path + ".image: file not found: " + file.string());
        try {
            view.image = load_image(file);
        } catch (const std::exception& e) {
            throw LoadError(path + ".image: " + e.what());
        }
        if (view.image.width != cam.width || view.image.height != cam.height)
            throw LoadError(path + ".image: size " + std::to_string(view.image.width) + "x" +
                            std::to_string(view.image.height) + " does not match the declared resolution");
        scene.views.push_back(std::move(view));
    }

    if (j.contains("points")) {
        const json& p = j["points"];
        if (!p.is_string()) throw LoadError("points: expected a string");
        scene.points_path = p.get<std::string>();
        const fs::path file = base / scene.points_path;
        if (!fs::exists(file)) throw LoadError("points: file not found: " + file.string());
        try {
            for (const Vec3& x : read_point_cloud(file).points) scene.points.push_back((x - scene.offset) / scene.scale);
        } catch (const ParseError& e) {
            throw LoadError(std::string("points: ") + e.what());
        }
    }

    const json& split = field(j, "split", "manifest");
    const double seed = number(field(split, "seed", "split"), "split.seed");
    if (seed < 0 || seed != std::floor(seed)) throw LoadError("split.seed: expected a non-negative integer");
    const double fraction = number(field(split, "test_fraction", "split"), "split.test_fraction");
    if (fraction < 0.0 || fraction >= 1.0) throw LoadError("split.test_fraction: must be in [0, 1)");
    assign_split(scene, split["seed"].get<std::uint64_t>(), fraction);
    if (split.contains("test")) {
        const json& t = split["test"];
        if (!t.is_array()) throw LoadError("split.test: expected an array");
        std::vector<int> test;
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double v = number(t[i], "split.test[" + std::to_string(i) + "]");
            if (v < 0 || v >= static_cast<double>(scene.views.size()) || v != std::floor(v))
                throw LoadError("split.test[" + std::to_string(i) + "]: not a view index");
            test.push_back(static_cast<int>(v));
        }
        std::sort(test.begin(), test.end());
        if (std::adjacent_find(test.begin(), test.end()) != test.end()) throw LoadError("split.test: duplicate index");
        scene.test = test;
        scene.train.clear();
        for (int i = 0; i < static_cast<int>(scene.views.size()); ++i)
            if (!std::binary_search(test.begin(), test.end(), i)) scene.train.push_back(i);
    }
    if (scene.train.empty()) throw LoadError("split: no training views");
    return scene;
}

std::string manifest_json(const Scene& scene) {
    ordered_json j;
    j["format"] = "neusg-scene";
    j["version"] = 1;
    j["bounds"] = {{"center", {scene.offset.x(), scene.offset.y(), scene.offset.z()}}, {"radius", scene.scale}};
    if (!scene.preset.empty()) j["synthetic"] = {{"preset", scene.preset}};
    j["split"] = {{"seed", scene.split_seed}, {"test_fraction", scene.test_fraction}, {"test", scene.test}};
    if (!scene.points_path.empty()) j["points"] = scene.points_path;
    ordered_json views = ordered_json::array();
    for (const View& v : scene.views) {
        const Camera& c = v.camera;
        const Vec3 t = scene.scale * c.translation - c.rotation * scene.offset;
        ordered_json rot = ordered_json::array();
        for (int r = 0; r < 3; ++r) rot.push_back({c.rotation(r, 0), c.rotation(r, 1), c.rotation(r, 2)});
        views.push_back({{"image", v.image_path},
                         {"width", c.width},
                         {"height", c.height},
                         {"intrinsics", {{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy}}},
                         {"rotation", rot},
                         {"translation", {t.x(), t.y(), t.z()}}});
    }
    j["views"] = views;
    return j.dump(2) + "\n";
}

void save_manifest(const Scene& scene, const fs::path& manifest) { write_file_atomic(manifest, manifest_json(scene)); }

// ---- synthetic scenes -------------------------------------------------------------

std::shared_ptr<const ScalarField> preset_field(const std::string& preset) {
    if (preset == "sphere") return std::make_shared<SphereField>(0.5);
    if (preset == "box") return std::make_shared<BoxField>(Vec3::Constant(0.35));
    if (preset == "torus") return std::make_shared<TorusField>(0.45, 0.15);
    if (preset == "union") {
        return std::make_shared<UnionField>(std::vector<std::shared_ptr<const ScalarField>>{
            std::make_shared<SphereField>(0.3, Vec3(-0.25, 0.0, 0.0)),
            std::make_shared<BoxField>(Vec3::Constant(0.22), Vec3(0.25, 0.0, 0.0))});
    }
    throw ContractViolation("unknown preset '" + preset + "' (sphere, box, torus, union)");
}

Vec3 preset_albedo(const std::string& preset, const Vec3& x) {
    Vec3 base(0.85, 0.55, 0.35);
    if (preset == "box") base = Vec3(0.4, 0.6, 0.85);
    if (preset == "torus") base = Vec3(0.5, 0.8, 0.4);
    if (preset == "union") base = x.x() < 0.0 ? Vec3(0.85, 0.55, 0.35) : Vec3(0.4, 0.6, 0.85);
    const double pattern = 1.0 + 0.15 * std::sin(8.0 * x.x()) * std::sin(8.0 * x.y()) * std::sin(8.0 * x.z());
    return base * pattern;
}

Image render_analytic(const ScalarField& field, const std::string& preset, const Camera& cam, const SyntheticSpec& spec) {
    Image img(cam.width, cam.height);
    const Vec3 origin = cam.center();
    const Vec3 to_light = -spec.light_dir.normalized();
    parallel_for(static_cast<std::size_t>(cam.height), [&](std::size_t y0, std::size_t y1) {
        for (std::size_t y = y0; y < y1; ++y) {
            for (int x = 0; x < cam.width; ++x) {
                const Vec3 d = cam.ray_direction(x + 0.5, static_cast<double>(y) + 0.5);
                // Entry and exit of the unit ball.
                const double b = origin.dot(d);
                const double disc = b * b - (origin.squaredNorm() - 1.0);
                Vec3 color = spec.background;
                if (disc > 0.0) {
                    double t = std::max(0.0, -b - std::sqrt(disc));
                    const double t_end = -b + std::sqrt(disc);
                    bool hit = false;
                    for (int i = 0; i < 1024 && t <= t_end; ++i) {
                        const double f = field.sdf(origin + t * d);
                        if (f < 1e-7) {
                            hit = true;
                            break;
                        }
                        t += f;
                    }
                    if (hit) {
                        const Vec3 p = origin + t * d;
                        const Vec3 n = sdf_gradient(field, p, 1e-6).normalized();
                        const double shade = spec.ambient + (1.0 - spec.ambient) * std::max(0.0, n.dot(to_light));
                        color = (preset_albedo(preset, p) * shade).cwiseMax(0.0).cwiseMin(1.0);
                    }
                }
                img.set(x, static_cast<int>(y), color);
            }
        }
    });
    return img;
}

std::vector<Camera> camera_ring(const SyntheticSpec& spec, std::uint64_t seed) {
    if (spec.views < 2) throw ContractViolation("camera_ring: at least two views required");
    Rng rng = Rng::stream(seed, "camera-ring");
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    const double golden = 0.5 * (std::sqrt(5.0) - 1.0);
    const double f = spec.focal_factor * spec.resolution;
    const double c = 0.5 * spec.resolution;
    std::vector<Camera> cams;
    for (int i = 0; i < spec.views; ++i) {
        const double az = phase + 2.0 * M_PI * i / spec.views;
        const double frac = std::fmod(0.5 + golden * i, 1.0);
        const double el = (spec.min_elevation + (spec.max_elevation - spec.min_elevation) * frac) * M_PI / 180.0;
        const Vec3 eye = spec.camera_distance * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
        cams.push_back(Camera::look_at(eye, Vec3::Zero(), Vec3::UnitZ(), f, f, c, c, spec.resolution, spec.resolution));
    }
    return cams;
}

namespace {

std::vector<Vec3> sparse_points(const ScalarField& field, const TriangleMesh& mesh, const SyntheticSpec& spec,
                                std::uint64_t seed) {
    std::vector<Vec3> pts = sample_surface(mesh, static_cast<std::size_t>(spec.sparse_points), seed);
    Rng rng = Rng::stream(seed, "sparse-noise");
    for (Vec3& p : pts) {
        const Vec3 g = sdf_gradient(field, p, 1e-6);
        if (g.squaredNorm() > 0.0) p -= field.sdf(p) * g / g.squaredNorm();
        for (int c = 0; c < 3; ++c) p[c] += spec.sparse_noise * rng.normal();
    }
    return pts;
}

std::string image_name(int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "images/%03d.png", i);
    return buf;
}

}  // namespace

Scene make_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    const auto field = preset_field(spec.preset);
    Scene scene;
    scene.preset = spec.preset;
    const std::vector<Camera> cams = camera_ring(spec, seed);
    for (std::size_t i = 0; i < cams.size(); ++i)
        scene.views.push_back({image_name(static_cast<int>(i)), cams[i], render_analytic(*field, spec.preset, cams[i], spec)});
    assign_split(scene, seed);
    if (spec.sparse_points > 0) {
        scene.points = sparse_points(*field, marching_cubes(*field, spec.mesh_resolution), spec, seed);
        scene.points_path = "sparse.ply";
    }
    return scene;
}

fs::path generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed, const fs::path& dir) {
    const auto field = preset_field(spec.preset);
    fs::create_directories(dir / "images");
    Scene scene;
    scene.preset = spec.preset;
    const std::vector<Camera> cams = camera_ring(spec, seed);
    for (std::size_t i = 0; i < cams.size(); ++i) {
        View v{image_name(static_cast<int>(i)), cams[i], render_analytic(*field, spec.preset, cams[i], spec)};
        write_png(dir / v.image_path, v.image);
        scene.views.push_back(std::move(v));
    }
    assign_split(scene, seed);
    const TriangleMesh mesh = marching_cubes(*field, spec.mesh_resolution);
    write_mesh_ply(dir / "gt_mesh.ply", mesh);
    if (spec.sparse_points > 0) {
        PointCloud cloud;
        cloud.points = sparse_points(*field, mesh, spec, seed);
        write_point_cloud(dir / "sparse.ply", cloud);
        scene.points_path = "sparse.ply";
    }
    const fs::path manifest = dir / "manifest.json";
    save_manifest(scene, manifest);
    return manifest;
}

}  // namespace neusg
