// SPDX-License-Identifier: Apache-2.0
//
// Posed image collections, their JSON manifest, and the synthetic scene
// generator used for ground truth.

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "neusg/camera.hpp"
#include "neusg/image.hpp"
#include "neusg/sdf.hpp"

namespace neusg {

struct View {
    std::string image_path;  ///< relative to the manifest directory
    Camera camera;
    Image image;
};

struct Scene {
    std::vector<View> views;
    std::vector<int> train;
    std::vector<int> test;
    /// Optional imported point cloud, already in unit-sphere coordinates.
    std::vector<Vec3> points;
    std::string points_path;
    /// world = scale * unit + offset; cameras and points are stored in unit coordinates.
    double scale = 1.0;
    Vec3 offset = Vec3::Zero();
    std::uint64_t split_seed = 0;
    double test_fraction = 0.07;
    /// Analytic preset the scene was generated from, empty otherwise.
    std::string preset;

    [[nodiscard]] std::vector<const View*> train_views() const;
};

/// Deterministic shuffle by seed, the first floor(fraction * n) views go to test.
void assign_split(Scene& scene, std::uint64_t seed, double test_fraction = 0.07);

/// Reads a manifest and its images. Throws LoadError naming the offending field.
Scene load_scene(const std::filesystem::path& manifest);
/// Writes the manifest only (images and point cloud are referenced by path).
void save_manifest(const Scene& scene, const std::filesystem::path& manifest);
std::string manifest_json(const Scene& scene);

// ---- synthetic scenes ------------------------------------------------------

struct SyntheticSpec {
    std::string preset = "sphere";
    int views = 16;
    int resolution = 128;
    double camera_distance = 2.0;
    /// Camera ring elevation range in degrees.
    double min_elevation = -30.0;
    double max_elevation = 45.0;
    double focal_factor = 1.2;
    Vec3 light_dir = Vec3(0.4, -0.8, -0.45);
    double ambient = 0.25;
    Vec3 background = Vec3(1.0, 1.0, 1.0);
    /// Sparse noisy surface samples written as the scene point cloud (0 disables).
    int sparse_points = 1000;
    double sparse_noise = 0.003;
    int mesh_resolution = 128;
};

/// Analytic field of a named preset: sphere, box, torus, union.
std::shared_ptr<const ScalarField> preset_field(const std::string& preset);
/// Albedo of a preset at a surface point.
Vec3 preset_albedo(const std::string& preset, const Vec3& x);

/// Sphere-traced Lambertian render of an analytic field.
Image render_analytic(const ScalarField& field, const std::string& preset, const Camera& cam,
                      const SyntheticSpec& spec);

/// Ring of look-at cameras around the origin.
std::vector<Camera> camera_ring(const SyntheticSpec& spec, std::uint64_t seed);

/// In-memory scene: rendered views, split, and the sparse point cloud.
Scene make_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

/// Writes images/NNN.png, manifest.json, gt_mesh.ply and sparse.ply into dir.
/// Returns the manifest path.
std::filesystem::path generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed,
                                         const std::filesystem::path& dir);

}  // namespace neusg
