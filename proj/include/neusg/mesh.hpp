// SPDX-License-Identifier: Apache-2.0
//
// Isosurface extraction and reconstruction metrics.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "neusg/camera.hpp"
#include "neusg/image.hpp"
#include "neusg/sdf.hpp"

namespace neusg {

struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> triangles;

    [[nodiscard]] bool empty() const { return triangles.empty(); }
    [[nodiscard]] double area() const;
    /// Throws ContractViolation on an out-of-range index.
    void validate() const;
};

/// Triangulates the iso level set of field over the box [lo, hi]^3 split into
/// resolution^3 cells. Vertices are shared between neighbouring cells, so a
/// closed surface yields a watertight mesh. Triangles face increasing values.
TriangleMesh marching_cubes(const ScalarField& field, int resolution, const Vec3& lo = Vec3::Constant(-1.0),
                            const Vec3& hi = Vec3::Constant(1.0), double iso = 0.0);

/// Edges used by exactly one triangle; empty for a closed manifold mesh.
std::size_t boundary_edge_count(const TriangleMesh& mesh);

/// Area-weighted uniform samples on the triangles.
std::vector<Vec3> sample_surface(const TriangleMesh& mesh, std::size_t count, std::uint64_t seed);
/// Samples on an analytic surface: dense mesh samples projected onto the zero set.
std::vector<Vec3> sample_field_surface(const ScalarField& field, std::size_t count, std::uint64_t seed,
                                       int resolution = 256);

/// Distance from each query point to its nearest reference point.
std::vector<double> nearest_distances(const std::vector<Vec3>& query, const std::vector<Vec3>& reference);
std::vector<double> nearest_distances_brute(const std::vector<Vec3>& query, const std::vector<Vec3>& reference);

/// Point count up to which chamfer() compares all pairs.
inline constexpr std::size_t kChamferBruteLimit = 10000;

/// Bidirectional mean of nearest distances. Throws ContractViolation on an empty set.
double chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b);
double chamfer_brute(const std::vector<Vec3>& a, const std::vector<Vec3>& b);
double chamfer_grid(const std::vector<Vec3>& a, const std::vector<Vec3>& b);

struct F1Score {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

F1Score f1_score(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt, double tau);

inline constexpr double kPsnrCap = 99.0;

double psnr(const Image& a, const Image& b);
/// Channel-mean gray, 11x11 Gaussian window (sigma 1.5), mean over valid window positions.
double ssim(const Image& a, const Image& b);

struct MetricReport {
    std::optional<double> chamfer;
    std::optional<double> precision;
    std::optional<double> recall;
    std::optional<double> f1;
    std::optional<double> tau;
    std::optional<double> psnr;
    std::optional<double> ssim;
    std::size_t samples = 0;

    [[nodiscard]] std::string to_json() const;
};

MetricReport evaluate_mesh(const TriangleMesh& mesh, const std::vector<Vec3>& gt_points, double tau,
                           std::size_t samples, std::uint64_t seed);

void write_mesh_ply(const std::filesystem::path& path, const TriangleMesh& mesh);
void write_mesh_obj(const std::filesystem::path& path, const TriangleMesh& mesh);
/// .ply or .obj by extension.
void write_mesh(const std::filesystem::path& path, const TriangleMesh& mesh);
TriangleMesh read_mesh(const std::filesystem::path& path);

}  // namespace neusg
