// SPDX-License-Identifier: Apache-2.0
//
// File formats: PNG and PFM images, PLY (ASCII and binary), atomic writes.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "neusg/camera.hpp"
#include "neusg/gaussian.hpp"
#include "neusg/image.hpp"

namespace neusg {

/// Writes bytes to a temporary sibling and renames it over path.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

/// 8-bit RGB or RGBA PNG to linear [0, 1] values (alpha dropped, no color management).
Image read_png(const std::filesystem::path& path);
/// Values are clamped to [0, 1] and rounded to 8 bits.
void write_png(const std::filesystem::path& path, const Image& image);

/// 32-bit float RGB PFM (little endian, rows stored bottom to top).
Image read_pfm(const std::filesystem::path& path);
void write_pfm(const std::filesystem::path& path, const Image& image);

// ---- PLY ----------------------------------------------------------------------

enum class PlyType { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

PlyType ply_type_from_name(const std::string& name);
const char* ply_type_name(PlyType t);

struct PlyProperty {
    std::string name;
    PlyType type = PlyType::Float64;
    bool is_list = false;
    PlyType count_type = PlyType::UInt8;
    /// Scalar properties: one value per element.
    std::vector<double> values;
    /// List properties: one list per element.
    std::vector<std::vector<double>> lists;
};

struct PlyElement {
    std::string name;
    std::size_t count = 0;
    std::vector<PlyProperty> properties;

    [[nodiscard]] const PlyProperty* find(const std::string& property) const;
    PlyProperty* find(const std::string& property);
};

enum class PlyFormat { Ascii, BinaryLittleEndian, BinaryBigEndian };

struct PlyData {
    PlyFormat format = PlyFormat::BinaryLittleEndian;
    std::vector<std::string> comments;
    std::vector<PlyElement> elements;

    [[nodiscard]] const PlyElement* find(const std::string& element) const;
    PlyElement* find(const std::string& element);
};

/// Throws ParseError with the byte offset of the first problem.
PlyData parse_ply(const std::string& bytes);
PlyData read_ply(const std::filesystem::path& path);
std::string serialize_ply(const PlyData& ply);
void write_ply(const std::filesystem::path& path, const PlyData& ply);

/// Points with optional normals; any other vertex properties are carried along untouched.
struct PointCloud {
    std::vector<Vec3> points;
    std::vector<Vec3> normals;
    std::vector<PlyProperty> extra;
};

PointCloud point_cloud_from_ply(const PlyData& ply);
PlyData point_cloud_to_ply(const PointCloud& cloud, PlyFormat format = PlyFormat::BinaryLittleEndian);
PointCloud read_point_cloud(const std::filesystem::path& path);
void write_point_cloud(const std::filesystem::path& path, const PointCloud& cloud,
                       PlyFormat format = PlyFormat::BinaryLittleEndian);

/// Gaussian sets use the common splatting layout: x y z, nx ny nz, f_dc_*, f_rest_*, opacity, scale_*, rot_*.
PlyData gaussians_to_ply(const std::vector<Gaussian3D>& gaussians);
std::vector<Gaussian3D> gaussians_from_ply(const PlyData& ply);

}  // namespace neusg
