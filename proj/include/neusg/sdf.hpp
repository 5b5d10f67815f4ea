// SPDX-License-Identifier: Apache-2.0
//
// Signed distance fields: analytic test fields and the learned field
// (multiresolution hash-grid encoding followed by a one-hidden-layer MLP),
// plus the color network that shades samples of the learned field.
//
// Sign convention: f < 0 inside, normals point along +grad f.

#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "neusg/camera.hpp"
#include "neusg/diff.hpp"
#include "neusg/params.hpp"

namespace neusg {

/// Anything that can be sampled as a signed distance.
class ScalarField {
public:
    virtual ~ScalarField() = default;
    [[nodiscard]] virtual double sdf(const Vec3& x) const = 0;
    /// [N x 3] points -> [N x 1] values.
    [[nodiscard]] virtual diff::Tensor sdf_batch(const diff::Tensor& points) const;
};

class SphereField : public ScalarField {
public:
    explicit SphereField(double radius, Vec3 center = Vec3::Zero()) : radius_(radius), center_(std::move(center)) {}
    [[nodiscard]] double sdf(const Vec3& x) const override { return (x - center_).norm() - radius_; }

private:
    double radius_;
    Vec3 center_;
};

/// f = z.
class PlaneField : public ScalarField {
public:
    [[nodiscard]] double sdf(const Vec3& x) const override { return x.z(); }
};

/// f = |x|^2 (not a distance; used for Laplacian checks).
class QuadraticField : public ScalarField {
public:
    [[nodiscard]] double sdf(const Vec3& x) const override { return x.squaredNorm(); }
};

class BoxField : public ScalarField {
public:
    explicit BoxField(Vec3 half_extent, Vec3 center = Vec3::Zero())
        : half_(std::move(half_extent)), center_(std::move(center)) {}
    [[nodiscard]] double sdf(const Vec3& x) const override;

private:
    Vec3 half_;
    Vec3 center_;
};

/// Torus around the z axis.
class TorusField : public ScalarField {
public:
    TorusField(double major, double minor, Vec3 center = Vec3::Zero())
        : major_(major), minor_(minor), center_(std::move(center)) {}
    [[nodiscard]] double sdf(const Vec3& x) const override;

private:
    double major_;
    double minor_;
    Vec3 center_;
};

class UnionField : public ScalarField {
public:
    explicit UnionField(std::vector<std::shared_ptr<const ScalarField>> parts) : parts_(std::move(parts)) {}
    [[nodiscard]] double sdf(const Vec3& x) const override;

private:
    std::vector<std::shared_ptr<const ScalarField>> parts_;
};

/// Central-difference gradient.
Vec3 sdf_gradient(const ScalarField& field, const Vec3& x, double eps);
/// |sum_i (f(x + eps e_i) + f(x - eps e_i) - 2 f(x))| / eps^2.
double sdf_curvature(const ScalarField& field, const Vec3& x, double eps);

// ---- hash grid ---------------------------------------------------------------

struct HashGridConfig {
    int levels = 8;
    int features = 2;
    int log2_table = 14;
    int base_resolution = 16;
    int max_resolution = 512;
    int initial_levels = 2;
    double init_range = 1e-4;
};

/// Layout of the multiresolution feature tables. The tables themselves live
/// in a Param ([entries x features]) so they can be optimized and checkpointed.
class HashGrid {
public:
    explicit HashGrid(const HashGridConfig& config = {});

    [[nodiscard]] const HashGridConfig& config() const { return config_; }
    [[nodiscard]] int levels() const { return config_.levels; }
    [[nodiscard]] int features() const { return config_.features; }
    [[nodiscard]] int output_dim() const { return config_.levels * config_.features; }
    [[nodiscard]] int resolution(int level) const { return resolution_[static_cast<std::size_t>(level)]; }
    [[nodiscard]] bool dense(int level) const { return dense_[static_cast<std::size_t>(level)]; }
    [[nodiscard]] std::size_t level_offset(int level) const { return offset_[static_cast<std::size_t>(level)]; }
    [[nodiscard]] std::size_t level_entries(int level) const;
    [[nodiscard]] std::size_t total_entries() const { return offset_.back(); }

    [[nodiscard]] int active_levels() const { return active_; }
    /// Enables the next level. Throws unless level == active_levels() < levels().
    void activate_level(int level);
    void set_active_levels(int n);

    /// Cell size of the finest active level in world units over [-1, 1].
    [[nodiscard]] double finest_cell() const { return 2.0 / resolution(active_ - 1); }

    /// Table row of vertex (i, j, k) of a level.
    [[nodiscard]] std::size_t vertex_row(int level, std::uint32_t i, std::uint32_t j, std::uint32_t k) const;

    /// Randomly initialized table with only the initially active levels nonzero.
    [[nodiscard]] diff::Tensor init_table(std::uint64_t seed) const;

    /// Differentiable encoding: points [N x 3] (no gradient), table [entries x F] -> [N x L*F].
    diff::Value encode(diff::Value points, diff::Value table) const;

private:
    HashGridConfig config_;
    std::vector<int> resolution_;
    std::vector<bool> dense_;
    std::vector<std::size_t> offset_;
    int active_ = 0;
};

// ---- learned field -------------------------------------------------------

struct SdfConfig {
    HashGridConfig grid;
    int hidden = 64;
    int geo_features = 15;
    int color_hidden = 32;
    int color_layers = 4;
    double init_radius = 0.3;
};

/// Taped evaluation of a stencil batch.
struct StencilEval {
    diff::Value sdf;        ///< [M x 1] at the query points
    diff::Value gradient;   ///< [M x 3] central differences
    diff::Value curvature;  ///< [M x 1] |discrete Laplacian|
    diff::Value geo;        ///< [M x G] geometry features at the query points
};

class SdfNetwork : public ScalarField {
public:
    explicit SdfNetwork(const SdfConfig& config = {}, std::uint64_t seed = 0);

    [[nodiscard]] const SdfConfig& config() const { return config_; }
    [[nodiscard]] const HashGrid& grid() const { return grid_; }
    [[nodiscard]] ParamList& params() { return params_; }
    [[nodiscard]] const ParamList& params() const { return params_; }

    /// Activates the next hash level with zero features.
    void activate_level(int level);
    void set_active_levels(int n) { grid_.set_active_levels(n); }

    /// Numerical-gradient step tied to the finest active level.
    [[nodiscard]] double gradient_eps() const { return grid_.finest_cell(); }

    [[nodiscard]] double sdf(const Vec3& x) const override;
    [[nodiscard]] diff::Tensor sdf_batch(const diff::Tensor& points) const override;
    /// sdf plus geometry feature, [N x (1 + G)].
    [[nodiscard]] diff::Tensor eval(const diff::Tensor& points) const;

    /// Parameters placed on a tape.
    class Bound {
    public:
        Bound(const SdfNetwork& net, diff::Tape& tape, bool trainable);
        /// Uses caller-provided values (one per parameter, same shapes) in place of the stored ones.
        Bound(const SdfNetwork& net, std::vector<diff::Value> values);

        /// [N x 3] points (clamped into the unit ball) -> [N x (1 + G)].
        diff::Value eval(const diff::Tensor& points) const;
        /// sdf, central-difference gradient, curvature and features at each point.
        StencilEval stencil(const diff::Tensor& points, double eps) const;
        /// Color network: per-row position, normal, view direction, feature -> RGB in (0, 1).
        diff::Value color(diff::Value x, diff::Value normal, diff::Value view, diff::Value geo) const;

        [[nodiscard]] const std::vector<diff::Value>& leaves() const { return leaves_; }

    private:
        const SdfNetwork* net_;
        diff::Tape* tape_;
        std::vector<diff::Value> leaves_;
    };

    Bound bind(diff::Tape& tape, bool trainable) const { return Bound(*this, tape, trainable); }

private:
    SdfConfig config_;
    HashGrid grid_;
    ParamList params_;
};

/// Projects points with |x| > 1 back onto the unit sphere.
diff::Tensor clamp_to_unit_ball(const diff::Tensor& points);

}  // namespace neusg
