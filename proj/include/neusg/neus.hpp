// SPDX-License-Identifier: Apache-2.0
//
// SDF-to-opacity volume rendering and the implicit-surface losses.

#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "neusg/camera.hpp"
#include "neusg/diff.hpp"
#include "neusg/image.hpp"
#include "neusg/params.hpp"
#include "neusg/rng.hpp"
#include "neusg/sdf.hpp"

namespace neusg {

struct RaySample {
    Vec3 origin = Vec3::Zero();
    Vec3 direction = Vec3::UnitZ();
    /// Strictly increasing distances inside the unit ball; empty when the ray misses it.
    std::vector<double> t;

    [[nodiscard]] bool empty() const { return t.empty(); }
    [[nodiscard]] Vec3 point(std::size_t i) const { return origin + t[i] * direction; }
};

/// Entry and exit distances of a ray through the unit sphere.
std::optional<std::pair<double, double>> intersect_unit_sphere(const Vec3& origin, const Vec3& direction);

/// N stratified samples along the ray through pixel coordinates (u, v).
RaySample sample_ray(const Camera& cam, double u, double v, int n, Rng& rng);
RaySample sample_ray(const Vec3& origin, const Vec3& direction, int n, Rng& rng);

/// Adds n extra samples drawn from the piecewise-constant density of weights
/// (one weight per interval [t_i, t_{i+1}]) and re-sorts.
void importance_resample(RaySample& sample, const std::vector<double>& weights, int n, Rng& rng);

/// Discrete opacity of the interval between two SDF samples:
/// max((Phi(s f_i) - Phi(s f_next)) / Phi(s f_i), 0), evaluated in log space.
double sdf_to_alpha(double f_i, double f_next, double inv_s);
diff::Value sdf_to_alpha(diff::Value f_i, diff::Value f_next, diff::Value inv_s);

/// Front-to-back weights w_i = T_i alpha_i.
std::vector<double> blend_weights(const std::vector<double>& alpha);

struct Composite {
    diff::Value color;    ///< [R x 3]
    diff::Value weights;  ///< [R x K]
    diff::Value opacity;  ///< [R x 1] sum of weights
};

/// alpha [R x K]; channels: three [R x K] color planes; background [1 x 3] or [R x 3].
Composite composite(diff::Value alpha, const std::array<diff::Value, 3>& channels, diff::Value background);

/// Renderer state learned alongside the field.
ParamList make_render_params(double init_inv_s = 20.0);
/// Index of the sharpness parameter (log inv_s) and background logits in make_render_params().
inline constexpr std::size_t kLogInvS = 0;
inline constexpr std::size_t kBackground = 1;
double inv_s_of(const ParamList& render_params);
Vec3 background_of(const ParamList& render_params);

struct RayBatch {
    /// [R x 3]
    diff::Tensor origins;
    diff::Tensor directions;
    /// [R x N], shared sample count.
    diff::Tensor t;

    [[nodiscard]] int rays() const { return t.rows; }
    [[nodiscard]] int samples() const { return t.cols; }
    /// [R*N x 3] sample positions, ray-major.
    [[nodiscard]] diff::Tensor points() const;
};

/// Packs non-empty samples with equal counts into a batch.
RayBatch make_batch(const std::vector<RaySample>& samples);

struct NeusRender {
    diff::Value color;      ///< [R x 3]
    diff::Value weights;    ///< [R x N-1]
    diff::Value opacity;    ///< [R x 1]
    diff::Value sdf;        ///< [R*N x 1]
    diff::Value gradient;   ///< [R*N x 3]
    diff::Value curvature;  ///< [R*N x 1]
};

/// render_params: bound values of make_render_params() in order.
NeusRender render_rays(const SdfNetwork::Bound& net, const std::vector<diff::Value>& render_params,
                       const RayBatch& batch, double eps);

/// Plain rendering of pixel colors (no gradient), chunked; chunks fan out over the worker pool.
std::vector<Vec3> render_pixels(const SdfNetwork& net, const ParamList& render_params, const Camera& cam,
                                const std::vector<std::pair<double, double>>& pixels, int samples,
                                std::uint64_t seed, int chunk = 256);
/// Every pixel center of the camera.
Image render_image(const SdfNetwork& net, const ParamList& render_params, const Camera& cam, int samples,
                   std::uint64_t seed, int chunk = 256);

// ---- losses --------------------------------------------------------------

/// Mean absolute error over all channels.
diff::Value loss_rgb(diff::Value rendered, const diff::Tensor& target);
/// Mean of (|g| - 1)^2 over rows of gradients.
diff::Value loss_eikonal(diff::Value gradients);

struct PointLoss {
    diff::Value value;
    int used = 0;
    int skipped = 0;
    /// No usable point: value is 0.
    bool empty = false;
};
/// Mean |f(p)| over points inside the unit ball.
PointLoss loss_point(const SdfNetwork::Bound& net, const std::vector<Vec3>& points);
/// Plain version for any field; points outside the ball are skipped.
double loss_point(const ScalarField& field, const std::vector<Vec3>& points);

struct LossWeights {
    double lambda1 = 0.1;
    double lambda2 = 1.0;
    double w_curv = 5e-4;
};

struct NeusLossParts {
    double rgb = 0.0;
    double eikonal = 0.0;
    double point = 0.0;
    double curvature = 0.0;
};

/// L_RGB + lambda1 L_eik + lambda2 L_pt + w_curv L_curv. Throws TrainingAbort on a non-finite part.
double loss_total(const NeusLossParts& parts, const LossWeights& w);
diff::Value loss_total(diff::Value rgb, diff::Value eikonal, diff::Value point, diff::Value curvature,
                       const LossWeights& w);

}  // namespace neusg
