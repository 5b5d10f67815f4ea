// SPDX-License-Identifier: Apache-2.0
//
// Gaussian splatting: projection of a Gaussian set to screen-space
// footprints, front-to-back alpha blending, its adjoint, and a simple
// split/prune density control.

#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "neusg/camera.hpp"
#include "neusg/diff.hpp"
#include "neusg/gaussian.hpp"
#include "neusg/image.hpp"
#include "neusg/params.hpp"

namespace neusg {

/// Contributions below this effective opacity are skipped.
inline constexpr double kMinSplatAlpha = 1.0 / 255.0;
inline constexpr double kMaxSplatAlpha = 0.99;
/// Footprint cutoff in standard deviations.
inline constexpr double kFootprintSigmas = 3.0;

// ---- parameter packing ---------------------------------------------------

/// Column blocks of a Gaussian set stored as parameters, one row per Gaussian.
inline constexpr std::size_t kGsPosition = 0;  ///< [G x 3]
inline constexpr std::size_t kGsRotation = 1;  ///< [G x 4] (w, x, y, z)
inline constexpr std::size_t kGsLogScale = 2;  ///< [G x 3]
inline constexpr std::size_t kGsOpacity = 3;   ///< [G x 1] logits
inline constexpr std::size_t kGsSh = 4;        ///< [G x 3k] channel-major

/// All Gaussians must carry the same number of SH coefficients.
ParamList gaussian_params(const std::vector<Gaussian3D>& gaussians, int sh_degree = 0);
std::vector<Gaussian3D> gaussians_from_params(const ParamList& params);
int sh_degree_of(int coefficients);

// ---- ordering ------------------------------------------------------------

/// Stable front-to-back order by camera-space depth, ties by index.
std::vector<int> depth_sort(const std::vector<double>& depths);
std::vector<int> depth_sort(const std::vector<Gaussian3D>& gaussians, const Camera& cam);

// ---- differentiable rendering ----------------------------------------------

struct SplatFootprint {
    int id = 0;  ///< index into the input Gaussian list
    double u = 0.0;
    double v = 0.0;
    double depth = 0.0;
    /// Conic (inverse dilated 2D covariance) a, b, c.
    std::array<double, 3> conic{};
    /// kFootprintSigmas times the largest 2D standard deviation, in pixels.
    double radius = 0.0;
};

struct SplatContribution {
    int slot = 0;            ///< row of the packed footprint table
    double alpha = 0.0;      ///< effective opacity after clamping
    double trans = 0.0;      ///< transmittance in front of this Gaussian
    double falloff = 0.0;    ///< exp(power)
    bool clamped = false;    ///< alpha hit the 0.99 cap
};

/// Per-pixel blending record of one rendered view.
struct SplatRecord {
    int width = 0;
    int height = 0;
    std::vector<SplatFootprint> footprints;  ///< front-to-back
    /// Contributions of pixel p are entries [offset[p], offset[p + 1]).
    std::vector<std::size_t> offset;
    std::vector<SplatContribution> contributions;
    std::vector<double> final_trans;

    [[nodiscard]] std::span<const SplatContribution> pixel(int p) const {
        return {contributions.data() + offset[static_cast<std::size_t>(p)],
                offset[static_cast<std::size_t>(p) + 1] - offset[static_cast<std::size_t>(p)]};
    }
};

struct SplatRender {
    diff::Value image;  ///< [H*W x 3], row-major pixels
    /// [V x 9] visible footprints (u, v, conic a, b, c, opacity, r, g, b); invalid when nothing is visible.
    diff::Value packed;
    /// Input index of each packed row.
    std::vector<int> visible;
    std::shared_ptr<const SplatRecord> record;
};

/// gaussians: bound values of gaussian_params() in order; background [1 x 3].
SplatRender render_splats(const std::vector<diff::Value>& gaussians, const Camera& cam, diff::Value background);

/// Plain rendering.
Image rasterize(const std::vector<Gaussian3D>& gaussians, const Camera& cam, const Vec3& background);

/// A rendered view with its tape kept for the reverse pass.
class SplatFrame {
public:
    SplatFrame(const std::vector<Gaussian3D>& gaussians, const Camera& cam, const Vec3& background);

    [[nodiscard]] const Image& image() const { return image_; }
    [[nodiscard]] const SplatRecord& record() const { return *render_.record; }
    [[nodiscard]] std::size_t size() const { return count_; }

    /// Gradients aligned with gaussian_params(), for dLoss/dImage.
    GradList backward(const Image& d_image);

private:
    std::unique_ptr<diff::Tape> tape_;
    ParamList params_;
    std::vector<diff::Value> leaves_;
    SplatRender render_;
    Image image_;
    std::size_t count_ = 0;
};

inline SplatFrame rasterize_frame(const std::vector<Gaussian3D>& gaussians, const Camera& cam, const Vec3& background) {
    return SplatFrame(gaussians, cam, background);
}
inline GradList rasterize_backward(SplatFrame& frame, const Image& d_image) { return frame.backward(d_image); }

/// Converts a rendered [H*W x 3] value to an Image.
Image to_image(const diff::Tensor& pixels, int width, int height);
diff::Tensor from_image(const Image& image);

// ---- density control -------------------------------------------------------

struct DensifyConfig {
    double grad_threshold = 2e-4;
    double min_opacity = 0.005;
    double split_scale_divisor = 1.6;
    int interval = 100;
    /// No splits once the set reaches this size.
    std::size_t max_gaussians = 20000;
};

/// Screen-space positional gradient magnitudes accumulated between density steps.
struct DensifyStats {
    std::vector<double> grad_sum;
    std::vector<int> count;

    explicit DensifyStats(std::size_t n = 0) : grad_sum(n, 0.0), count(n, 0) {}
    /// Adds |dL/d mean2D| in normalized device coordinates for every visible Gaussian of a render.
    void accumulate(const SplatRender& render, int width, int height);
    [[nodiscard]] double mean(std::size_t i) const { return count[i] > 0 ? grad_sum[i] / count[i] : 0.0; }
};

struct DensifyResult {
    std::vector<Gaussian3D> gaussians;
    /// Index of the input Gaussian each output descends from.
    std::vector<int> source;
    int split = 0;
    int pruned = 0;
};

DensifyResult densify_and_prune(const std::vector<Gaussian3D>& gaussians, const DensifyStats& stats,
                                const DensifyConfig& cfg);

// ---- initialization --------------------------------------------------------

/// Gaussians at the given points with isotropic scale equal to the mean
/// nearest-neighbor distance, opacity 0.1 and mid-gray color.
std::vector<Gaussian3D> init_gaussians(const std::vector<Vec3>& points, int sh_degree = 0);
/// n points uniform in the unit ball.
std::vector<Gaussian3D> init_gaussians(std::size_t n, std::uint64_t seed, int sh_degree = 0);

}  // namespace neusg
