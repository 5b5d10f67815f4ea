// SPDX-License-Identifier: Apache-2.0
//
// Alternating optimization of the implicit field (volume-rendering phases)
// and the Gaussian set (splatting phases).

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "neusg/flatten.hpp"
#include "neusg/neus.hpp"
#include "neusg/params.hpp"
#include "neusg/scene.hpp"
#include "neusg/sdf.hpp"
#include "neusg/splat.hpp"

namespace neusg {

struct GaussianLearningRates {
    double position = 1.6e-4;
    double rotation = 1e-3;
    double scale = 1e-2;
    double opacity = 5e-2;
    double sh = 2.5e-3;
};

struct TrainConfig {
    int total_iters = 5000;
    int gs_block_interval = 1000;
    int gs_iters_total = 1500;
    int rays_per_iter = 32;
    int images_per_iter = 4;
    int samples_per_ray = 64;
    double lambda1 = 0.1;
    double lambda2 = 1.0;
    double lambda3 = 100.0;
    double lambda4 = 1.0;
    double w_curv = 5e-4;
    double lr = 1e-3;
    int warmup_iters = 50;
    int milestone1 = 3000;
    int milestone2 = 4000;
    double weight_decay = 1e-2;
    double init_inv_s = 20.0;
    /// Start the background color at the mean border color of the training images.
    bool init_background = true;
    /// NeuS iterations between hash level activations; 0 spreads them over the first half.
    int level_interval = 0;
    /// Points drawn from the surface point set per NeuS iteration.
    int points_per_iter = 256;
    std::uint64_t seed = 0;

    SdfConfig sdf;
    int sh_degree = 0;
    /// Gaussians created when the scene has no point cloud.
    int random_gaussians = 200;
    GaussianLearningRates gs_lr;
    /// Density control is off by default (interval 0).
    DensifyConfig densify{.interval = 0};
    ExportConfig export_points;
    /// Append the imported point cloud to the exported surface points.
    bool merge_scene_points = true;

    /// Keeps warmup and milestone fractions of the reference schedule at a new length.
    void scale_schedule(int total);
    /// Number of volume-rendering blocks.
    [[nodiscard]] int blocks() const;
    [[nodiscard]] int level_step() const;
};

// ---- schedule ---------------------------------------------------------------

enum class Phase { Neus, Gaussian };
const char* phase_name(Phase p);

struct PhaseBlock {
    Phase phase = Phase::Neus;
    int begin = 0;  ///< first phase-local iteration
    int count = 0;
    bool operator==(const PhaseBlock&) const = default;
};

/// Volume-rendering blocks of gs_block_interval iterations, each followed by
/// a splatting block; splatting iterations are spread evenly, remainder first.
std::vector<PhaseBlock> schedule(const TrainConfig& cfg);

/// Linear warmup to lr, then lr, lr/10 after milestone1, lr/100 after milestone2.
double lr_at(int iter, const TrainConfig& cfg);

// ---- losses and optimizer ----------------------------------------------------

struct GaussianLossParts {
    double rgb = 0.0;
    double scale = 0.0;
    double align = 0.0;
};

/// L_RGB + lambda3 L_s + lambda4 L_align. Throws TrainingAbort on a non-finite part.
double loss_gaussian(const GaussianLossParts& parts, double lambda3, double lambda4);

struct AdamState {
    GradList m;
    GradList v;
    long step = 0;

    /// Zero moments shaped like params.
    void reset(const ParamList& params);
};

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One Adam step. Parameters flagged decay get decoupled weight decay first.
/// lr_scale, when given, multiplies lr per parameter. Throws TrainingAbort on a non-finite gradient.
void adam_step(ParamList& params, const GradList& grads, AdamState& state, double lr, double weight_decay,
               const std::vector<double>& lr_scale = {}, const AdamOptions& options = {});

// ---- reports ----------------------------------------------------------------

struct LossReport {
    int iter = 0;
    Phase phase = Phase::Neus;
    double l_rgb = 0.0;
    double l_eik = 0.0;
    double l_pt = 0.0;
    double l_curv = 0.0;
    double l_s = 0.0;
    double l_align = 0.0;
    double total = 0.0;
    double lr = 0.0;
    std::size_t n_gauss = 0;
    int levels = 0;
};

const char* report_csv_header();
std::string report_csv_row(const LossReport& r);

// ---- trainer ------------------------------------------------------------------

/// Everything a run produces and a checkpoint stores.
struct TrainState {
    SdfNetwork net;
    ParamList render;
    ParamList gaussians;
    std::vector<Vec3> points;
};

/// Splatting optimizer for a Gaussian set with density control.
class GaussianTrainer {
public:
    GaussianTrainer(ParamList gaussians, const TrainConfig& cfg);

    struct Step {
        GaussianLossParts parts;
        double total = 0.0;
    };
    /// One optimization step against a target view. gradients: SDF gradients at the
    /// current centers ([G x 3]); normals provide the alignment target.
    Step step(const Camera& cam, const Image& target, const Vec3& background,
              const std::function<diff::Tensor(const diff::Tensor&)>& field_gradient);

    [[nodiscard]] const ParamList& params() const { return params_; }
    [[nodiscard]] std::size_t size() const { return static_cast<std::size_t>(params_[kGsPosition].value.rows); }
    [[nodiscard]] long iterations() const { return iter_; }

private:
    void densify();

    ParamList params_;
    TrainConfig cfg_;
    AdamState adam_;
    DensifyStats stats_;
    long iter_ = 0;
};

/// SDF gradients of the learned field at [G x 3] positions.
diff::Tensor network_gradient(const SdfNetwork& net, const diff::Tensor& positions, double eps);

struct TrainResult {
    TrainState state;
    std::vector<LossReport> reports;
};

using ReportSink = std::function<void(const LossReport&)>;

/// Runs the full alternating schedule. Throws TrainingAbort (with the last report) on a non-finite loss.
TrainResult train(const Scene& scene, const TrainConfig& cfg, const ReportSink& sink = {});

/// Mean color of the outermost pixel ring of the training images.
Vec3 border_color(const Scene& scene);

/// The initial state train() starts from.
TrainState initial_state(const Scene& scene, const TrainConfig& cfg);

}  // namespace neusg
