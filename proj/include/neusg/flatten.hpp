// SPDX-License-Identifier: Apache-2.0
//
// Flattened-Gaussian regularizers: the smallest-scale penalty, the normal
// taken from the smallest scale axis, its alignment with SDF normals, and
// the export of flat Gaussian centers as surface points.

#pragma once

#include <vector>

#include "neusg/diff.hpp"
#include "neusg/gaussian.hpp"
#include "neusg/sdf.hpp"

namespace neusg {

struct FlatGaussianView {
    Vec3 scale = Vec3::Zero();
    /// Axis of the smallest scale, lowest index on ties.
    int min_index = 0;
    /// One-hot local axis.
    Vec3 n_local = Vec3::Zero();
    /// World normal R n_local.
    Vec3 n_world = Vec3::Zero();
};

int min_scale_axis(const Vec3& scale);
FlatGaussianView flat_view(const Gaussian3D& g);
Vec3 gaussian_normal(const Gaussian3D& g);

/// Mean over Gaussians of min(s1, s2, s3). log_scale: [G x 3].
diff::Value loss_scale(diff::Value log_scale);
double loss_scale(const std::vector<Gaussian3D>& gaussians);

/// Gradients shorter than this drop the Gaussian from the alignment mean.
inline constexpr double kMinAlignGradient = 1e-8;

struct AlignLoss {
    diff::Value value;
    int used = 0;
    int skipped = 0;
    /// Mean |grad f| over the used Gaussians (kept apart from the direction term).
    double mean_grad_norm = 0.0;
};

/// Mean |1 - |n_w . grad f / |grad f|||. rotation [G x 4], log_scale [G x 3], gradient [G x 3].
AlignLoss loss_align(diff::Value rotation, diff::Value log_scale, diff::Value gradient);
/// Normals of an arbitrary field by central differences (no gradient into the field).
AlignLoss loss_align(diff::Value rotation, diff::Value log_scale, const diff::Tensor& positions,
                     const ScalarField& field, double eps);
/// Normals of the learned field; stop_field_grad keeps the network fixed.
AlignLoss loss_align(diff::Value rotation, diff::Value log_scale, const diff::Tensor& positions,
                     const SdfNetwork::Bound& net, double eps, bool stop_field_grad);
double loss_align(const std::vector<Gaussian3D>& gaussians, const ScalarField& field, double eps);

struct ExportConfig {
    double max_min_scale = 1e-3;
    double min_opacity = 0.5;
};

/// Centers of opaque, flat Gaussians, followed by any extra points.
std::vector<Vec3> export_surface_points(const std::vector<Gaussian3D>& gaussians, const ExportConfig& cfg = {},
                                        const std::vector<Vec3>& extra = {});

}  // namespace neusg
