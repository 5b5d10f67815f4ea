// SPDX-License-Identifier: Apache-2.0

#include "neusg/flatten.hpp"

#include <cmath>

#include "neusg/error.hpp"

namespace neusg {

using diff::Tape;
using diff::Tensor;
using diff::Value;

int min_scale_axis(const Vec3& s) {
    int k = 0;
    for (int i = 1; i < 3; ++i)
        if (s[i] < s[k]) k = i;
    return k;
}

FlatGaussianView flat_view(const Gaussian3D& g) {
    FlatGaussianView v;
    v.scale = g.scale();
    v.min_index = min_scale_axis(v.scale);
    v.n_local[v.min_index] = 1.0;
    v.n_world = quat_to_rotation(g.rotation).col(v.min_index);
    return v;
}

Vec3 gaussian_normal(const Gaussian3D& g) { return flat_view(g).n_world; }

Value loss_scale(Value log_scale) {
    if (log_scale.cols() != 3 || log_scale.rows() == 0) throw ContractViolation("loss_scale: expected [G x 3] scales");
    const Value s = diff::exp(log_scale);
    const Value m = diff::min(diff::min(diff::slice_cols(s, 0, 1), diff::slice_cols(s, 1, 1)), diff::slice_cols(s, 2, 1));
    return diff::mean(m);
}

double loss_scale(const std::vector<Gaussian3D>& gaussians) {
    if (gaussians.empty()) throw ContractViolation("loss_scale: empty Gaussian set");
    double acc = 0.0;
    for (const Gaussian3D& g : gaussians) acc += g.scale().minCoeff();
    return acc / static_cast<double>(gaussians.size());
}

AlignLoss loss_align(Value rotation, Value log_scale, Value gradient) {
    const int n = rotation.rows();
    if (rotation.cols() != 4 || log_scale.rows() != n || log_scale.cols() != 3 || gradient.rows() != n ||
        gradient.cols() != 3)
        throw ContractViolation("loss_align: expected rotation [G x 4], log_scale and gradient [G x 3]");
    AlignLoss out;
    Tape& tape = *rotation.tape();
    const Tensor& g = gradient.tensor();
    const Tensor& ls = log_scale.tensor();
    std::vector<int> rows;
    double norm_sum = 0.0;
    for (int i = 0; i < n; ++i) {
        const double len = std::sqrt(g(i, 0) * g(i, 0) + g(i, 1) * g(i, 1) + g(i, 2) * g(i, 2));
        if (len < kMinAlignGradient) {
            ++out.skipped;
            continue;
        }
        rows.push_back(i);
        norm_sum += len;
    }
    out.used = static_cast<int>(rows.size());
    if (rows.empty()) {
        out.value = tape.constant(0.0);
        return out;
    }
    out.mean_grad_norm = norm_sum / out.used;

    std::array<Tensor, 3> mask;
    for (Tensor& m : mask) m = Tensor(out.used, 1);
    for (int r = 0; r < out.used; ++r) {
        const int i = rows[static_cast<std::size_t>(r)];
        const Vec3 s(std::exp(ls(i, 0)), std::exp(ls(i, 1)), std::exp(ls(i, 2)));
        mask[static_cast<std::size_t>(min_scale_axis(s))](r, 0) = 1.0;
    }
    const Value q = diff::gather_rows(rotation, rows);
    const auto rot = gmath::rotation_from_quaternion(diff::slice_cols(q, 0, 1), diff::slice_cols(q, 1, 1),
                                                     diff::slice_cols(q, 2, 1), diff::slice_cols(q, 3, 1));
    std::array<Value, 3> m;
    for (int k = 0; k < 3; ++k) m[static_cast<std::size_t>(k)] = tape.constant(mask[static_cast<std::size_t>(k)]);
    std::array<Value, 3> nw;
    for (int row = 0; row < 3; ++row)
        nw[static_cast<std::size_t>(row)] = m[0] * rot[static_cast<std::size_t>(row * 3)] +
                                            m[1] * rot[static_cast<std::size_t>(row * 3 + 1)] +
                                            m[2] * rot[static_cast<std::size_t>(row * 3 + 2)];
    const Value gv = diff::gather_rows(gradient, rows);
    const Value gx = diff::slice_cols(gv, 0, 1), gy = diff::slice_cols(gv, 1, 1), gz = diff::slice_cols(gv, 2, 1);
    const Value inv = 1.0 / diff::sqrt(gx * gx + gy * gy + gz * gz);
    const Value cosine = (nw[0] * gx + nw[1] * gy + nw[2] * gz) * inv;
    out.value = diff::mean(diff::abs(1.0 - diff::abs(cosine)));
    return out;
}

AlignLoss loss_align(Value rotation, Value log_scale, const Tensor& positions, const ScalarField& field, double eps) {
    if (positions.cols != 3 || positions.rows != rotation.rows()) throw ContractViolation("loss_align: positions must be [G x 3]");
    Tensor g(positions.rows, 3);
    for (int i = 0; i < positions.rows; ++i) {
        const Vec3 d = sdf_gradient(field, Vec3(positions(i, 0), positions(i, 1), positions(i, 2)), eps);
        for (int c = 0; c < 3; ++c) g(i, c) = d[c];
    }
    return loss_align(rotation, log_scale, rotation.tape()->constant(std::move(g)));
}

AlignLoss loss_align(Value rotation, Value log_scale, const Tensor& positions, const SdfNetwork::Bound& net, double eps,
                     bool stop_field_grad) {
    if (positions.cols != 3 || positions.rows != rotation.rows()) throw ContractViolation("loss_align: positions must be [G x 3]");
    if (positions.rows == 0) throw ContractViolation("loss_align: empty Gaussian set");
    Value g = net.stencil(positions, eps).gradient;
    if (stop_field_grad) g = diff::stop_gradient(g);
    return loss_align(rotation, log_scale, g);
}

double loss_align(const std::vector<Gaussian3D>& gaussians, const ScalarField& field, double eps) {
    double acc = 0.0;
    int used = 0;
    for (const Gaussian3D& g : gaussians) {
        const Vec3 d = sdf_gradient(field, g.position, eps);
        const double len = d.norm();
        if (len < kMinAlignGradient) continue;
        acc += std::fabs(1.0 - std::fabs(gaussian_normal(g).dot(d) / len));
        ++used;
    }
    return used == 0 ? 0.0 : acc / used;
}

std::vector<Vec3> export_surface_points(const std::vector<Gaussian3D>& gaussians, const ExportConfig& cfg,
                                        const std::vector<Vec3>& extra) {
    std::vector<Vec3> out;
    for (const Gaussian3D& g : gaussians)
        if (g.opacity() >= cfg.min_opacity && g.scale().minCoeff() <= cfg.max_min_scale) out.push_back(g.position);
    out.insert(out.end(), extra.begin(), extra.end());
    return out;
}

}  // namespace neusg
