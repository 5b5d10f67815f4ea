// SPDX-License-Identifier: Apache-2.0
//
// Gaussian splatting primitive: rotation/scale covariance, density,
// perspective (EWA) projection of the covariance, spherical-harmonics color.
//
// The math is written once as templates over the scalar type. Instantiated
// with double it is the reference evaluator; instantiated with diff::Value
// (columns of a batch, one row per Gaussian) it records the same arithmetic
// on a tape, so both paths agree bit for bit.

#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "neusg/camera.hpp"
#include "neusg/diff.hpp"

namespace neusg {

struct Gaussian3D {
    Vec3 position = Vec3::Zero();
    /// Quaternion (w, x, y, z). Kept unit length by the optimizer.
    std::array<double, 4> rotation{1.0, 0.0, 0.0, 0.0};
    Vec3 log_scale = Vec3::Zero();
    double opacity_logit = 0.0;
    /// Channel-major SH coefficients: sh[c * k + i], c in {r, g, b}, k = (degree + 1)^2.
    std::vector<double> sh;

    [[nodiscard]] Vec3 scale() const {
        return {std::exp(log_scale[0]), std::exp(log_scale[1]), std::exp(log_scale[2])};
    }
    [[nodiscard]] double opacity() const;
    [[nodiscard]] int sh_coeffs() const { return static_cast<int>(sh.size() / 3); }
};

constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

/// Floor applied to scales when Sigma must be inverted.
inline constexpr double kScaleFloor = 1e-6;
/// Screen-space low-pass dilation added to the projected covariance diagonal (px^2).
inline constexpr double kLowPassDilation = 0.3;
/// Centers closer than this to the image plane are culled.
inline constexpr double kNearPlane = 0.01;

Mat3 quat_to_rotation(const std::array<double, 4>& q);
Mat3 covariance_3d(const Gaussian3D& g);
double gaussian_density(const Gaussian3D& g, const Vec3& x);

/// J W Sigma W^T J^T truncated to 2x2, for an explicit 2x3 Jacobian (no dilation).
Eigen::Matrix2d project_covariance_with_jacobian(const Mat3& sigma, const Mat3& view_rotation,
                                                 const Eigen::Matrix<double, 2, 3>& jacobian);
/// Perspective Jacobian of the pinhole projection at camera-space point t.
Eigen::Matrix<double, 2, 3> perspective_jacobian(const Camera& cam, const Vec3& t_cam);
/// Projected, dilated 2D covariance; nullopt when the center is behind the near plane.
std::optional<Eigen::Matrix2d> project_covariance(const Gaussian3D& g, const Camera& cam);

/// View-dependent color for a unit direction, clamped to [0, 1] per channel.
Vec3 sh_color(const std::vector<double>& sh, int degree, const Vec3& view_dir);

namespace gmath {

using diff::clamp_zero;
using diff::sigmoid;
using std::exp;
using std::sqrt;

template <class S>
using Vec = std::array<S, 3>;
/// Row-major 3x3.
template <class S>
using Mat = std::array<S, 9>;
/// Symmetric 3x3: xx, xy, xz, yy, yz, zz.
template <class S>
using Sym3 = std::array<S, 6>;

inline double as_scalar(double v) { return v; }

template <class S>
Mat<S> rotation_from_quaternion(const S& qw, const S& qx, const S& qy, const S& qz) {
    const S inv = 1.0 / sqrt(qw * qw + qx * qx + qy * qy + qz * qz);
    const S w = qw * inv;
    const S x = qx * inv;
    const S y = qy * inv;
    const S z = qz * inv;
    return {1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z),       2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),       1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),       2.0 * (y * z + w * x),       1.0 - 2.0 * (x * x + y * y)};
}

/// Sigma = R S S^T R^T.
template <class S>
Sym3<S> covariance(const Mat<S>& r, const Vec<S>& s) {
    const S s0 = s[0] * s[0];
    const S s1 = s[1] * s[1];
    const S s2 = s[2] * s[2];
    auto entry = [&](int i, int j) { return r[i * 3] * r[j * 3] * s0 + r[i * 3 + 1] * r[j * 3 + 1] * s1 + r[i * 3 + 2] * r[j * 3 + 2] * s2; };
    return {entry(0, 0), entry(0, 1), entry(0, 2), entry(1, 1), entry(1, 2), entry(2, 2)};
}

template <class S>
Vec<S> to_camera(const Camera& cam, const S& px, const S& py, const S& pz) {
    const Mat3& w = cam.rotation;
    return {w(0, 0) * px + w(0, 1) * py + w(0, 2) * pz + cam.translation[0],
            w(1, 0) * px + w(1, 1) * py + w(1, 2) * pz + cam.translation[1],
            w(2, 0) * px + w(2, 1) * py + w(2, 2) * pz + cam.translation[2]};
}

/// Pixel coordinates of a camera-space point.
template <class S>
std::array<S, 2> screen(const Vec<S>& t, const Camera& cam) {
    const S inv_z = 1.0 / t[2];
    return {cam.fx * t[0] * inv_z + cam.cx, cam.fy * t[1] * inv_z + cam.cy};
}

/// Upper-left 2x2 of J W Sigma W^T J^T as (a, b, c) = (xx, xy, yy), undilated.
template <class S>
std::array<S, 3> project(const Sym3<S>& cov, const Vec<S>& t, const Camera& cam) {
    const S inv_z = 1.0 / t[2];
    const S j00 = cam.fx * inv_z;
    const S j02 = -cam.fx * t[0] * inv_z * inv_z;
    const S j11 = cam.fy * inv_z;
    const S j12 = -cam.fy * t[1] * inv_z * inv_z;
    const Mat3& w = cam.rotation;
    // T = J W (2x3).
    const Vec<S> t0{j00 * w(0, 0) + j02 * w(2, 0), j00 * w(0, 1) + j02 * w(2, 1), j00 * w(0, 2) + j02 * w(2, 2)};
    const Vec<S> t1{j11 * w(1, 0) + j12 * w(2, 0), j11 * w(1, 1) + j12 * w(2, 1), j11 * w(1, 2) + j12 * w(2, 2)};
    auto sigma_times = [&](const Vec<S>& v) {
        return Vec<S>{cov[0] * v[0] + cov[1] * v[1] + cov[2] * v[2], cov[1] * v[0] + cov[3] * v[1] + cov[4] * v[2],
                      cov[2] * v[0] + cov[4] * v[1] + cov[5] * v[2]};
    };
    const Vec<S> m0 = sigma_times(t0);
    const Vec<S> m1 = sigma_times(t1);
    return {t0[0] * m0[0] + t0[1] * m0[1] + t0[2] * m0[2], t0[0] * m1[0] + t0[1] * m1[1] + t0[2] * m1[2],
            t1[0] * m1[0] + t1[1] * m1[1] + t1[2] * m1[2]};
}

/// Inverse of the dilated 2x2 covariance, as (a, b, c) of the conic a dx^2 + 2 b dx dy + c dy^2.
template <class S>
std::array<S, 3> conic(const std::array<S, 3>& cov2d) {
    const S a = cov2d[0] + kLowPassDilation;
    const S c = cov2d[2] + kLowPassDilation;
    const S b = cov2d[1];
    const S inv_det = 1.0 / (a * c - b * b);
    return {c * inv_det, -b * inv_det, a * inv_det};
}

inline constexpr double kShC0 = 0.28209479177387814;
inline constexpr double kShC1 = 0.4886025119029199;
inline constexpr double kShC2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                                    -1.0925484305920792, 0.5462742152960396};
inline constexpr double kShC3[7] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
                                    -0.4570457994644658, 1.445305721320277, -0.5900435899266435};

/// Unclamped real-SH expansion (plus 0.5 offset) for one channel. coeff(i) yields the i-th coefficient.
template <class S, class D, class Coeff>
S sh_channel(int degree, const D& x, const D& y, const D& z, Coeff&& coeff) {
    S result = kShC0 * coeff(0);
    if (degree >= 1) result = result - kShC1 * y * coeff(1) + kShC1 * z * coeff(2) - kShC1 * x * coeff(3);
    if (degree >= 2) {
        const D xx = x * x;
        const D yy = y * y;
        const D zz = z * z;
        result = result + kShC2[0] * (x * y) * coeff(4) + kShC2[1] * (y * z) * coeff(5) +
                 kShC2[2] * (2.0 * zz - xx - yy) * coeff(6) + kShC2[3] * (x * z) * coeff(7) +
                 kShC2[4] * (xx - yy) * coeff(8);
        if (degree >= 3) {
            result = result + kShC3[0] * y * (3.0 * xx - yy) * coeff(9) + kShC3[1] * (x * y) * z * coeff(10) +
                     kShC3[2] * y * (4.0 * zz - xx - yy) * coeff(11) +
                     kShC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy) * coeff(12) +
                     kShC3[4] * x * (4.0 * zz - xx - yy) * coeff(13) + kShC3[5] * z * (xx - yy) * coeff(14) +
                     kShC3[6] * x * (xx - 3.0 * yy) * coeff(15);
        }
    }
    return result + 0.5;
}

inline double clamp01(double v) {
    const double lo = clamp_zero(v);
    return lo <= 1.0 ? lo : 1.0;
}

inline diff::Value clamp01(diff::Value v) { return diff::min(diff::clamp_zero(v), 1.0); }

}  // namespace gmath

}  // namespace neusg
