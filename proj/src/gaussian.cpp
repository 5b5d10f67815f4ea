// SPDX-License-Identifier: Apache-2.0

#include "neusg/gaussian.hpp"

#include <cmath>

#include "neusg/error.hpp"

namespace neusg {

double Gaussian3D::opacity() const { return diff::sigmoid(opacity_logit); }

Mat3 quat_to_rotation(const std::array<double, 4>& q) {
    const double n2 = q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3];
    if (!(n2 > 0.0)) throw DomainError("quat_to_rotation: zero quaternion");
    const auto r = gmath::rotation_from_quaternion(q[0], q[1], q[2], q[3]);
    Mat3 m;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) m(i, j) = r[i * 3 + j];
    return m;
}

namespace {

Mat3 from_sym(const gmath::Sym3<double>& s) {
    Mat3 m;
    m << s[0], s[1], s[2], s[1], s[3], s[4], s[2], s[4], s[5];
    return m;
}

gmath::Sym3<double> cov_of(const Gaussian3D& g, double floor) {
    const auto& q = g.rotation;
    const double n2 = q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3];
    if (!(n2 > 0.0)) throw DomainError("Gaussian3D: zero quaternion");
    const auto r = gmath::rotation_from_quaternion(q[0], q[1], q[2], q[3]);
    const Vec3 s = g.scale();
    return gmath::covariance(r, gmath::Vec<double>{std::max(s[0], floor), std::max(s[1], floor),
                                                   std::max(s[2], floor)});
}

}  // namespace

Mat3 covariance_3d(const Gaussian3D& g) { return from_sym(cov_of(g, 0.0)); }

double gaussian_density(const Gaussian3D& g, const Vec3& x) {
    // Sigma^-1 = R diag(1/s^2) R^T avoids inverting a near-singular matrix.
    const Mat3 r = quat_to_rotation(g.rotation);
    const Vec3 s = g.scale().cwiseMax(kScaleFloor);
    const Vec3 local = r.transpose() * (x - g.position);
    const double q = (local.array() / s.array()).square().sum();
    return std::exp(-0.5 * q);
}

Eigen::Matrix2d project_covariance_with_jacobian(const Mat3& sigma, const Mat3& view_rotation,
                                                 const Eigen::Matrix<double, 2, 3>& jacobian) {
    const Eigen::Matrix<double, 2, 3> t = jacobian * view_rotation;
    return t * sigma * t.transpose();
}

Eigen::Matrix<double, 2, 3> perspective_jacobian(const Camera& cam, const Vec3& t) {
    Eigen::Matrix<double, 2, 3> j;
    j << cam.fx / t.z(), 0.0, -cam.fx * t.x() / (t.z() * t.z()), 0.0, cam.fy / t.z(),
        -cam.fy * t.y() / (t.z() * t.z());
    return j;
}

std::optional<Eigen::Matrix2d> project_covariance(const Gaussian3D& g, const Camera& cam) {
    const auto t = gmath::to_camera(cam, g.position.x(), g.position.y(), g.position.z());
    if (!(t[2] > kNearPlane)) return std::nullopt;
    const auto c = gmath::project(cov_of(g, 0.0), t, cam);
    Eigen::Matrix2d m;
    m << c[0] + kLowPassDilation, c[1], c[1], c[2] + kLowPassDilation;
    return m;
}

Vec3 sh_color(const std::vector<double>& sh, int degree, const Vec3& d) {
    const int k = static_cast<int>(sh.size() / 3);
    if (k < sh_coeff_count(degree)) throw ContractViolation("sh_color: too few coefficients");
    Vec3 out;
    for (int c = 0; c < 3; ++c) {
        const double v = gmath::sh_channel<double>(degree, d.x(), d.y(), d.z(),
                                                   [&](int i) { return sh[static_cast<std::size_t>(c * k + i)]; });
        out[c] = gmath::clamp01(v);
    }
    return out;
}

}  // namespace neusg
