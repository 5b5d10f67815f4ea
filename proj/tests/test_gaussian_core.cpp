// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>

#include "doctest.h"
#include "neusg/gaussian.hpp"
#include "neusg/rng.hpp"

using namespace neusg;

namespace {

std::array<double, 4> random_quat(Rng& rng) {
    std::array<double, 4> q{};
    double n = 0.0;
    for (double& v : q) {
        v = rng.normal();
        n += v * v;
    }
    for (double& v : q) v /= std::sqrt(n);
    return q;
}

Gaussian3D random_gaussian(Rng& rng, int degree = 1) {
    Gaussian3D g;
    g.position = Vec3(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
    g.rotation = random_quat(rng);
    g.log_scale = Vec3(std::log(rng.uniform(0.02, 0.3)), std::log(rng.uniform(0.02, 0.3)),
                       std::log(rng.uniform(0.02, 0.3)));
    g.opacity_logit = rng.uniform(-2, 2);
    g.sh.resize(static_cast<std::size_t>(3 * sh_coeff_count(degree)));
    for (double& v : g.sh) v = rng.uniform(-1, 1);
    return g;
}

// Inverse by cofactors, independent of Eigen's LU.
Mat3 cramer_inverse(const Mat3& m) {
    Mat3 c;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            const int i1 = (i + 1) % 3, i2 = (i + 2) % 3, j1 = (j + 1) % 3, j2 = (j + 2) % 3;
            c(j, i) = m(i1, j1) * m(i2, j2) - m(i1, j2) * m(i2, j1);
        }
    const double det = m(0, 0) * c(0, 0) + m(0, 1) * c(1, 0) + m(0, 2) * c(2, 0);
    return c / det;
}

Camera test_camera() {
    return Camera::look_at(Vec3(0.3, -0.4, -2.0), Vec3::Zero(), Vec3(0, -1, 0), 80, 75, 32, 30, 64, 60);
}

}  // namespace

TEST_CASE("quat_to_rotation examples") {
    CHECK(quat_to_rotation({1, 0, 0, 0}) == Mat3::Identity());
    const Mat3 rx = quat_to_rotation({0, 1, 0, 0});
    CHECK(rx.isApprox(Vec3(1, -1, -1).asDiagonal().toDenseMatrix(), 0.0));
    CHECK_THROWS_AS(quat_to_rotation({0, 0, 0, 0}), DomainError);

    Rng rng(1);
    for (int i = 0; i < 100; ++i) {
        const Mat3 r = quat_to_rotation(random_quat(rng));
        CHECK((r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(r.determinant() == doctest::Approx(1.0).epsilon(1e-12));
    }
    // Non-unit input is normalized.
    CHECK(quat_to_rotation({2, 0, 0, 0}) == Mat3::Identity());
}

TEST_CASE("covariance examples and eigenvalue oracle") {
    Gaussian3D g;
    g.log_scale = Vec3(std::log(1.0), std::log(2.0), std::log(3.0));
    CHECK((covariance_3d(g) - Vec3(1, 4, 9).asDiagonal().toDenseMatrix()).cwiseAbs().maxCoeff() < 1e-12);

    Rng rng(2);
    const double c = 0.37;
    for (int i = 0; i < 20; ++i) {
        Gaussian3D iso;
        iso.rotation = random_quat(rng);
        iso.log_scale = Vec3::Constant(std::log(c));
        CHECK((covariance_3d(iso) - c * c * Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    }
    for (int i = 0; i < 200; ++i) {
        const Gaussian3D r = random_gaussian(rng);
        const Mat3 sigma = covariance_3d(r);
        CHECK((sigma - sigma.transpose()).cwiseAbs().maxCoeff() < 1e-12);
        Eigen::SelfAdjointEigenSolver<Mat3> eig(sigma);
        Vec3 expect = r.scale().array().square();
        std::sort(expect.data(), expect.data() + 3);
        for (int k = 0; k < 3; ++k) CHECK(std::fabs(eig.eigenvalues()[k] - expect[k]) < 1e-10);
        const double s = r.scale().prod();
        CHECK(std::fabs(sigma.determinant() - s * s) / (s * s) < 1e-10);
    }
}

TEST_CASE("covariance is invariant under quaternion sign flip") {
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
        Gaussian3D g = random_gaussian(rng);
        Gaussian3D h = g;
        for (double& v : h.rotation) v = -v;
        CHECK(covariance_3d(g) == covariance_3d(h));
    }
}

TEST_CASE("density") {
    Rng rng(4);
    Gaussian3D unit;
    unit.position = Vec3(0.1, 0.2, 0.3);
    CHECK(gaussian_density(unit, unit.position) == 1.0);
    CHECK(gaussian_density(unit, unit.position + Vec3(0, 0.6, 0.8)) == doctest::Approx(std::exp(-0.5)).epsilon(1e-14));
    for (int i = 0; i < 200; ++i) {
        const Gaussian3D g = random_gaussian(rng);
        const Vec3 x = g.position + Vec3(rng.normal(), rng.normal(), rng.normal()) * 0.1;
        const Vec3 d = x - g.position;
        const double expect = std::exp(-0.5 * d.dot(cramer_inverse(covariance_3d(g)) * d));
        CHECK(gaussian_density(g, x) == doctest::Approx(expect).epsilon(1e-10));
    }
    // A fully flattened Gaussian stays finite.
    Gaussian3D flat;
    flat.log_scale = Vec3(0.0, 0.0, -60.0);
    const double v = gaussian_density(flat, Vec3(0.1, 0.0, 1e-7));
    CHECK(std::isfinite(v));
    CHECK(v > 0.0);
    CHECK(v <= 1.0);
}

TEST_CASE("projection with explicit jacobian hook") {
    Rng rng(5);
    const Gaussian3D g = random_gaussian(rng);
    const Mat3 sigma = covariance_3d(g);
    Eigen::Matrix<double, 2, 3> j = Eigen::Matrix<double, 2, 3>::Zero();
    j(0, 0) = 1.0;
    j(1, 1) = 1.0;
    const Eigen::Matrix2d p = project_covariance_with_jacobian(sigma, Mat3::Identity(), j);
    CHECK((p - sigma.topLeftCorner<2, 2>()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("isotropic Gaussian on the optical axis projects to a circle") {
    const Camera cam = Camera::look_at(Vec3(0, 0, -2), Vec3::Zero(), Vec3(0, -1, 0), 100, 100, 32, 32, 64, 64);
    Gaussian3D g;
    const double c = 0.05;
    g.log_scale = Vec3::Constant(std::log(c));
    const auto p = project_covariance(g, cam);
    REQUIRE(p.has_value());
    const double expect = (100 * c / 2.0) * (100 * c / 2.0) + kLowPassDilation;
    CHECK(std::fabs((*p)(0, 0) - expect) < 1e-8);
    CHECK(std::fabs((*p)(1, 1) - expect) < 1e-8);
    CHECK(std::fabs((*p)(0, 1)) < 1e-12);
}

TEST_CASE("projection matches the explicit J W Sigma W^T J^T product") {
    Rng rng(6);
    const Camera cam = test_camera();
    for (int i = 0; i < 100; ++i) {
        const Gaussian3D g = random_gaussian(rng);
        const auto p = project_covariance(g, cam);
        REQUIRE(p.has_value());
        const Vec3 t = cam.to_camera(g.position);
        Eigen::Matrix<double, 2, 3> j;
        j << cam.fx / t.z(), 0, -cam.fx * t.x() / (t.z() * t.z()), 0, cam.fy / t.z(), -cam.fy * t.y() / (t.z() * t.z());
        const Eigen::Matrix<double, 3, 3> full = cam.rotation * covariance_3d(g) * cam.rotation.transpose();
        const Eigen::Matrix2d expect = j * full * j.transpose() + kLowPassDilation * Eigen::Matrix2d::Identity();
        CHECK(((*p) - expect).cwiseAbs().maxCoeff() < 1e-9 * expect.cwiseAbs().maxCoeff());
        CHECK((*p)(0, 1) == (*p)(1, 0));
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(*p);
        CHECK(eig.eigenvalues().minCoeff() >= kLowPassDilation - 1e-9);
    }
}

TEST_CASE("projection is equivariant under a shared rigid transform") {
    Rng rng(7);
    const Camera cam = test_camera();
    for (int i = 0; i < 50; ++i) {
        const Gaussian3D g = random_gaussian(rng);
        const Mat3 q = quat_to_rotation(random_quat(rng));
        const Vec3 shift(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
        // World x -> Q x + shift; camera W' = W Q^T, t' = t - W Q^T shift.
        Camera moved = cam;
        moved.rotation = cam.rotation * q.transpose();
        moved.translation = cam.translation - moved.rotation * shift;
        Gaussian3D h = g;
        h.position = q * g.position + shift;
        const Eigen::Quaterniond qq(q);
        const Eigen::Quaterniond qg(g.rotation[0], g.rotation[1], g.rotation[2], g.rotation[3]);
        const Eigen::Quaterniond qh = qq * qg;
        h.rotation = {qh.w(), qh.x(), qh.y(), qh.z()};
        const auto a = project_covariance(g, cam);
        const auto b = project_covariance(h, moved);
        REQUIRE(a.has_value());
        REQUIRE(b.has_value());
        CHECK(((*a) - (*b)).cwiseAbs().maxCoeff() < 1e-8);
    }
}

TEST_CASE("centers behind the camera are culled") {
    const Camera cam = test_camera();
    Gaussian3D g;
    g.position = cam.center() - 0.5 * cam.rotation.row(2).transpose();
    CHECK_FALSE(project_covariance(g, cam).has_value());
}

namespace {

// Real SH basis written out per band, same sign convention as the renderer.
std::vector<double> basis(const Vec3& d) {
    const double x = d.x(), y = d.y(), z = d.z();
    const double pi = std::numbers::pi;
    return {
        0.5 * std::sqrt(1 / pi),
        -std::sqrt(3 / (4 * pi)) * y,
        std::sqrt(3 / (4 * pi)) * z,
        -std::sqrt(3 / (4 * pi)) * x,
        0.5 * std::sqrt(15 / pi) * x * y,
        -0.5 * std::sqrt(15 / pi) * y * z,
        0.25 * std::sqrt(5 / pi) * (2 * z * z - x * x - y * y),
        -0.5 * std::sqrt(15 / pi) * x * z,
        0.25 * std::sqrt(15 / pi) * (x * x - y * y),
        -0.25 * std::sqrt(35 / (2 * pi)) * y * (3 * x * x - y * y),
        0.5 * std::sqrt(105 / pi) * x * y * z,
        -0.25 * std::sqrt(21 / (2 * pi)) * y * (4 * z * z - x * x - y * y),
        0.25 * std::sqrt(7 / pi) * z * (2 * z * z - 3 * x * x - 3 * y * y),
        -0.25 * std::sqrt(21 / (2 * pi)) * x * (4 * z * z - x * x - y * y),
        0.25 * std::sqrt(105 / pi) * z * (x * x - y * y),
        -0.25 * std::sqrt(35 / (2 * pi)) * x * (x * x - 3 * y * y),
    };
}

}  // namespace

TEST_CASE("sh color") {
    std::vector<double> dc(12, 0.0);
    dc[0] = 0.4;
    dc[4] = -0.2;
    dc[8] = 0.1;
    const Vec3 a = sh_color(dc, 1, Vec3(0, 0, 1));
    const Vec3 b = sh_color(dc, 1, Vec3(0.6, -0.8, 0));
    CHECK(a == b);
    CHECK(a[0] == doctest::Approx(0.4 * gmath::kShC0 + 0.5));

    std::vector<double> zband(12, 0.0);
    zband[2] = 0.3;
    for (double z : {-1.0, -0.3, 0.0, 0.5, 1.0}) {
        const Vec3 d(std::sqrt(1 - z * z), 0, z);
        CHECK(sh_color(zband, 1, d)[0] == doctest::Approx(0.5 + 0.3 * gmath::kShC1 * z).epsilon(1e-14));
    }

    Rng rng(8);
    for (int degree = 0; degree <= 3; ++degree) {
        const int k = sh_coeff_count(degree);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<double> sh(static_cast<std::size_t>(3 * k));
            for (double& v : sh) v = rng.uniform(-0.3, 0.3);
            Vec3 d(rng.normal(), rng.normal(), rng.normal());
            d.normalize();
            for (const Vec3& dir : {d, Vec3(-d)}) {
                const auto y = basis(dir);
                const Vec3 got = sh_color(sh, degree, dir);
                for (int c = 0; c < 3; ++c) {
                    double v = 0.5;
                    for (int i = 0; i < k; ++i) v += y[static_cast<std::size_t>(i)] * sh[static_cast<std::size_t>(c * k + i)];
                    CHECK(got[c] == doctest::Approx(std::clamp(v, 0.0, 1.0)).epsilon(1e-12));
                }
            }
        }
    }
}

TEST_CASE("taped and plain evaluation agree bit for bit") {
    Rng rng(9);
    const Camera cam = test_camera();
    const Gaussian3D g = random_gaussian(rng, 3);
    diff::Tape tape;
    auto leaf = [&](double v) { return tape.leaf(diff::Tensor::scalar(v)); };
    const auto qr = gmath::rotation_from_quaternion(leaf(g.rotation[0]), leaf(g.rotation[1]), leaf(g.rotation[2]),
                                                   leaf(g.rotation[3]));
    const Vec3 s = g.scale();
    const auto cov = gmath::covariance(qr, gmath::Vec<diff::Value>{leaf(s[0]), leaf(s[1]), leaf(s[2])});
    const auto t = gmath::to_camera(cam, leaf(g.position[0]), leaf(g.position[1]), leaf(g.position[2]));
    const auto proj = gmath::project(cov, t, cam);
    const auto p = project_covariance(g, cam);
    REQUIRE(p.has_value());
    CHECK(proj[0].item() + kLowPassDilation == (*p)(0, 0));
    CHECK(proj[1].item() == (*p)(0, 1));
    CHECK(proj[2].item() + kLowPassDilation == (*p)(1, 1));
}
