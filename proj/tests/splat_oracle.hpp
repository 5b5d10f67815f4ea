// SPDX-License-Identifier: Apache-2.0
//
// Brute-force splat blending shared by the unit and acceptance tests.

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "neusg/rng.hpp"
#include "neusg/splat.hpp"

namespace neusg::oracle {

inline Gaussian3D random_gaussian(Rng& rng, int degree, double spread, double smin, double smax) {
    Gaussian3D g;
    g.position = Vec3(rng.uniform(-spread, spread), rng.uniform(-spread, spread), rng.uniform(-spread, spread));
    g.rotation = {rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    for (int c = 0; c < 3; ++c) g.log_scale[c] = std::log(rng.uniform(smin, smax));
    g.opacity_logit = rng.uniform(-1.0, 1.5);
    const int k = sh_coeff_count(degree);
    g.sh.resize(static_cast<std::size_t>(3 * k));
    for (int i = 0; i < 3 * k; ++i) g.sh[static_cast<std::size_t>(i)] = (i % k == 0 ? 0.8 : 0.1) * rng.uniform(-1, 1);
    return g;
}

// Per-pixel evaluation looping over every Gaussian with explicit transmittance products.
inline Image brute_force(const std::vector<Gaussian3D>& gs, const Camera& cam, const Vec3& bg) {
    struct Splat {
        double z, u, v, a, b, c, op;
        Vec3 color;
        int id;
    };
    std::vector<Splat> splats;
    const Vec3 eye = cam.center();
    for (std::size_t i = 0; i < gs.size(); ++i) {
        const Gaussian3D& g = gs[i];
        const auto t = gmath::to_camera(cam, g.position.x(), g.position.y(), g.position.z());
        if (!(t[2] > kNearPlane)) continue;
        const auto uv = gmath::screen(t, cam);
        const Eigen::Matrix2d m = *project_covariance(g, cam);
        const double inv_det = 1.0 / (m(0, 0) * m(1, 1) - m(0, 1) * m(0, 1));
        const double dx = g.position.x() - eye.x(), dy = g.position.y() - eye.y(), dz = g.position.z() - eye.z();
        const double inv = 1.0 / std::sqrt(dx * dx + dy * dy + dz * dz);
        const Vec3 color = sh_color(g.sh, sh_degree_of(g.sh_coeffs()), Vec3(dx * inv, dy * inv, dz * inv));
        splats.push_back({t[2], uv[0], uv[1], m(1, 1) * inv_det, -m(0, 1) * inv_det, m(0, 0) * inv_det, g.opacity(),
                          color, static_cast<int>(i)});
    }
    std::sort(splats.begin(), splats.end(), [](const Splat& l, const Splat& r) {
        return l.z < r.z || (l.z == r.z && l.id < r.id);
    });
    Image img(cam.width, cam.height);
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            std::vector<double> alpha;
            std::vector<Vec3> color;
            for (const Splat& s : splats) {
                const double dx = x + 0.5 - s.u;
                const double dy = y + 0.5 - s.v;
                const double power = -0.5 * (s.a * dx * dx + s.c * dy * dy) - s.b * dx * dy;
                if (power < -4.5) continue;
                const double al = std::min(0.99, s.op * std::exp(power));
                if (al < 1.0 / 255.0) continue;
                alpha.push_back(al);
                color.push_back(s.color);
            }
            double out[3] = {0, 0, 0};
            for (std::size_t i = 0; i < alpha.size(); ++i) {
                double t = 1.0;
                for (std::size_t j = 0; j < i; ++j) t = t * (1.0 - alpha[j]);
                for (int c = 0; c < 3; ++c) out[c] += color[i][c] * (alpha[i] * t);
            }
            double t = 1.0;
            for (const double al : alpha) t = t * (1.0 - al);
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = out[c] + t * bg[c];
        }
    }
    return img;
}

}  // namespace neusg::oracle
