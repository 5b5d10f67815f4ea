// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

namespace neusg {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Pinhole camera. Pixel (i, j) covers [i, i+1) x [j, j+1); rays go through
/// pixel centers. Camera frame: +x right, +y down, +z forward.
struct Camera {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 0;
    int height = 0;
    /// World-to-camera transform: x_cam = rotation * x_world + translation.
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    [[nodiscard]] Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
    [[nodiscard]] Vec3 center() const { return -rotation.transpose() * translation; }

    /// World-space unit direction of the ray through pixel coordinates (u, v).
    [[nodiscard]] Vec3 ray_direction(double u, double v) const;

    /// Throws ContractViolation unless the rotation is orthonormal with det +1.
    void validate(double tol = 1e-9) const;

    static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fx, double fy,
                          double cx, double cy, int width, int height);
};

}  // namespace neusg
