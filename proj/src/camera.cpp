// SPDX-License-Identifier: Apache-2.0

#include "neusg/camera.hpp"

#include <cmath>

#include "neusg/error.hpp"

namespace neusg {

Vec3 Camera::ray_direction(double u, double v) const {
    const Vec3 d_cam((u - cx) / fx, (v - cy) / fy, 1.0);
    return (rotation.transpose() * d_cam).normalized();
}

void Camera::validate(double tol) const {
    const double ortho = (rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
    if (!(ortho <= tol)) throw ContractViolation("camera rotation is not orthonormal");
    if (!(std::fabs(rotation.determinant() - 1.0) <= tol)) throw ContractViolation("camera rotation has det != +1");
    if (width <= 0 || height <= 0) throw ContractViolation("camera has empty image");
    if (!(fx > 0.0) || !(fy > 0.0)) throw ContractViolation("camera focal length must be positive");
}

Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fx, double fy, double cx,
                       double cy, int width, int height) {
    const Vec3 forward = (target - eye).normalized();
    Vec3 right = forward.cross(up);
    if (right.norm() < 1e-12) right = forward.cross(Vec3::UnitX());
    right.normalize();
    // +y points down in the image.
    const Vec3 down = forward.cross(right);
    Camera cam;
    cam.fx = fx;
    cam.fy = fy;
    cam.cx = cx;
    cam.cy = cy;
    cam.width = width;
    cam.height = height;
    cam.rotation.row(0) = right.transpose();
    cam.rotation.row(1) = down.transpose();
    cam.rotation.row(2) = forward.transpose();
    cam.translation = -cam.rotation * eye;
    return cam;
}

}  // namespace neusg
