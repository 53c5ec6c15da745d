// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

#include "urbansplat/camera.hpp"

#include "urbansplat/errors.hpp"

#include <string>

namespace urbansplat {

void Camera::validate() const
{
    if (width <= 0 || height <= 0) {
        throw ValidationError("camera: image size must be positive");
    }
    if (!(fx > 0.0) || !(fy > 0.0)) {
        throw ValidationError("camera: focal lengths must be positive");
    }
    if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
        throw ValidationError("camera: principal point outside the image");
    }
    if (!is_rotation(rotation)) {
        throw ValidationError("camera: invalid rotation");
    }
    if (!translation.allFinite() || !(near_clip > 0.0)) {
        throw ValidationError("camera: non-finite translation or non-positive near clip");
    }
}

Camera look_at(int width, int height, double focal, const Vec3& eye, const Vec3& target, const Vec3& up)
{
    const Vec3 forward = (target - eye).normalized();
    const Vec3 right = forward.cross(up);
    if (!(right.norm() > 1e-9)) {
        throw ValidationError("look_at: view direction is parallel to up");
    }
    Camera cam;
    cam.width = width;
    cam.height = height;
    cam.fx = cam.fy = focal;
    cam.cx = width / 2.0;
    cam.cy = height / 2.0;
    cam.rotation.row(0) = right.normalized().transpose();
    cam.rotation.row(2) = forward.transpose();
    cam.rotation.row(1) = cam.rotation.row(2).cross(cam.rotation.row(0));
    cam.translation = -cam.rotation * eye;
    cam.validate();
    return cam;
}

} // namespace urbansplat
