// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "urbansplat/math.hpp"

namespace urbansplat {

/// Pinhole camera. `rotation`/`translation` map world points into the camera
/// frame (x right, y down, z forward). Pixel (x, y) is sampled at its center
/// (x + 0.5, y + 0.5), so the principal point of a centered camera is (W/2, H/2).
struct Camera {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    int width = 0;
    int height = 0;
    double near_clip = 0.2;

    /// Camera center in world coordinates.
    Vec3 center() const { return -rotation.transpose() * translation; }

    Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }

    /// World-space direction of the ray through pixel coordinate (u, v).
    Vec3 ray_direction(double u, double v) const
    {
        const Vec3 d_cam((u - cx) / fx, (v - cy) / fy, 1.0);
        return rotation.transpose() * d_cam;
    }

    /// Throws ValidationError when intrinsics or extrinsics are malformed.
    void validate() const;
};

/// Centered pinhole camera at `eye` looking at `target`; `up` fixes the roll.
Camera look_at(int width, int height, double focal, const Vec3& eye, const Vec3& target,
               const Vec3& up = Vec3::UnitZ());

} // namespace urbansplat
