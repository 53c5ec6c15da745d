// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <numbers>

namespace urbansplat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Matrix<double, 4, 1, Eigen::DontAlign>;
using Mat2 = Eigen::Matrix<double, 2, 2, Eigen::DontAlign>;
using Mat3 = Eigen::Matrix3d;
using Mat23 = Eigen::Matrix<double, 2, 3>;

constexpr double kPi = std::numbers::pi;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Rotation about the local z (up) axis.
inline Mat3 rotation_z(double angle)
{
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    Mat3 r;
    r << c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0;
    return r;
}

/// d/dangle of rotation_z(angle).
inline Mat3 rotation_z_derivative(double angle)
{
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    Mat3 r;
    r << -s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0;
    return r;
}

/// Quaternions are stored scalar-first: (w, x, y, z).
Vec4 normalize_quaternion(const Vec4& q);

/// Rotation matrix of a unit quaternion (no normalization performed).
Mat3 quaternion_to_rotation(const Vec4& unit_q);

/// Inverse of quaternion_to_rotation for proper rotations.
Vec4 rotation_to_quaternion(const Mat3& r);

/// Pulls a gradient on the rotation matrix back onto the raw (unnormalized)
/// quaternion, including the normalization step.
Vec4 rotation_gradient_to_quaternion(const Vec4& raw_q, const Mat3& grad_r);

/// True when `r` is orthonormal with determinant +1 within `tol`.
bool is_rotation(const Mat3& r, double tol = 1e-5);

/// Heading of a rotation about world z (atan2 of the rotated x axis).
inline double yaw_of(const Mat3& r) { return std::atan2(r(1, 0), r(0, 0)); }

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a)
{
    a = std::fmod(a + kPi, 2.0 * kPi);
    if (a <= 0.0) {
        a += 2.0 * kPi;
    }
    return a - kPi;
}

} // namespace urbansplat
