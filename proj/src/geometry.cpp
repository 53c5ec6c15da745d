// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

#include "urbansplat/geometry.hpp"

#include "urbansplat/errors.hpp"

#include <array>
#include <cassert>
#include <string>

namespace urbansplat {

namespace {

constexpr double kY00 = 0.28209479177387814;  // 1/(2 sqrt(pi))
constexpr double kY1 = 0.4886025119029199;    // sqrt(3/(4 pi))
constexpr double kY2a = 1.0925484305920792;   // sqrt(15/(4 pi))
constexpr double kY2b = 0.31539156525252005;  // sqrt(5/(16 pi))
constexpr double kY2c = 0.5462742152960396;   // sqrt(15/(16 pi))
constexpr double kY3a = 0.5900435899266435;   // sqrt(35/(32 pi))
constexpr double kY3b = 2.890611442640554;    // sqrt(105/(4 pi))
constexpr double kY3c = 0.4570457994644658;   // sqrt(21/(32 pi))
constexpr double kY3d = 0.3731763325901154;   // sqrt(7/(16 pi))
constexpr double kY3e = 1.445305721320277;    // sqrt(105/(16 pi))

Mat23 projection_jacobian(const Vec3& p, const Camera& cam)
{
    const double iz = 1.0 / p.z();
    const double iz2 = iz * iz;
    Mat23 j;
    j << cam.fx * iz, 0.0, -cam.fx * p.x() * iz2, 0.0, cam.fy * iz, -cam.fy * p.y() * iz2;
    return j;
}

} // namespace

Mat3 build_covariance(const Vec3& log_scale, const Vec4& quaternion)
{
    const Mat3 r = quaternion_to_rotation(normalize_quaternion(quaternion));
    const Mat3 m = r * log_scale.array().exp().matrix().asDiagonal();
    Mat3 cov;
    for (int i = 0; i < 3; ++i) {
        for (int j = i; j < 3; ++j) {
            cov(i, j) = cov(j, i) = m.row(i).dot(m.row(j));
        }
    }
    return cov;
}

void build_covariance_backward(const Vec3& log_scale, const Vec4& quaternion, const Mat3& grad_cov,
                               Vec3& grad_log_scale, Vec4& grad_quaternion)
{
    const Mat3 r = quaternion_to_rotation(normalize_quaternion(quaternion));
    const Vec3 s = log_scale.array().exp();
    const Mat3 m = r * s.asDiagonal();
    const Mat3 grad_m = 2.0 * grad_cov * m;
    const Mat3 grad_r = grad_m * s.asDiagonal();
    for (int k = 0; k < 3; ++k) {
        grad_log_scale[k] = grad_m.col(k).dot(r.col(k)) * s[k];
    }
    grad_quaternion = rotation_gradient_to_quaternion(quaternion, grad_r);
}

RigidPose effective_pose(const PoseTrack& track, int t)
{
    if (t < 0 || t >= track.frame_count()) {
        throw ValidationError("effective_pose: frame " + std::to_string(t) + " out of range");
    }
    if (!track.is_valid(t)) {
        throw ValidationError("effective_pose: frame " + std::to_string(t) + " is not tracked");
    }
    const auto i = static_cast<std::size_t>(t);
    return {track.rotations[i] * rotation_z(track.delta_yaws[i]),
            track.translations[i] + track.delta_translations[i]};
}

WorldFrame object_to_world(const Vec3& local_mean, const Mat3& local_rotation, const RigidPose& pose)
{
    return {pose.rotation * local_mean + pose.translation, pose.rotation * local_rotation};
}

double eval_fourier(std::span<const double> f, double t, int num_frames)
{
    double z = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        z += f[i] * fourier_weight(static_cast<int>(i), t, num_frames);
    }
    return z;
}

void eval_fourier_coeffs(std::span<const double> coeffs, int fourier_k, int basis_count, double t,
                         int num_frames, std::span<double> out)
{
    const std::size_t width = static_cast<std::size_t>(basis_count) * 3;
    assert(out.size() == width);
    for (std::size_t j = 0; j < width; ++j) {
        out[j] = 0.0;
    }
    for (int i = 0; i < fourier_k; ++i) {
        const double w = fourier_weight(i, t, num_frames);
        const double* f = coeffs.data() + static_cast<std::size_t>(i) * width;
        for (std::size_t j = 0; j < width; ++j) {
            out[j] += f[j] * w;
        }
    }
}

void sh_basis(int degree, const Vec3& d, std::span<double> out)
{
    const double x = d.x(), y = d.y(), z = d.z();
    out[0] = kY00;
    if (degree < 1) {
        return;
    }
    out[1] = kY1 * y;
    out[2] = kY1 * z;
    out[3] = kY1 * x;
    if (degree < 2) {
        return;
    }
    const double xx = x * x, yy = y * y, zz = z * z;
    out[4] = kY2a * x * y;
    out[5] = kY2a * y * z;
    out[6] = kY2b * (2.0 * zz - xx - yy);
    out[7] = kY2a * x * z;
    out[8] = kY2c * (xx - yy);
    if (degree < 3) {
        return;
    }
    out[9] = kY3a * y * (3.0 * xx - yy);
    out[10] = kY3b * x * y * z;
    out[11] = kY3c * y * (4.0 * zz - xx - yy);
    out[12] = kY3d * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    out[13] = kY3c * x * (4.0 * zz - xx - yy);
    out[14] = kY3e * z * (xx - yy);
    out[15] = kY3a * x * (xx - 3.0 * yy);
}

void sh_basis_with_gradient(int degree, const Vec3& d, std::span<double> v, std::span<double> g)
{
    sh_basis(degree, d, v);
    const double x = d.x(), y = d.y(), z = d.z();
    const auto set = [&](int j, double gx, double gy, double gz) {
        g[3 * j] = gx;
        g[3 * j + 1] = gy;
        g[3 * j + 2] = gz;
    };
    set(0, 0.0, 0.0, 0.0);
    if (degree < 1) {
        return;
    }
    set(1, 0.0, kY1, 0.0);
    set(2, 0.0, 0.0, kY1);
    set(3, kY1, 0.0, 0.0);
    if (degree < 2) {
        return;
    }
    set(4, kY2a * y, kY2a * x, 0.0);
    set(5, 0.0, kY2a * z, kY2a * y);
    set(6, -2.0 * kY2b * x, -2.0 * kY2b * y, 4.0 * kY2b * z);
    set(7, kY2a * z, 0.0, kY2a * x);
    set(8, 2.0 * kY2c * x, -2.0 * kY2c * y, 0.0);
    if (degree < 3) {
        return;
    }
    const double xx = x * x, yy = y * y, zz = z * z;
    set(9, kY3a * 6.0 * x * y, kY3a * (3.0 * xx - 3.0 * yy), 0.0);
    set(10, kY3b * y * z, kY3b * x * z, kY3b * x * y);
    set(11, kY3c * (-2.0 * x * y), kY3c * (4.0 * zz - xx - 3.0 * yy), kY3c * 8.0 * y * z);
    set(12, kY3d * (-6.0 * x * z), kY3d * (-6.0 * y * z), kY3d * (6.0 * zz - 3.0 * xx - 3.0 * yy));
    set(13, kY3c * (4.0 * zz - 3.0 * xx - yy), kY3c * (-2.0 * x * y), kY3c * 8.0 * x * z);
    set(14, kY3e * 2.0 * x * z, -kY3e * 2.0 * y * z, kY3e * (xx - yy));
    set(15, kY3a * (3.0 * xx - 3.0 * yy), kY3a * (-6.0 * x * y), 0.0);
}

Vec3 eval_sh_color(std::span<const double> coeffs, const Vec3& view_dir, int degree)
{
    const double n = view_dir.norm();
    if (!(n > 0.0)) {
        throw ValidationError("eval_sh_color: zero view direction");
    }
    const Vec3 d = view_dir / n;
    std::array<double, 16> basis{};
    const int count = sh_basis_count(degree);
    sh_basis(degree, d, basis);
    Vec3 c = Vec3::Constant(kShColorOffset);
    for (int j = 0; j < count; ++j) {
        c.x() += basis[j] * coeffs[3 * j];
        c.y() += basis[j] * coeffs[3 * j + 1];
        c.z() += basis[j] * coeffs[3 * j + 2];
    }
    return c.cwiseMax(0.0);
}

Vec3 eval_sh_color_backward(std::span<const double> coeffs, const Vec3& view_dir, int degree,
                            const Vec3& grad_color, std::span<double> grad_coeffs)
{
    const double n = view_dir.norm();
    const Vec3 d = view_dir / n;
    std::array<double, 16> basis{};
    std::array<double, 48> dbasis{};
    const int count = sh_basis_count(degree);
    sh_basis_with_gradient(degree, d, basis, dbasis);

    Vec3 raw = Vec3::Constant(kShColorOffset);
    for (int j = 0; j < count; ++j) {
        for (int ch = 0; ch < 3; ++ch) {
            raw[ch] += basis[j] * coeffs[3 * j + ch];
        }
    }
    // Clamped channels pass no gradient.
    Vec3 g = grad_color;
    for (int ch = 0; ch < 3; ++ch) {
        if (raw[ch] < 0.0) {
            g[ch] = 0.0;
        }
    }
    Vec3 grad_d = Vec3::Zero();
    for (int j = 0; j < count; ++j) {
        double s = 0.0;
        for (int ch = 0; ch < 3; ++ch) {
            grad_coeffs[3 * j + ch] += g[ch] * basis[j];
            s += g[ch] * coeffs[3 * j + ch];
        }
        grad_d += s * Vec3(dbasis[3 * j], dbasis[3 * j + 1], dbasis[3 * j + 2]);
    }
    return (grad_d - grad_d.dot(d) * d) / n;
}

Mat2 project_covariance(const Vec3& mean, const Mat3& cov, const Camera& camera)
{
    const Vec3 p = camera.to_camera(mean);
    const Mat23 j = projection_jacobian(p, camera);
    const Mat3 cov_cam = camera.rotation * cov * camera.rotation.transpose();
    return j * cov_cam * j.transpose();
}

std::optional<ProjectedGaussian> project_gaussian(const Vec3& mean, const Mat3& cov,
                                                  const Camera& camera)
{
    const Vec3 p = camera.to_camera(mean);
    if (!(p.z() > camera.near_clip)) {
        return std::nullopt;
    }
    const double tx = p.x() / p.z();
    const double ty = p.y() / p.z();
    const double left = -camera.cx / camera.fx;
    const double right = (camera.width - camera.cx) / camera.fx;
    const double top = -camera.cy / camera.fy;
    const double bottom = (camera.height - camera.cy) / camera.fy;
    if (tx < kFrustumGuard * left || tx > kFrustumGuard * right || ty < kFrustumGuard * top ||
        ty > kFrustumGuard * bottom) {
        return std::nullopt;
    }

    const Mat23 j = projection_jacobian(p, camera);
    const Mat3 cov_cam = camera.rotation * cov * camera.rotation.transpose();
    Mat2 c2 = j * cov_cam * j.transpose();
    c2(0, 1) = c2(1, 0) = 0.5 * (c2(0, 1) + c2(1, 0));
    c2(0, 0) += kLowPassDilation;
    c2(1, 1) += kLowPassDilation;

    ProjectedGaussian out;
    out.mean2d = {camera.fx * tx + camera.cx, camera.fy * ty + camera.cy};
    out.cov2d = c2;
    out.view_depth = p.z();
    const double det = c2(0, 0) * c2(1, 1) - c2(0, 1) * c2(0, 1);
    if (det > 0.0) {
        out.conic = {c2(1, 1) / det, -c2(0, 1) / det, c2(0, 0) / det};
    }
    return out;
}

void project_gaussian_backward(const Vec3& mean, const Mat3& cov, const Camera& camera,
                               const Vec2& grad_mean2d, const Mat2& grad_cov2d, double grad_depth,
                               Vec3& grad_mean, Mat3& grad_cov)
{
    const Mat3& w = camera.rotation;
    const Vec3 p = camera.to_camera(mean);
    const Mat23 j = projection_jacobian(p, camera);
    const Mat3 cov_cam = w * cov * w.transpose();

    const Eigen::Matrix2d gs = grad_cov2d;
    const Mat3 grad_cov_cam = j.transpose() * gs * j;
    grad_cov = w.transpose() * grad_cov_cam * w;

    const Mat23 grad_j = 2.0 * gs * j * cov_cam;
    Vec3 grad_p = j.transpose() * grad_mean2d;
    grad_p.z() += grad_depth;

    const double iz = 1.0 / p.z();
    const double iz2 = iz * iz;
    const double iz3 = iz2 * iz;
    grad_p.x() += grad_j(0, 2) * (-camera.fx * iz2);
    grad_p.y() += grad_j(1, 2) * (-camera.fy * iz2);
    grad_p.z() += grad_j(0, 0) * (-camera.fx * iz2) + grad_j(0, 2) * (2.0 * camera.fx * p.x() * iz3) +
                  grad_j(1, 1) * (-camera.fy * iz2) + grad_j(1, 2) * (2.0 * camera.fy * p.y() * iz3);
    grad_mean = w.transpose() * grad_p;
}

} // namespace urbansplat
