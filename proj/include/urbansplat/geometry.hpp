// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "urbansplat/camera.hpp"
#include "urbansplat/math.hpp"
#include "urbansplat/scene.hpp"

#include <optional>
#include <span>

namespace urbansplat {

/// Screen-space low-pass dilation added to every projected covariance (px^2).
constexpr double kLowPassDilation = 0.3;
/// Points whose normalized image coordinate leaves the image frustum scaled by
/// this factor are culled.
constexpr double kFrustumGuard = 1.3;
/// Highest supported spherical-harmonics band.
constexpr int kMaxShDegree = 3;
/// Added to the degree-0 response so zero coefficients render mid-gray.
constexpr double kShColorOffset = 0.5;

constexpr int sh_basis_count(int degree) { return (degree + 1) * (degree + 1); }

/// R S S^T R^T with S = diag(exp(log_scale)) and R from the normalized quaternion.
Mat3 build_covariance(const Vec3& log_scale, const Vec4& quaternion);

/// Gradient of build_covariance with respect to its inputs. `grad_cov` is the
/// symmetric gradient of the loss with respect to the covariance entries.
void build_covariance_backward(const Vec3& log_scale, const Vec4& quaternion, const Mat3& grad_cov,
                               Vec3& grad_log_scale, Vec4& grad_quaternion);

struct RigidPose {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
};

/// Tracked pose with the learnable correction applied:
/// R' = R_t * Rz(dtheta_t), T' = T_t + dT_t. Throws ValidationError for an
/// out-of-range or invalid frame.
RigidPose effective_pose(const PoseTrack& track, int t);

struct WorldFrame {
    Vec3 mean;
    Mat3 rotation;
};

/// Carries an object-local mean and rotation into the world frame.
WorldFrame object_to_world(const Vec3& local_mean, const Mat3& local_rotation, const RigidPose& pose);

/// cos(i * pi * t / N) for the i-th Fourier term.
inline double fourier_weight(int i, double t, int num_frames)
{
    return std::cos(static_cast<double>(i) * kPi * t / static_cast<double>(num_frames));
}

/// Cosine-series value sum_i f_i cos(i pi t / N).
double eval_fourier(std::span<const double> f, double t, int num_frames);

/// Collapses [k][basis][rgb] Fourier coefficients into [basis][rgb] SH
/// coefficients at timestep t.
void eval_fourier_coeffs(std::span<const double> coeffs, int fourier_k, int basis_count, double t,
                         int num_frames, std::span<double> out);

/// Real spherical-harmonics basis (orthonormal, no Condon-Shortley phase),
/// indexed l*l + l + m. `dir` must be unit length.
void sh_basis(int degree, const Vec3& dir, std::span<double> out);

/// Basis values plus their gradient with respect to the (unit) direction,
/// three entries per basis function.
void sh_basis_with_gradient(int degree, const Vec3& dir, std::span<double> values,
                            std::span<double> gradients);

/// View-dependent color max(0, sum_j z_j Y_j(dir) + 0.5). `coeffs` is
/// [basis][rgb]; `view_dir` need not be normalized but must be non-zero.
Vec3 eval_sh_color(std::span<const double> coeffs, const Vec3& view_dir, int degree);

/// Backward of eval_sh_color. Accumulates into `grad_coeffs` and returns the
/// gradient with respect to the unnormalized view direction.
Vec3 eval_sh_color_backward(std::span<const double> coeffs, const Vec3& view_dir, int degree,
                            const Vec3& grad_color, std::span<double> grad_coeffs);

/// A Gaussian in image space.
struct ProjectedGaussian {
    Vec2 mean2d = Vec2::Zero();
    Mat2 cov2d = Mat2::Identity(); // dilated
    Vec3 conic = Vec3::Zero();     // inverse of cov2d as (a, b, c)
    double view_depth = 0.0;
    int source_index = 0;
};

/// Camera-frame projection of a world Gaussian. Returns nullopt when culled
/// by the near plane or the guard frustum.
std::optional<ProjectedGaussian> project_gaussian(const Vec3& mean, const Mat3& cov,
                                                  const Camera& camera);

/// Undilated screen covariance J W Sigma W^T J^T (used by tests and backward).
Mat2 project_covariance(const Vec3& mean, const Mat3& cov, const Camera& camera);

/// Backward of project_gaussian. `grad_cov2d` is the symmetric gradient with
/// respect to the dilated screen covariance.
void project_gaussian_backward(const Vec3& mean, const Mat3& cov, const Camera& camera,
                               const Vec2& grad_mean2d, const Mat2& grad_cov2d, double grad_depth,
                               Vec3& grad_mean, Mat3& grad_cov);

} // namespace urbansplat
