// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

#include "test_support.hpp"

#include "urbansplat/errors.hpp"
#include "urbansplat/geometry.hpp"

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace urbansplat;
using namespace urbansplat::testing;

namespace {

// Rotation from a quaternion via the axis-angle route, independent of
// quaternion_to_rotation.
Mat3 oracle_rotation(const Vec4& q)
{
    const Vec4 u = q / q.norm();
    return Eigen::Quaterniond(u[0], u[1], u[2], u[3]).toRotationMatrix();
}

Eigen::Matrix4d homogeneous(const Mat3& r, const Vec3& t)
{
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.block<3, 3>(0, 0) = r;
    m.block<3, 1>(0, 3) = t;
    return m;
}

// Real SH from associated Legendre polynomials (no Condon-Shortley phase).
double oracle_sh(int l, int m, const Vec3& d)
{
    const double theta = std::acos(std::clamp(d.z(), -1.0, 1.0));
    const double phi = std::atan2(d.y(), d.x());
    const int am = std::abs(m);
    double fact = 1.0;
    for (int i = l - am + 1; i <= l + am; ++i) {
        fact *= i;
    }
    const double k = std::sqrt((2.0 * l + 1.0) / (4.0 * kPi) / fact);
    const double p = std::assoc_legendre(static_cast<unsigned>(l), static_cast<unsigned>(am),
                                         std::cos(theta));
    if (m == 0) {
        return k * p;
    }
    if (m > 0) {
        return std::sqrt(2.0) * k * p * std::cos(am * phi);
    }
    return std::sqrt(2.0) * k * p * std::sin(am * phi);
}

} // namespace

TEST(BuildCovariance, IdentityInputs)
{
    const Mat3 c = build_covariance(Vec3::Zero(), Vec4(1, 0, 0, 0));
    EXPECT_TRUE(c.isApprox(Mat3::Identity(), 1e-15));
}

TEST(BuildCovariance, AxisAlignedScale)
{
    const Mat3 c = build_covariance(Vec3(std::log(2.0), 0, 0), Vec4(1, 0, 0, 0));
    EXPECT_NEAR(c(0, 0), 4.0, 1e-14);
    EXPECT_NEAR(c(1, 1), 1.0, 1e-14);
    EXPECT_NEAR(c(2, 2), 1.0, 1e-14);
    EXPECT_NEAR(c(0, 1), 0.0, 1e-15);
}

TEST(BuildCovariance, MatchesDenseProductAndIsPsd)
{
    std::mt19937_64 rng(7);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        const Vec3 ls(n(rng), n(rng), n(rng));
        const Vec4 q(n(rng), n(rng), n(rng), n(rng));
        const Mat3 r = oracle_rotation(q);
        const Mat3 s = ls.array().exp().matrix().asDiagonal();
        const Mat3 expected = r * s * s.transpose() * r.transpose();
        const Mat3 got = build_covariance(ls, q);
        EXPECT_LE((got - expected).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, expected.norm()));
        EXPECT_LE((got - got.transpose()).cwiseAbs().maxCoeff(), 0.0);
        Eigen::SelfAdjointEigenSolver<Mat3> es(got);
        EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12);
    }
}

TEST(BuildCovariance, ZeroQuaternionRejected)
{
    EXPECT_THROW(build_covariance(Vec3::Zero(), Vec4::Zero()), ValidationError);
}

TEST(EffectivePose, IdentityDelta)
{
    PoseTrack t = PoseTrack::make(3, Vec3::Ones());
    t.rotations[1] = rotation_z(0.3);
    t.translations[1] = Vec3(1, 2, 3);
    const RigidPose p = effective_pose(t, 1);
    EXPECT_EQ(p.rotation, t.rotations[1]);
    EXPECT_EQ(p.translation, t.translations[1]);
}

TEST(EffectivePose, QuarterTurnMapsXToY)
{
    PoseTrack t = PoseTrack::make(1, Vec3::Ones());
    t.delta_yaws[0] = kPi / 2.0;
    const RigidPose p = effective_pose(t, 0);
    EXPECT_TRUE((p.rotation * Vec3::UnitX()).isApprox(Vec3::UnitY(), 1e-15));
}

TEST(EffectivePose, MatchesHomogeneousComposition)
{
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        PoseTrack t = PoseTrack::make(2, Vec3::Ones());
        t.rotations[1] = oracle_rotation(Vec4(n(rng), n(rng), n(rng), n(rng)));
        t.translations[1] = Vec3(n(rng), n(rng), n(rng));
        t.delta_translations[1] = Vec3(n(rng), n(rng), n(rng));
        t.delta_yaws[1] = n(rng);
        // Translation correction applied in world, yaw correction in the object frame.
        const Eigen::Matrix4d expected =
            homogeneous(Mat3::Identity(), t.delta_translations[1]) *
            homogeneous(t.rotations[1], t.translations[1]) *
            homogeneous(Eigen::AngleAxisd(t.delta_yaws[1], Vec3::UnitZ()).toRotationMatrix(),
                        Vec3::Zero());
        const RigidPose p = effective_pose(t, 1);
        const Eigen::Matrix4d got = homogeneous(p.rotation, p.translation);
        EXPECT_LE((got - expected).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(EffectivePose, RejectsOutOfRangeAndInvalidFrames)
{
    PoseTrack t = PoseTrack::make(2, Vec3::Ones());
    t.valid[1] = 0;
    EXPECT_THROW(effective_pose(t, 2), ValidationError);
    EXPECT_THROW(effective_pose(t, -1), ValidationError);
    EXPECT_THROW(effective_pose(t, 1), ValidationError);
}

TEST(ObjectToWorld, IdentityPose)
{
    const Mat3 r = rotation_z(0.4);
    const WorldFrame f = object_to_world(Vec3(1, 2, 3), r, RigidPose{});
    EXPECT_EQ(f.mean, Vec3(1, 2, 3));
    EXPECT_EQ(f.rotation, r);
}

TEST(ObjectToWorld, QuarterTurn)
{
    const WorldFrame f = object_to_world(Vec3(1, 0, 0), Mat3::Identity(),
                                         RigidPose{rotation_z(kPi / 2.0), Vec3::Zero()});
    EXPECT_NEAR(f.mean.x(), 0.0, 1e-15);
    EXPECT_NEAR(f.mean.y(), 1.0, 1e-15);
}

TEST(ObjectToWorld, CovarianceMatchesConjugation)
{
    std::mt19937_64 rng(13);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const Vec3 ls(0.3 * n(rng), 0.3 * n(rng), 0.3 * n(rng));
        const Vec4 q(n(rng), n(rng), n(rng), n(rng));
        const RigidPose pose{oracle_rotation(Vec4(n(rng), n(rng), n(rng), n(rng))),
                             Vec3(n(rng), n(rng), n(rng))};
        const WorldFrame f = object_to_world(Vec3::Zero(), quaternion_to_rotation(q / q.norm()), pose);
        const Mat3 s = ls.array().exp().matrix().asDiagonal();
        const Mat3 composed = f.rotation * s * s * f.rotation.transpose();
        const Mat3 local = build_covariance(ls, q);
        const Mat3 conj = pose.rotation * local * pose.rotation.transpose();
        EXPECT_LE((composed - conj).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Fourier, SingleTermIsConstant)
{
    const std::vector<double> f{0.7};
    for (int t = 0; t < 10; ++t) {
        EXPECT_EQ(eval_fourier(f, t, 10), 0.7);
    }
}

TEST(Fourier, TimeZeroSumsCoefficients)
{
    const std::vector<double> f{0.5, -0.25, 0.125, 1.0, 2.0};
    EXPECT_NEAR(eval_fourier(f, 0, 7), 3.375, 1e-15);
}

TEST(Fourier, MatchesDirectSummationAndIsLinear)
{
    std::mt19937_64 rng(17);
    std::normal_distribution<double> n(0.0, 1.0);
    const int frames = 12;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> f(5), g(5), combo(5);
        const double a = n(rng), b = n(rng);
        for (int i = 0; i < 5; ++i) {
            f[i] = n(rng);
            g[i] = n(rng);
            combo[i] = a * f[i] + b * g[i];
        }
        for (int t = 0; t < frames; ++t) {
            long double direct = 0.0L;
            for (int i = 0; i < 5; ++i) {
                direct += static_cast<long double>(f[i]) *
                          std::cos(static_cast<long double>(i) * std::acos(-1.0L) * t / frames);
            }
            EXPECT_NEAR(eval_fourier(f, t, frames), static_cast<double>(direct), 1e-12);
            EXPECT_NEAR(eval_fourier(combo, t, frames),
                        a * eval_fourier(f, t, frames) + b * eval_fourier(g, t, frames), 1e-12);
        }
    }
}

TEST(ShColor, DegreeZeroIsIsotropic)
{
    const double y00 = 0.5 / std::sqrt(kPi);
    const Vec3 target(0.2, 0.6, 0.9);
    std::vector<double> z(3);
    for (int ch = 0; ch < 3; ++ch) {
        z[ch] = (target[ch] - kShColorOffset) / y00;
    }
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int i = 0; i < 32; ++i) {
        const Vec3 c = eval_sh_color(z, Vec3(n(rng), n(rng), n(rng)), 0);
        EXPECT_LE((c - target).cwiseAbs().maxCoeff(), 1e-15);
    }
}

TEST(ShColor, DegreeOneFlipsSignUnderNegation)
{
    std::vector<double> z(12, 0.0);
    for (int j = 3; j < 12; ++j) {
        z[j] = 0.1 * (j - 6);
    }
    const Vec3 d(0.3, -0.5, 0.8);
    const Vec3 plus = eval_sh_color(z, d, 1) - Vec3::Constant(kShColorOffset);
    const Vec3 minus = eval_sh_color(z, -d, 1) - Vec3::Constant(kShColorOffset);
    EXPECT_LE((plus + minus).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(ShColor, BasisMatchesLegendreOracle)
{
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int i = 0; i < 64; ++i) {
        const Vec3 d = Vec3(n(rng), n(rng), n(rng)).normalized();
        std::vector<double> basis(16);
        sh_basis(3, d, basis);
        for (int l = 0; l <= 3; ++l) {
            for (int m = -l; m <= l; ++m) {
                EXPECT_NEAR(basis[l * l + l + m], oracle_sh(l, m, d), 1e-10) << "l=" << l << " m=" << m;
            }
        }
    }
}

TEST(ShColor, RandomCoefficientsMatchOracleColor)
{
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int degree = 0; degree <= 3; ++degree) {
        const int count = sh_basis_count(degree);
        std::vector<double> z(static_cast<std::size_t>(count) * 3);
        for (double& v : z) {
            v = 0.2 * n(rng);
        }
        for (int i = 0; i < 64; ++i) {
            const Vec3 d(n(rng), n(rng), n(rng));
            const Vec3 u = d.normalized();
            Vec3 expected = Vec3::Constant(kShColorOffset);
            for (int l = 0; l <= degree; ++l) {
                for (int m = -l; m <= l; ++m) {
                    const int j = l * l + l + m;
                    for (int ch = 0; ch < 3; ++ch) {
                        expected[ch] += z[3 * j + ch] * oracle_sh(l, m, u);
                    }
                }
            }
            expected = expected.cwiseMax(0.0);
            EXPECT_LE((eval_sh_color(z, d, degree) - expected).cwiseAbs().maxCoeff(), 1e-10);
        }
    }
}

TEST(ShColor, ZeroDirectionRejected)
{
    std::vector<double> z(3, 0.0);
    EXPECT_THROW(eval_sh_color(z, Vec3::Zero(), 0), ValidationError);
}

TEST(Projection, OpticalAxisHitsPrincipalPoint)
{
    Camera cam = axis_camera(64, 48, 50.0);
    cam.cx = 30.5;
    cam.cy = 20.25;
    const auto g = project_gaussian(Vec3(0, 0, 1), Mat3::Identity() * 1e-4, cam);
    ASSERT_TRUE(g.has_value());
    EXPECT_DOUBLE_EQ(g->mean2d.x(), 30.5);
    EXPECT_DOUBLE_EQ(g->mean2d.y(), 20.25);
    EXPECT_DOUBLE_EQ(g->view_depth, 1.0);
}

TEST(Projection, SmallAngleIsotropicLimit)
{
    const Camera cam = axis_camera(128, 128, 100.0);
    for (double d : {2.0, 5.0, 20.0}) {
        const double sigma = 0.005 * d;
        const auto g = project_gaussian(Vec3(0, 0, d), Mat3::Identity() * sigma * sigma, cam);
        ASSERT_TRUE(g.has_value());
        const double expected = std::pow(100.0 * sigma / d, 2) + kLowPassDilation;
        EXPECT_NEAR(g->cov2d(0, 0) / expected, 1.0, 1e-6);
        EXPECT_NEAR(g->cov2d(1, 1) / expected, 1.0, 1e-6);
        EXPECT_NEAR(g->cov2d(0, 1), 0.0, 1e-12);
    }
}

TEST(Projection, CovarianceMatchesNumericJacobian)
{
    std::mt19937_64 rng(21);
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(-0.4, 0.4);
    const Camera cam = make_camera(96, 64, 80.0, Vec3(1, -2, 1.5), Vec3(0, 5, 0));
    const auto pixel = [&](const Vec3& w) {
        const Vec3 p = cam.to_camera(w);
        return Vec2(cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy);
    };
    int checked = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const Vec3 mean(u(rng) * 6.0, 5.0 + 3.0 * u(rng), u(rng) * 3.0);
        const Mat3 cov = build_covariance(Vec3(0.5 * n(rng) - 2, 0.5 * n(rng) - 2, 0.5 * n(rng) - 2),
                                          Vec4(n(rng), n(rng), n(rng), n(rng)));
        if (!project_gaussian(mean, cov, cam)) {
            continue;
        }
        Mat23 jac;
        const double h = 1e-5;
        for (int k = 0; k < 3; ++k) {
            Vec3 e = Vec3::Zero();
            e[k] = h;
            jac.col(k) = (pixel(mean + e) - pixel(mean - e)) / (2.0 * h);
        }
        const Eigen::Matrix2d expected = jac * cov * jac.transpose();
        const Mat2 got = project_covariance(mean, cov, cam);
        EXPECT_LE((got - expected).cwiseAbs().maxCoeff(), 1e-4 * expected.cwiseAbs().maxCoeff());
        ++checked;
    }
    EXPECT_GT(checked, 50);
}

TEST(Projection, CullsNearAndOutsideGuard)
{
    const Camera cam = axis_camera(100, 100, 50.0);
    EXPECT_FALSE(project_gaussian(Vec3(0, 0, 0.1), Mat3::Identity() * 1e-4, cam));
    // Image half-width in normalized coords is 1.0; the guard stops at 1.3.
    EXPECT_TRUE(project_gaussian(Vec3(1.25, 0, 1), Mat3::Identity() * 1e-4, cam));
    EXPECT_FALSE(project_gaussian(Vec3(1.35, 0, 1), Mat3::Identity() * 1e-4, cam));
}

TEST(Projection, DilatedCovarianceEigenvaluesBounded)
{
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0.0, 1.0);
    const Camera cam = axis_camera(64, 64, 60.0);
    for (int trial = 0; trial < 50; ++trial) {
        const Mat3 cov = build_covariance(Vec3(n(rng) - 4, n(rng) - 4, n(rng) - 4),
                                          Vec4(n(rng), n(rng), n(rng), n(rng)));
        const auto g = project_gaussian(Vec3(0.1 * n(rng), 0.1 * n(rng), 3.0), cov, cam);
        ASSERT_TRUE(g.has_value());
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(Eigen::Matrix2d(g->cov2d));
        EXPECT_GE(es.eigenvalues().minCoeff(), kLowPassDilation - 1e-12);
        EXPECT_EQ(g->cov2d(0, 1), g->cov2d(1, 0));
    }
}

TEST(Projection, RigidInvariance)
{
    std::mt19937_64 rng(31);
    std::normal_distribution<double> n(0.0, 1.0);
    const Camera cam = make_camera(80, 60, 70.0, Vec3(0, 0, 1), Vec3(0, 6, 0));
    for (int trial = 0; trial < 30; ++trial) {
        const Mat3 gr = oracle_rotation(Vec4(n(rng), n(rng), n(rng), n(rng)));
        const Vec3 gt(n(rng), n(rng), n(rng));
        Camera moved = cam;
        // W -> W G^-1 with G = (gr, gt).
        moved.rotation = cam.rotation * gr.transpose();
        moved.translation = cam.translation - moved.rotation * gt;
        const Vec3 ls(0.3 * n(rng) - 2, 0.3 * n(rng) - 2, 0.3 * n(rng) - 2);
        const Mat3 r = oracle_rotation(Vec4(n(rng), n(rng), n(rng), n(rng)));
        const Vec3 mean(0.5 * n(rng), 6.0 + 0.5 * n(rng), 1.0 + 0.3 * n(rng));
        const Mat3 s = ls.array().exp().matrix().asDiagonal();
        const Mat3 cov = r * s * s * r.transpose();
        const Mat3 rg = gr * r;
        const Mat3 cov_moved = rg * s * s * rg.transpose();
        const auto a = project_gaussian(mean, cov, cam);
        const auto b = project_gaussian(gr * mean + gt, cov_moved, moved);
        ASSERT_EQ(a.has_value(), b.has_value());
        if (a) {
            EXPECT_LE((a->mean2d - b->mean2d).cwiseAbs().maxCoeff(), 1e-9);
            EXPECT_LE((a->cov2d - b->cov2d).cwiseAbs().maxCoeff(), 1e-9);
            EXPECT_NEAR(a->view_depth, b->view_depth, 1e-9);
        }
    }
}

// ---- kernel-level gradient checks (central differences, h = 1e-4) ----

TEST(KernelGradients, CovarianceBackward)
{
    std::mt19937_64 rng(41);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        Vec3 ls(0.3 * n(rng), 0.3 * n(rng), 0.3 * n(rng));
        Vec4 q(n(rng), n(rng), n(rng), n(rng));
        Mat3 w;
        for (int i = 0; i < 9; ++i) {
            w(i / 3, i % 3) = n(rng);
        }
        const Mat3 ws = 0.5 * (w + w.transpose());
        const auto loss = [&]() { return build_covariance(ls, q).cwiseProduct(ws).sum(); };
        Vec3 gls;
        Vec4 gq;
        build_covariance_backward(ls, q, ws, gls, gq);
        for (int k = 0; k < 3; ++k) {
            EXPECT_LE(relative_error(gls[k], central_difference(&ls[k], 1e-4, loss)), 1e-3);
        }
        for (int k = 0; k < 4; ++k) {
            EXPECT_LE(relative_error(gq[k], central_difference(&q[k], 1e-4, loss)), 1e-3);
        }
    }
}

TEST(KernelGradients, ShColorBackward)
{
    std::mt19937_64 rng(43);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int degree = 0; degree <= 3; ++degree) {
        const auto count = static_cast<std::size_t>(sh_basis_count(degree));
        for (int trial = 0; trial < 10; ++trial) {
            std::vector<double> z(count * 3);
            for (double& v : z) {
                v = 0.3 * n(rng);
            }
            z[0] = z[1] = z[2] = 1.0; // keep channels away from the clamp
            Vec3 dir(n(rng), n(rng), n(rng));
            const Vec3 gc(n(rng), n(rng), n(rng));
            const auto loss = [&]() { return eval_sh_color(z, dir, degree).dot(gc); };
            std::vector<double> gz(count * 3, 0.0);
            const Vec3 gdir = eval_sh_color_backward(z, dir, degree, gc, gz);
            for (std::size_t j = 0; j < z.size(); ++j) {
                EXPECT_LE(relative_error(gz[j], central_difference(&z[j], 1e-4, loss)), 1e-3);
            }
            for (int k = 0; k < 3; ++k) {
                EXPECT_LE(relative_error(gdir[k], central_difference(&dir[k], 1e-4, loss), 1e-6), 1e-3);
            }
        }
    }
}

TEST(KernelGradients, ProjectionBackward)
{
    std::mt19937_64 rng(47);
    std::normal_distribution<double> n(0.0, 1.0);
    const Camera cam = make_camera(96, 64, 80.0, Vec3(0, -1, 2), Vec3(0, 6, 0));
    for (int trial = 0; trial < 20; ++trial) {
        Vec3 mean(0.5 * n(rng), 6.0 + 0.5 * n(rng), 0.3 * n(rng));
        Mat3 cov = build_covariance(Vec3(0.3 * n(rng) - 1.5, 0.3 * n(rng) - 1.5, 0.3 * n(rng) - 1.5),
                                    Vec4(n(rng), n(rng), n(rng), n(rng)));
        const Vec2 gm(n(rng), n(rng));
        Mat2 gc;
        gc << n(rng), n(rng), 0, n(rng);
        gc(1, 0) = gc(0, 1);
        const double gd = n(rng);
        const auto loss = [&]() {
            const auto p = project_gaussian(mean, cov, cam);
            return p->mean2d.dot(gm) + p->cov2d.cwiseProduct(gc).sum() + gd * p->view_depth;
        };
        Vec3 g_mean;
        Mat3 g_cov;
        project_gaussian_backward(mean, cov, cam, gm, gc, gd, g_mean, g_cov);
        for (int k = 0; k < 3; ++k) {
            EXPECT_LE(relative_error(g_mean[k], central_difference(&mean[k], 1e-4, loss)), 1e-3);
        }
        // Perturb symmetric pairs together: d/d(c_ij) with c_ij = c_ji counts both entries.
        for (int i = 0; i < 3; ++i) {
            for (int j = i; j < 3; ++j) {
                const double h = 1e-4;
                const double saved = cov(i, j);
                const auto set = [&](double v) {
                    cov(i, j) = v;
                    cov(j, i) = v;
                };
                set(saved + h);
                const double fp = loss();
                set(saved - h);
                const double fm = loss();
                set(saved);
                const double fd = (fp - fm) / (2.0 * h);
                const double an = i == j ? g_cov(i, i) : g_cov(i, j) + g_cov(j, i);
                EXPECT_LE(relative_error(an, fd, 1e-6), 1e-3);
            }
        }
    }
}

TEST(Quaternion, RotationRoundTrip)
{
    std::mt19937_64 rng(2);
    for (int i = 0; i < 20; ++i) {
        const Vec4 q = random_quaternion(rng);
        const Mat3 r = quaternion_to_rotation(q);
        EXPECT_TRUE(is_rotation(r, 1e-12));
        EXPECT_TRUE(quaternion_to_rotation(rotation_to_quaternion(r)).isApprox(r, 1e-12));
    }
}
