// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

#include "urbansplat/math.hpp"

#include "urbansplat/errors.hpp"

namespace urbansplat {

Vec4 normalize_quaternion(const Vec4& q)
{
    const double n = q.norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
        throw ValidationError("quaternion is zero or non-finite");
    }
    return q / n;
}

Mat3 quaternion_to_rotation(const Vec4& q)
{
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
        2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
    return r;
}

Vec4 rotation_to_quaternion(const Mat3& r)
{
    const Eigen::Quaterniond q(r);
    Vec4 out(q.w(), q.x(), q.y(), q.z());
    if (out[0] < 0.0) {
        out = -out;
    }
    return out / out.norm();
}

Vec4 rotation_gradient_to_quaternion(const Vec4& raw_q, const Mat3& g)
{
    const double n = raw_q.norm();
    const Vec4 q = raw_q / n;
    const double w = q[0], x = q[1], y = q[2], z = q[3];

    // Contract g with dR/dw, dR/dx, dR/dy, dR/dz.
    const double gw = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) +
                             x * g(2, 1));
    const double gx = 2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) -
                             w * g(1, 2) + z * g(2, 0) + w * g(2, 1) - 2.0 * x * g(2, 2));
    const double gy = 2.0 * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) +
                             z * g(1, 2) - w * g(2, 0) + z * g(2, 1) - 2.0 * y * g(2, 2));
    const double gz = 2.0 * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) -
                             2.0 * z * g(1, 1) + y * g(1, 2) + x * g(2, 0) + y * g(2, 1));
    const Vec4 gu(gw, gx, gy, gz);
    return (gu - gu.dot(q) * q) / n;
}

bool is_rotation(const Mat3& r, double tol)
{
    if (!r.allFinite()) {
        return false;
    }
    const Mat3 e = r.transpose() * r - Mat3::Identity();
    return e.cwiseAbs().maxCoeff() <= tol && std::abs(r.determinant() - 1.0) <= tol;
}

} // namespace urbansplat
