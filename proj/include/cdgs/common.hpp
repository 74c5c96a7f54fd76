#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>

namespace cdgs {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

inline constexpr double kPi = std::numbers::pi;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Inverse of sigmoid; p must lie strictly inside (0,1).
inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Rotation matrix from a unit quaternion stored as (x, y, z, w).
inline Mat3 quat_to_rotmat(const Vec4& q) {
    const double x = q[0], y = q[1], z = q[2], w = q[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

/// Hamilton product a*b, both stored as (x, y, z, w).
inline Vec4 quat_multiply(const Vec4& a, const Vec4& b) {
    const double ax = a[0], ay = a[1], az = a[2], aw = a[3];
    const double bx = b[0], by = b[1], bz = b[2], bw = b[3];
    return Vec4(aw * bx + ax * bw + ay * bz - az * by,
                aw * by - ax * bz + ay * bw + az * bx,
                aw * bz + ax * by - ay * bx + az * bw,
                aw * bw - ax * bx - ay * by - az * bz);
}

} // namespace cdgs
