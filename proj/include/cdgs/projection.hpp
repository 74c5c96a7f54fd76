#pragma once

#include "cdgs/common.hpp"
#include "cdgs/scene.hpp"

#include <optional>
#include <span>
#include <vector>

namespace cdgs {

inline constexpr double kNearPlane = 0.01;     // world units
inline constexpr double kCovLowPass = 0.3;     // px^2 added to the cov2d diagonal
inline constexpr double kFootprintSigma = 3.0; // ellipse cutoff radius in sigmas

/// Screen-space footprint of one Gaussian at one time.
struct Splat2D {
    Vec2 mean_px;
    Mat2 cov2d; // pixels^2, includes the low-pass term
    double depth = 0;
    Vec3 color = Vec3::Zero();
    double opacity = 0;
    int gaussian_index = -1;
};

Vec3 world_to_camera(const Camera& cam, const Vec3& p);

/// Jacobian of the affine projection approximation at camera-space point v,
/// with focal lengths folded in so downstream covariances are in pixels:
///   [[fx/vz, 0, -fx vx/vz^2], [0, fy/vz, -fy vy/vz^2], [0, 0, 0]].
/// Returns nullopt (culled) when vz <= near.
std::optional<Mat3> projection_jacobian(const Camera& cam, const Vec3& v,
                                        double near = kNearPlane);

/// Sigma = R S S^T R^T for a unit quaternion and per-axis scales.
Mat3 build_covariance(const Vec4& unit_quat, const Vec3& scale);

/// Top-left 2x2 of J W Sigma W^T J^T plus the low-pass diagonal term.
Mat2 project_covariance(const Mat3& jacobian, const Mat3& w_rot, const Mat3& cov3d);

/// Real spherical harmonics basis at a unit direction, (degree+1)^2 values.
void sh_basis(const Vec3& dir, int degree, std::span<double> out);

/// d basis_m / d dir, written as (degree+1)^2 gradient rows.
void sh_basis_gradient(const Vec3& dir, int degree, std::span<Vec3> out);

/// Color from SH coefficients: clamp(sum h_m Y_m(dir) + 0.5, 0, 1) per channel.
/// `sh` is channel-major [3][(degree+1)^2].
Vec3 sh_to_color(std::span<const double> sh, const Vec3& unit_dir, int degree);

std::optional<Splat2D> project_gaussian(const DynamicGaussian& g, const MotionModel& model,
                                        int sh_degree, const Camera& cam, double t,
                                        int gaussian_index = -1, double near = kNearPlane);

/// Projects every Gaussian in parallel; entry i corresponds to gaussians[i]
/// and is nullopt when culled, regardless of thread count.
std::vector<std::optional<Splat2D>> project_scene(const Scene& scene, const Camera& cam, double t);

} // namespace cdgs
