#pragma once

#include "cdgs/common.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace cdgs {

enum class MotionKind : std::uint8_t {
    Fourier = 0,    // center(t) = w0 + sum_i w_{2i-1} sin(2 i pi t) + w_{2i} cos(2 i pi t)
    Polynomial = 1, // center(t) = sum_i w_i t^i
    Spline = 2,     // uniform Catmull-Rom through n control points on [0,1]
};

/// Motion basis shared by every Gaussian in a scene.
/// `order` is the harmonic count L (Fourier), the degree d (Polynomial),
/// or the number of control points n (Spline).
struct MotionModel {
    MotionKind kind = MotionKind::Fourier;
    int order = 2;
    bool time_varying_scale = false;

    int coeffs_per_axis() const {
        switch (kind) {
        case MotionKind::Fourier: return 2 * order + 1;
        case MotionKind::Polynomial: return order + 1;
        case MotionKind::Spline: return order;
        }
        return 0;
    }

    bool valid() const {
        return kind == MotionKind::Spline ? order >= 2 : order >= 1;
    }

    bool operator==(const MotionModel&) const = default;
};

/// One dynamic Gaussian primitive.
///
/// Storage is in unconstrained optimization space: scale as log, opacity as
/// logit, rotation as a raw (unnormalized) quaternion line intercept+slope.
struct DynamicGaussian {
    std::vector<double> center_coeffs;   // [3][C] axis-major, index 0 = intercept
    std::array<double, 8> rot_coeffs{};  // [4][2] = (x,y,z,w) x (intercept, slope)
    std::array<double, 3> log_scale{};
    std::array<double, 3> scale_slope{}; // additive in log domain, only with time_varying_scale
    std::vector<double> sh_coeffs;       // [3][(k+1)^2] channel-major
    double opacity_logit = 0.0;

    int coeffs_per_axis() const { return static_cast<int>(center_coeffs.size() / 3); }

    double center_coeff(int axis, int i) const {
        return center_coeffs[static_cast<std::size_t>(axis) * coeffs_per_axis() + i];
    }
    double& center_coeff(int axis, int i) {
        return center_coeffs[static_cast<std::size_t>(axis) * coeffs_per_axis() + i];
    }

    Vec4 rot_intercept() const { return Vec4(rot_coeffs[0], rot_coeffs[2], rot_coeffs[4], rot_coeffs[6]); }
    Vec4 rot_slope() const { return Vec4(rot_coeffs[1], rot_coeffs[3], rot_coeffs[5], rot_coeffs[7]); }
    void set_rot_intercept(const Vec4& q) {
        rot_coeffs[0] = q[0]; rot_coeffs[2] = q[1]; rot_coeffs[4] = q[2]; rot_coeffs[6] = q[3];
    }
    void set_rot_slope(const Vec4& q) {
        rot_coeffs[1] = q[0]; rot_coeffs[3] = q[1]; rot_coeffs[5] = q[2]; rot_coeffs[7] = q[3];
    }

    static DynamicGaussian zeros(const MotionModel& model, int sh_degree);
};

/// A dynamic scene: one motion model, one SH degree, many Gaussians.
struct Scene {
    MotionModel model;
    int sh_degree = 0;
    std::vector<DynamicGaussian> gaussians;
    std::array<double, 2> time_range{0.0, 1.0};
    double extent = 1.0; // radius of the initial point bounding sphere, world units

    std::size_t size() const { return gaussians.size(); }
};

/// Consecutive, disjoint time chunks covering [0,1), each an independent
/// Scene trained on its own locally normalized timeline.
struct ChunkedScene {
    struct Chunk {
        std::array<double, 2> time_range; // global, half-open [lo, hi)
        Scene scene;
    };
    std::vector<Chunk> chunks;

    /// Index of the chunk whose half-open range contains t, or -1.
    int find_chunk(double t) const;
    /// Maps a global t into the owning chunk's local timeline.
    double to_local_time(int chunk_index, double t) const;
};

/// Pinhole camera: intrinsics in pixels plus a rigid world-to-camera
/// transform. Camera space is x-right, y-down, z-forward; a point lands at
/// pixel (fx*vx/vz + cx, fy*vy/vz + cy).
struct Camera {
    int width = 0;
    int height = 0;
    double fx = 0, fy = 0, cx = 0, cy = 0;
    Mat4 world_to_camera = Mat4::Identity();

    Camera() = default;
    Camera(int w, int h, double fx_, double fy_, double cx_, double cy_, const Mat4& w2c);

    Mat3 rotation() const { return world_to_camera.topLeftCorner<3, 3>(); }
    Vec3 translation() const { return world_to_camera.topRightCorner<3, 1>(); }
    /// Camera center in world coordinates.
    Vec3 position() const { return -rotation().transpose() * translation(); }
};

/// Stored float count per Gaussian for a given model and SH degree k.
int param_count_per_gaussian(const MotionModel& model, int sh_degree);

struct Violation {
    int gaussian_index; // -1 for scene-level violations
    std::string message;
};

/// Checks every type invariant; returns one entry per breach (empty = ok).
std::vector<Violation> validate_scene(const Scene& s);

/// Affine reparameterization of time, t -> alpha*t + beta.
struct TimeMap {
    double alpha = 1.0;
    double beta = 0.0;
};

/// Merges scene b into a copy of a. b's Gaussians are moved by `transform`
/// (rigid plus optional uniform scale) and their timeline shifted by
/// `time_map`. Only alpha == 1 maps are accepted: a Fourier frequency
/// rescale would leave the shared basis. Throws std::invalid_argument on
/// model/degree mismatch, a non-rigid linear part, or alpha != 1.
Scene compose(const Scene& a, const Scene& b, const Mat4& transform, const TimeMap& time_map = {});

} // namespace cdgs
