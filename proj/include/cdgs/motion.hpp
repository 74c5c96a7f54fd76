#pragma once

#include "cdgs/common.hpp"
#include "cdgs/scene.hpp"

#include <span>
#include <utility>
#include <vector>

namespace cdgs {

/// Basis functions of one motion model evaluated at a time t.
/// Fourier: [1, sin 2pi t, cos 2pi t, ..., sin 2L pi t, cos 2L pi t];
/// Polynomial: [1, t, ..., t^d]; Spline: Catmull-Rom weights per control point.
struct BasisVector {
    std::vector<double> values;
};

/// Fills `out` (length model.coeffs_per_axis()) with the basis at t.
void eval_basis(const MotionModel& model, double t, std::span<double> out);

BasisVector basis(const MotionModel& model, double t);

Vec3 eval_center(const DynamicGaussian& g, const MotionModel& model, double t);

/// Linearly evaluated quaternion before normalization.
Vec4 eval_rotation_raw(const DynamicGaussian& g, double t);

/// Unit rotation quaternion at time t. Throws std::domain_error (message
/// includes the gaussian index and t) when the raw norm falls below 1e-8.
Vec4 eval_rotation(const DynamicGaussian& g, double t, int gaussian_index = -1);

Vec3 eval_scale(const DynamicGaussian& g, const MotionModel& model, double t);

/// 3D scene flow over one time step: (center(t+dt)-center(t), center(t)-center(t-dt)).
std::pair<Vec3, Vec3> scene_flow_delta(const DynamicGaussian& g, const MotionModel& model,
                                       double t, double dt);

/// d center_axis / d w_{axis,i} — equals the basis by linearity.
std::vector<double> center_coeff_gradient(const MotionModel& model, double t);

} // namespace cdgs
