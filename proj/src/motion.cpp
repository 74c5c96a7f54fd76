#include "cdgs/motion.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/core.h>
#include <stdexcept>

namespace cdgs {

namespace {

// Uniform Catmull-Rom weights over n control points at t_j = j/(n-1).
// t outside [0,1] is clamped to the end segments.
void spline_basis(int n, double t, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    const int segments = n - 1;
    double x = std::clamp(t, 0.0, 1.0) * segments;
    int seg = std::min(static_cast<int>(x), segments - 1);
    const double u = x - seg;
    const double u2 = u * u, u3 = u2 * u;
    const double w0 = 0.5 * (-u + 2 * u2 - u3);
    const double w1 = 0.5 * (2 - 5 * u2 + 3 * u3);
    const double w2 = 0.5 * (u + 4 * u2 - 3 * u3);
    const double w3 = 0.5 * (-u2 + u3);
    out[std::max(seg - 1, 0)] += w0;
    out[seg] += w1;
    out[seg + 1] += w2;
    out[std::min(seg + 2, n - 1)] += w3;
}

} // namespace

void eval_basis(const MotionModel& model, double t, std::span<double> out) {
    switch (model.kind) {
    case MotionKind::Fourier: {
        out[0] = 1.0;
        for (int i = 1; i <= model.order; ++i) {
            const double a = 2.0 * i * kPi * t;
            out[2 * i - 1] = std::sin(a);
            out[2 * i] = std::cos(a);
        }
        break;
    }
    case MotionKind::Polynomial: {
        double p = 1.0;
        for (int i = 0; i <= model.order; ++i) {
            out[i] = p;
            p *= t;
        }
        break;
    }
    case MotionKind::Spline:
        spline_basis(model.order, t, out);
        break;
    }
}

BasisVector basis(const MotionModel& model, double t) {
    BasisVector b;
    b.values.resize(model.coeffs_per_axis());
    eval_basis(model, t, b.values);
    return b;
}

Vec3 eval_center(const DynamicGaussian& g, const MotionModel& model, double t) {
    const int c = model.coeffs_per_axis();
    double buf[64];
    std::span<double> bs(buf, static_cast<std::size_t>(c));
    std::vector<double> heap;
    if (c > 64) {
        heap.resize(c);
        bs = heap;
    }
    eval_basis(model, t, bs);
    Vec3 out = Vec3::Zero();
    for (int axis = 0; axis < 3; ++axis) {
        const double* w = g.center_coeffs.data() + static_cast<std::size_t>(axis) * c;
        double acc = 0.0;
        for (int i = 0; i < c; ++i)
            acc += w[i] * bs[i];
        out[axis] = acc;
    }
    return out;
}

Vec4 eval_rotation_raw(const DynamicGaussian& g, double t) {
    return g.rot_intercept() + t * g.rot_slope();
}

Vec4 eval_rotation(const DynamicGaussian& g, double t, int gaussian_index) {
    const Vec4 raw = eval_rotation_raw(g, t);
    const double n = raw.norm();
    if (n < 1e-8)
        throw std::domain_error(fmt::format(
            "eval_rotation: degenerate quaternion (norm {:.3e}) for gaussian {} at t={}",
            n, gaussian_index, t));
    return raw / n;
}

Vec3 eval_scale(const DynamicGaussian& g, const MotionModel& model, double t) {
    Vec3 s;
    for (int axis = 0; axis < 3; ++axis) {
        double ls = g.log_scale[axis];
        if (model.time_varying_scale)
            ls += g.scale_slope[axis] * t;
        s[axis] = std::exp(ls);
    }
    return s;
}

std::pair<Vec3, Vec3> scene_flow_delta(const DynamicGaussian& g, const MotionModel& model,
                                       double t, double dt) {
    const Vec3 at = eval_center(g, model, t);
    return {eval_center(g, model, t + dt) - at, at - eval_center(g, model, t - dt)};
}

std::vector<double> center_coeff_gradient(const MotionModel& model, double t) {
    return basis(model, t).values;
}

} // namespace cdgs
