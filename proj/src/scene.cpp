#include "cdgs/scene.hpp"

#include "cdgs/motion.hpp"

#include <cmath>
#include <fmt/core.h>
#include <stdexcept>

namespace cdgs {

DynamicGaussian DynamicGaussian::zeros(const MotionModel& model, int sh_degree) {
    DynamicGaussian g;
    g.center_coeffs.assign(3 * static_cast<std::size_t>(model.coeffs_per_axis()), 0.0);
    g.sh_coeffs.assign(3 * static_cast<std::size_t>((sh_degree + 1) * (sh_degree + 1)), 0.0);
    g.set_rot_intercept(Vec4(0, 0, 0, 1));
    return g;
}

Camera::Camera(int w, int h, double fx_, double fy_, double cx_, double cy_, const Mat4& w2c)
    : width(w), height(h), fx(fx_), fy(fy_), cx(cx_), cy(cy_), world_to_camera(w2c) {
    if (width <= 0 || height <= 0)
        throw std::invalid_argument("Camera: non-positive image size");
    if (fx <= 0 || fy <= 0)
        throw std::invalid_argument("Camera: focal lengths must be positive");
    const Mat3 r = rotation();
    if ((r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-5)
        throw std::invalid_argument("Camera: world_to_camera rotation block is not orthonormal");
    const Eigen::RowVector4d bottom = world_to_camera.row(3);
    if ((bottom - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-12)
        throw std::invalid_argument("Camera: world_to_camera bottom row must be [0 0 0 1]");
}

int ChunkedScene::find_chunk(double t) const {
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        if (t >= chunks[i].time_range[0] && t < chunks[i].time_range[1])
            return static_cast<int>(i);
    }
    return -1;
}

double ChunkedScene::to_local_time(int chunk_index, double t) const {
    const auto& r = chunks[chunk_index].time_range;
    return (t - r[0]) / (r[1] - r[0]);
}

int param_count_per_gaussian(const MotionModel& model, int sh_degree) {
    if (!model.valid())
        throw std::invalid_argument("param_count_per_gaussian: invalid motion model");
    if (sh_degree < 0 || sh_degree > 3)
        throw std::invalid_argument("param_count_per_gaussian: sh_degree must be in [0,3]");
    const int sh = (sh_degree + 1) * (sh_degree + 1);
    int count = 3 * model.coeffs_per_axis() + 8 + 3 + 3 * sh + 1;
    if (model.time_varying_scale)
        count += 3;
    return count;
}

std::vector<Violation> validate_scene(const Scene& s) {
    std::vector<Violation> out;
    if (!s.model.valid())
        out.push_back({-1, "invalid motion model order"});
    if (s.sh_degree < 0 || s.sh_degree > 3)
        out.push_back({-1, "sh_degree outside [0,3]"});
    if (!(s.time_range[0] < s.time_range[1]))
        out.push_back({-1, "time_range not increasing"});
    if (!(s.extent > 0))
        out.push_back({-1, "extent must be positive"});

    const std::size_t want_center = 3 * static_cast<std::size_t>(s.model.coeffs_per_axis());
    const std::size_t want_sh = 3 * static_cast<std::size_t>((s.sh_degree + 1) * (s.sh_degree + 1));
    for (std::size_t i = 0; i < s.gaussians.size(); ++i) {
        const auto& g = s.gaussians[i];
        const int idx = static_cast<int>(i);
        if (g.center_coeffs.size() != want_center)
            out.push_back({idx, "model mismatch: center coefficient count"});
        if (g.sh_coeffs.size() != want_sh)
            out.push_back({idx, "model mismatch: SH coefficient count"});
        if (g.rot_intercept().norm() == 0.0)
            out.push_back({idx, "all-zero rotation intercept"});
        for (double v : g.center_coeffs)
            if (!std::isfinite(v)) {
                out.push_back({idx, "non-finite center coefficient"});
                break;
            }
        for (double v : g.log_scale)
            if (!std::isfinite(v)) {
                out.push_back({idx, "non-finite log_scale"});
                break;
            }
        if (!std::isfinite(g.opacity_logit))
            out.push_back({idx, "non-finite opacity_logit"});
    }
    return out;
}

namespace {

// Splits the linear part of `transform` into uniform scale * rotation.
// Throws when the linear part is not a similarity transform.
void decompose_similarity(const Mat4& transform, double& scale, Mat3& rot, Vec3& trans) {
    const Mat3 a = transform.topLeftCorner<3, 3>();
    trans = transform.topRightCorner<3, 1>();
    const double det = a.determinant();
    if (det <= 0)
        throw std::invalid_argument("compose: transform must preserve orientation");
    scale = std::cbrt(det);
    rot = a / scale;
    if ((rot * rot.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6)
        throw std::invalid_argument("compose: transform is not rigid + uniform scale");
}

// Rotation matrix -> unit quaternion (x,y,z,w).
Vec4 rotmat_to_quat(const Mat3& r) {
    Eigen::Quaterniond q(r);
    q.normalize();
    return Vec4(q.x(), q.y(), q.z(), q.w());
}

// Rewrites one axis' coefficients so the curve evaluates at t+beta.
void shift_time_in_place(const MotionModel& model, std::span<double> w, double beta) {
    if (beta == 0.0)
        return;
    switch (model.kind) {
    case MotionKind::Fourier:
        // Each harmonic pair (sin, cos) rotates by 2 i pi beta.
        for (int i = 1; i <= model.order; ++i) {
            const double th = 2.0 * i * kPi * beta;
            const double c = std::cos(th), s = std::sin(th);
            const double w1 = w[2 * i - 1], w2 = w[2 * i];
            w[2 * i - 1] = w1 * c - w2 * s;
            w[2 * i] = w1 * s + w2 * c;
        }
        break;
    case MotionKind::Polynomial: {
        // Binomial re-expansion of sum_i w_i (t+beta)^i.
        const int d = model.order;
        std::vector<double> out(d + 1, 0.0);
        for (int i = 0; i <= d; ++i) {
            double binom = 1.0, pow_beta = 1.0;
            for (int j = i; j >= 0; --j) {
                out[j] += w[i] * binom * pow_beta;
                binom = binom * j / static_cast<double>(i - j + 1);
                pow_beta *= beta;
            }
        }
        for (int i = 0; i <= d; ++i)
            w[i] = out[i];
        break;
    }
    case MotionKind::Spline:
        throw std::invalid_argument("compose: time shift is not representable for spline motion");
    }
}

} // namespace

Scene compose(const Scene& a, const Scene& b, const Mat4& transform, const TimeMap& time_map) {
    if (a.model != b.model)
        throw std::invalid_argument("compose: motion model mismatch");
    if (a.sh_degree != b.sh_degree)
        throw std::invalid_argument("compose: sh_degree mismatch");
    if (time_map.alpha != 1.0)
        throw std::invalid_argument("compose: only time shifts (alpha == 1) are supported");

    double scale;
    Mat3 rot;
    Vec3 trans;
    decompose_similarity(transform, scale, rot, trans);
    const Vec4 q_rot = rotmat_to_quat(rot);
    const double log_scale_delta = std::log(scale);

    Scene out = a;
    out.gaussians.reserve(a.size() + b.size());
    const int c = a.model.coeffs_per_axis();
    for (const auto& src : b.gaussians) {
        DynamicGaussian g = src;
        // Timeline first (acts on b's own frame), then the spatial map.
        if (time_map.beta != 0.0) {
            for (int axis = 0; axis < 3; ++axis)
                shift_time_in_place(a.model, std::span<double>(&g.center_coeff(axis, 0), c),
                                    time_map.beta);
            g.set_rot_intercept(src.rot_intercept() + time_map.beta * src.rot_slope());
            if (a.model.time_varying_scale)
                for (int axis = 0; axis < 3; ++axis)
                    g.log_scale[axis] += time_map.beta * g.scale_slope[axis];
        }
        // Every basis coefficient is a 3-vector transformed by the linear
        // part; only the intercept picks up the translation.
        for (int i = 0; i < c; ++i) {
            Vec3 w(g.center_coeff(0, i), g.center_coeff(1, i), g.center_coeff(2, i));
            w = scale * (rot * w);
            if (i == 0)
                w += trans;
            g.center_coeff(0, i) = w[0];
            g.center_coeff(1, i) = w[1];
            g.center_coeff(2, i) = w[2];
        }
        // Quaternion multiplication is bilinear, so intercept and slope
        // compose independently.
        g.set_rot_intercept(quat_multiply(q_rot, g.rot_intercept()));
        g.set_rot_slope(quat_multiply(q_rot, g.rot_slope()));
        for (int axis = 0; axis < 3; ++axis)
            g.log_scale[axis] += log_scale_delta;
        out.gaussians.push_back(std::move(g));
    }
    out.extent = std::max(a.extent, b.extent * scale);
    return out;
}

} // namespace cdgs
