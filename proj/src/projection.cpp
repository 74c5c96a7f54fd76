#include "cdgs/projection.hpp"

#include "cdgs/motion.hpp"
#include "cdgs/threading.hpp"

#include <algorithm>
#include <cmath>

namespace cdgs {

namespace sh {
// Real SH constants, bands 0..3.
constexpr double C0 = 0.28209479177387814;
constexpr double C1 = 0.4886025119029199;
constexpr double C2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                          -1.0925484305920792, 0.5462742152960396};
constexpr double C3[7] = {-0.5900435899266435, 2.890611442640554,  -0.4570457994644658,
                          0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                          -0.5900435899266435};
} // namespace sh

Vec3 world_to_camera(const Camera& cam, const Vec3& p) {
    return cam.rotation() * p + cam.translation();
}

std::optional<Mat3> projection_jacobian(const Camera& cam, const Vec3& v, double near) {
    if (v[2] <= near)
        return std::nullopt;
    const double inv_z = 1.0 / v[2];
    const double inv_z2 = inv_z * inv_z;
    Mat3 j = Mat3::Zero();
    j(0, 0) = cam.fx * inv_z;
    j(0, 2) = -cam.fx * v[0] * inv_z2;
    j(1, 1) = cam.fy * inv_z;
    j(1, 2) = -cam.fy * v[1] * inv_z2;
    return j;
}

Mat3 build_covariance(const Vec4& unit_quat, const Vec3& scale) {
    const Mat3 r = quat_to_rotmat(unit_quat);
    const Mat3 rs = r * scale.asDiagonal();
    const Mat3 cov = rs * rs.transpose();
    return 0.5 * (cov + cov.transpose()); // exactly symmetric
}

Mat2 project_covariance(const Mat3& jacobian, const Mat3& w_rot, const Mat3& cov3d) {
    const Mat3 m = jacobian * w_rot;
    const Mat3 full = m * cov3d * m.transpose();
    Mat2 out = full.topLeftCorner<2, 2>();
    out(0, 0) += kCovLowPass;
    out(1, 1) += kCovLowPass;
    return out;
}

void sh_basis(const Vec3& dir, int degree, std::span<double> out) {
    out[0] = sh::C0;
    if (degree < 1)
        return;
    const double x = dir[0], y = dir[1], z = dir[2];
    out[1] = -sh::C1 * y;
    out[2] = sh::C1 * z;
    out[3] = -sh::C1 * x;
    if (degree < 2)
        return;
    const double xx = x * x, yy = y * y, zz = z * z;
    const double xy = x * y, yz = y * z, xz = x * z;
    out[4] = sh::C2[0] * xy;
    out[5] = sh::C2[1] * yz;
    out[6] = sh::C2[2] * (2 * zz - xx - yy);
    out[7] = sh::C2[3] * xz;
    out[8] = sh::C2[4] * (xx - yy);
    if (degree < 3)
        return;
    out[9] = sh::C3[0] * y * (3 * xx - yy);
    out[10] = sh::C3[1] * xy * z;
    out[11] = sh::C3[2] * y * (4 * zz - xx - yy);
    out[12] = sh::C3[3] * z * (2 * zz - 3 * xx - 3 * yy);
    out[13] = sh::C3[4] * x * (4 * zz - xx - yy);
    out[14] = sh::C3[5] * z * (xx - yy);
    out[15] = sh::C3[6] * x * (xx - 3 * yy);
}

void sh_basis_gradient(const Vec3& dir, int degree, std::span<Vec3> out) {
    out[0] = Vec3::Zero();
    if (degree < 1)
        return;
    const double x = dir[0], y = dir[1], z = dir[2];
    out[1] = Vec3(0, -sh::C1, 0);
    out[2] = Vec3(0, 0, sh::C1);
    out[3] = Vec3(-sh::C1, 0, 0);
    if (degree < 2)
        return;
    const double xx = x * x, yy = y * y, zz = z * z;
    out[4] = sh::C2[0] * Vec3(y, x, 0);
    out[5] = sh::C2[1] * Vec3(0, z, y);
    out[6] = sh::C2[2] * Vec3(-2 * x, -2 * y, 4 * z);
    out[7] = sh::C2[3] * Vec3(z, 0, x);
    out[8] = sh::C2[4] * Vec3(2 * x, -2 * y, 0);
    if (degree < 3)
        return;
    out[9] = sh::C3[0] * Vec3(6 * x * y, 3 * xx - 3 * yy, 0);
    out[10] = sh::C3[1] * Vec3(y * z, x * z, x * y);
    out[11] = sh::C3[2] * Vec3(-2 * x * y, 4 * zz - xx - 3 * yy, 8 * y * z);
    out[12] = sh::C3[3] * Vec3(-6 * x * z, -6 * y * z, 6 * zz - 3 * xx - 3 * yy);
    out[13] = sh::C3[4] * Vec3(4 * zz - 3 * xx - yy, -2 * x * y, 8 * x * z);
    out[14] = sh::C3[5] * Vec3(2 * x * z, -2 * y * z, xx - yy);
    out[15] = sh::C3[6] * Vec3(3 * xx - 3 * yy, -6 * x * y, 0);
}

Vec3 sh_to_color(std::span<const double> sh_coeffs, const Vec3& unit_dir, int degree) {
    const int n = (degree + 1) * (degree + 1);
    double basis[16];
    sh_basis(unit_dir, degree, std::span<double>(basis, n));
    Vec3 color;
    for (int ch = 0; ch < 3; ++ch) {
        double acc = 0.5;
        const double* h = sh_coeffs.data() + static_cast<std::size_t>(ch) * n;
        for (int m = 0; m < n; ++m)
            acc += h[m] * basis[m];
        color[ch] = std::clamp(acc, 0.0, 1.0);
    }
    return color;
}

std::optional<Splat2D> project_gaussian(const DynamicGaussian& g, const MotionModel& model,
                                        int sh_degree, const Camera& cam, double t,
                                        int gaussian_index, double near) {
    const Vec3 center = eval_center(g, model, t);
    const Vec3 v = world_to_camera(cam, center);
    const auto jacobian = projection_jacobian(cam, v, near);
    if (!jacobian)
        return std::nullopt;

    Splat2D s;
    s.gaussian_index = gaussian_index;
    s.depth = v[2];
    s.mean_px = Vec2(cam.fx * v[0] / v[2] + cam.cx, cam.fy * v[1] / v[2] + cam.cy);

    const Vec4 q = eval_rotation(g, t, gaussian_index);
    const Vec3 scale = eval_scale(g, model, t);
    const Mat3 cov3d = build_covariance(q, scale);
    s.cov2d = project_covariance(*jacobian, cam.rotation(), cov3d);

    // 3-sigma footprint test against the image expanded by the same radius.
    const double mid = 0.5 * (s.cov2d(0, 0) + s.cov2d(1, 1));
    const double disc = std::sqrt(std::max(mid * mid - s.cov2d.determinant(), 0.0));
    const double radius = kFootprintSigma * std::sqrt(mid + disc);
    if (s.mean_px[0] + radius < 0 || s.mean_px[0] - radius > cam.width ||
        s.mean_px[1] + radius < 0 || s.mean_px[1] - radius > cam.height)
        return std::nullopt;

    const Vec3 view_dir = (center - cam.position()).normalized();
    s.color = sh_to_color(g.sh_coeffs, view_dir, sh_degree);
    s.opacity = sigmoid(g.opacity_logit);
    return s;
}

std::vector<std::optional<Splat2D>> project_scene(const Scene& scene, const Camera& cam,
                                                  double t) {
    std::vector<std::optional<Splat2D>> out(scene.size());
    parallel_for(scene.size(), [&](std::size_t i) {
        out[i] = project_gaussian(scene.gaussians[i], scene.model, scene.sh_degree, cam, t,
                                  static_cast<int>(i));
    });
    return out;
}

} // namespace cdgs
