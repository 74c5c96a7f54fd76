#include "cdgs/gradients.hpp"

#include "cdgs/losses.hpp"
#include "cdgs/motion.hpp"
#include "cdgs/projection.hpp"
#include "cdgs/threading.hpp"
#include "raster_internal.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/core.h>
#include <random>
#include <stdexcept>

namespace cdgs {

using namespace detail;

GradientBuffer GradientBuffer::zeros(const Scene& scene) {
    GradientBuffer buf;
    buf.gaussians.resize(scene.size());
    const std::size_t nc = 3 * static_cast<std::size_t>(scene.model.coeffs_per_axis());
    const std::size_t ns = 3 * static_cast<std::size_t>((scene.sh_degree + 1) * (scene.sh_degree + 1));
    for (auto& g : buf.gaussians) {
        g.center_coeffs.assign(nc, 0.0);
        g.sh_coeffs.assign(ns, 0.0);
    }
    buf.view_grad_norm_sum.assign(scene.size(), 0.0);
    buf.view_count.assign(scene.size(), 0);
    return buf;
}

void GradientBuffer::accumulate(const GradientBuffer& other) {
    for (std::size_t i = 0; i < gaussians.size(); ++i) {
        auto& a = gaussians[i];
        const auto& b = other.gaussians[i];
        for (std::size_t k = 0; k < a.center_coeffs.size(); ++k)
            a.center_coeffs[k] += b.center_coeffs[k];
        for (int k = 0; k < 8; ++k)
            a.rot_coeffs[k] += b.rot_coeffs[k];
        for (int k = 0; k < 3; ++k) {
            a.log_scale[k] += b.log_scale[k];
            a.scale_slope[k] += b.scale_slope[k];
        }
        for (std::size_t k = 0; k < a.sh_coeffs.size(); ++k)
            a.sh_coeffs[k] += b.sh_coeffs[k];
        a.opacity_logit += b.opacity_logit;
        view_grad_norm_sum[i] += other.view_grad_norm_sum[i];
        view_count[i] += other.view_count[i];
    }
}

bool GradientBuffer::all_finite() const {
    auto ok = [](double v) { return std::isfinite(v); };
    for (const auto& g : gaussians) {
        for (double v : g.center_coeffs)
            if (!ok(v)) return false;
        for (double v : g.rot_coeffs)
            if (!ok(v)) return false;
        for (double v : g.log_scale)
            if (!ok(v)) return false;
        for (double v : g.scale_slope)
            if (!ok(v)) return false;
        for (double v : g.sh_coeffs)
            if (!ok(v)) return false;
        if (!ok(g.opacity_logit)) return false;
    }
    return true;
}

namespace {

// Splat-level adjoint accumulated by the per-pixel backward. d_mean_recon
// tracks only the image-loss part of the positional gradient: the density
// control threshold is calibrated against a reconstruction-only pipeline,
// and the flow term's large weight would otherwise dominate the statistic.
struct SplatAdjoint {
    Vec2 d_mean = Vec2::Zero();
    Vec2 d_mean_recon = Vec2::Zero();
    Mat2 d_conic = Mat2::Zero();
    Vec3 d_color = Vec3::Zero();
    double d_opacity = 0.0;
    Vec2 d_flow_fwd = Vec2::Zero();
    Vec2 d_flow_bwd = Vec2::Zero();

    void add(const SplatAdjoint& o) {
        d_mean += o.d_mean;
        d_mean_recon += o.d_mean_recon;
        d_conic += o.d_conic;
        d_color += o.d_color;
        d_opacity += o.d_opacity;
        d_flow_fwd += o.d_flow_fwd;
        d_flow_bwd += o.d_flow_bwd;
    }
};

struct PixContrib {
    int pos;   // position in the tile list
    int splat; // index into PreparedSplats::splats
    double alpha;
    double gauss;
    double trans; // transmittance before this contribution
};

void check_finite(const Image& img, const char* what) {
    for (double v : img.data)
        if (!std::isfinite(v))
            throw std::invalid_argument(fmt::format("backward: non-finite upstream {} gradient", what));
}

void check_finite(const FlowOutput& f, const char* what) {
    for (double v : f.fwd.uv)
        if (!std::isfinite(v))
            throw std::invalid_argument(fmt::format("backward: non-finite upstream {} gradient", what));
    for (double v : f.bwd.uv)
        if (!std::isfinite(v))
            throw std::invalid_argument(fmt::format("backward: non-finite upstream {} gradient", what));
}

// Per-pixel blending adjoint over one tile; writes into scratch slots
// aligned with the tile's splat list.
void tile_backward(const PreparedSplats& prep, const Camera& cam, std::size_t tile,
                   const Image* d_color, const Image* d_alpha, const FlowOutput* d_flow,
                   std::vector<SplatAdjoint>& scratch, std::vector<PixContrib>& contribs) {
    const auto& list = prep.tile_splats[tile];
    const int tx = static_cast<int>(tile) % prep.tile_cols;
    const int ty = static_cast<int>(tile) / prep.tile_cols;
    const int x_end = std::min((tx + 1) * kTileSize, cam.width);
    const int y_end = std::min((ty + 1) * kTileSize, cam.height);

    for (int y = ty * kTileSize; y < y_end; ++y) {
        for (int x = tx * kTileSize; x < x_end; ++x) {
            contribs.clear();
            const double t_final =
                blend_pixel(prep, list, x + 0.5, y + 0.5, [&](const Contribution& c) {
                    contribs.push_back({c.pos, c.splat, c.alpha, c.gauss, c.transmittance});
                });
            if (contribs.empty())
                continue;

            Vec3 dc = Vec3::Zero();
            if (d_color)
                dc = Vec3(d_color->at(y, x, 0), d_color->at(y, x, 1), d_color->at(y, x, 2));
            const double da = d_alpha ? d_alpha->at(y, x, 0) : 0.0;
            Vec2 dff = Vec2::Zero(), dfb = Vec2::Zero();
            if (d_flow) {
                dff = Vec2(d_flow->fwd.u(y, x), d_flow->fwd.v(y, x));
                dfb = Vec2(d_flow->bwd.u(y, x), d_flow->bwd.v(y, x));
            }

            Vec3 suffix_c = Vec3::Zero();
            Vec2 suffix_ff = Vec2::Zero(), suffix_fb = Vec2::Zero();
            for (std::size_t k = contribs.size(); k-- > 0;) {
                const PixContrib& c = contribs[k];
                const Splat2D& sp = prep.splats[c.splat];
                SplatAdjoint& sg = scratch[c.pos];
                const double w = c.alpha * c.trans;
                const double residual = 1.0 - c.alpha;

                sg.d_color += dc * w;
                const double d_alpha_recon = dc.dot(sp.color * c.trans - suffix_c / residual) +
                                             da * t_final / residual;
                double d_alpha_i = d_alpha_recon;
                if (d_flow) {
                    sg.d_flow_fwd += dff * w;
                    sg.d_flow_bwd += dfb * w;
                    d_alpha_i += dff.dot(prep.flow_fwd[c.splat] * c.trans - suffix_ff / residual);
                    d_alpha_i += dfb.dot(prep.flow_bwd[c.splat] * c.trans - suffix_fb / residual);
                }

                // alpha = min(0.99, opacity * gauss): zero slope while clamped
                if (sp.opacity * c.gauss < kAlphaClamp) {
                    sg.d_opacity += c.gauss * d_alpha_i;
                    const Vec2 d(x + 0.5 - sp.mean_px[0], y + 0.5 - sp.mean_px[1]);
                    const Mat2& q = prep.conic[c.splat];
                    const Vec2 dir_term = (c.gauss * 0.5) * ((q + q.transpose()) * d);
                    sg.d_mean += sp.opacity * d_alpha_i * dir_term;
                    sg.d_mean_recon += sp.opacity * d_alpha_recon * dir_term;
                    sg.d_conic += (sp.opacity * d_alpha_i * c.gauss * -0.5) * (d * d.transpose());
                }

                suffix_c += sp.color * w;
                if (d_flow) {
                    suffix_ff += prep.flow_fwd[c.splat] * w;
                    suffix_fb += prep.flow_bwd[c.splat] * w;
                }
            }
        }
    }
}

// Chains one splat's 2D adjoint through projection, SH, covariance and the
// motion basis into parameter gradients.
void splat_backward(const Scene& scene, const Camera& cam, double t, double dt, bool with_flow,
                    const PreparedSplats& prep, std::size_t i, const SplatAdjoint& adj,
                    GradientBuffer& buf) {
    const Splat2D& sp = prep.splats[i];
    const int gi = sp.gaussian_index;
    const DynamicGaussian& g = scene.gaussians[gi];
    const MotionModel& model = scene.model;
    GaussianGrad& out = buf.gaussians[gi];

    // --- forward recomputation ---
    const int nc = model.coeffs_per_axis();
    std::vector<double> basis_t(nc), basis_fwd, basis_bwd;
    eval_basis(model, t, basis_t);
    if (with_flow) {
        basis_fwd.resize(nc);
        basis_bwd.resize(nc);
        eval_basis(model, t + dt, basis_fwd);
        eval_basis(model, t - dt, basis_bwd);
    }
    const Vec3 center = eval_center(g, model, t);
    const Mat3 w_rot = cam.rotation();
    const Vec3 v = world_to_camera(cam, center);
    const double vz = v[2], inv_z = 1.0 / vz, inv_z2 = inv_z * inv_z;

    Eigen::Matrix<double, 2, 3> jac;
    jac << cam.fx * inv_z, 0, -cam.fx * v[0] * inv_z2,
           0, cam.fy * inv_z, -cam.fy * v[1] * inv_z2;

    const Vec4 q_raw = eval_rotation_raw(g, t);
    const double q_norm = q_raw.norm();
    const Vec4 q = q_raw / q_norm;
    const Mat3 rot = quat_to_rotmat(q);
    const Vec3 scale = eval_scale(g, model, t);
    const Mat3 rs = rot * scale.asDiagonal();
    const Mat3 cov3d = rs * rs.transpose();
    const Eigen::Matrix<double, 2, 3> m = jac * w_rot;

    // --- conic -> cov2d ---
    const Mat2 conic = prep.conic[i];
    const Mat2 d_cov2d = -conic * adj.d_conic * conic;

    // --- cov2d = M cov3d M^T + lowpass ---
    const Mat2 sym = d_cov2d + d_cov2d.transpose();
    Eigen::Matrix<double, 2, 3> d_m = sym * m * cov3d;
    const Mat3 d_cov3d = m.transpose() * d_cov2d * m;

    Vec3 d_v = Vec3::Zero();
    Vec3 d_center = Vec3::Zero();

    // --- mean_px = (fx vx/vz + cx, fy vy/vz + cy) ---
    d_v[0] += adj.d_mean[0] * cam.fx * inv_z;
    d_v[1] += adj.d_mean[1] * cam.fy * inv_z;
    d_v[2] += -adj.d_mean[0] * cam.fx * v[0] * inv_z2 - adj.d_mean[1] * cam.fy * v[1] * inv_z2;

    // --- flow2d = J * delta3 (both directions) ---
    if (with_flow) {
        const auto [fwd3, bwd3] = scene_flow_delta(g, model, t, dt);
        const Vec3 d_fwd3 = jac.transpose() * adj.d_flow_fwd;
        const Vec3 d_bwd3 = jac.transpose() * adj.d_flow_bwd;
        for (int axis = 0; axis < 3; ++axis)
            for (int k = 0; k < nc; ++k)
                out.center_coeffs[static_cast<std::size_t>(axis) * nc + k] +=
                    d_fwd3[axis] * (basis_fwd[k] - basis_t[k]) +
                    d_bwd3[axis] * (basis_t[k] - basis_bwd[k]);
        // J appears in the flow path on its own (flow2d = J delta, not M delta)
        const Eigen::Matrix<double, 2, 3> d_jac_flow =
            adj.d_flow_fwd * fwd3.transpose() + adj.d_flow_bwd * bwd3.transpose();
        d_v[0] += d_jac_flow(0, 2) * (-cam.fx * inv_z2);
        d_v[1] += d_jac_flow(1, 2) * (-cam.fy * inv_z2);
        d_v[2] += d_jac_flow(0, 0) * (-cam.fx * inv_z2) + d_jac_flow(1, 1) * (-cam.fy * inv_z2) +
                  d_jac_flow(0, 2) * (2 * cam.fx * v[0] * inv_z2 * inv_z) +
                  d_jac_flow(1, 2) * (2 * cam.fy * v[1] * inv_z2 * inv_z);
    }

    // --- M = J W_rot ---
    const Eigen::Matrix<double, 2, 3> d_jac = d_m * w_rot.transpose();
    d_v[0] += d_jac(0, 2) * (-cam.fx * inv_z2);
    d_v[1] += d_jac(1, 2) * (-cam.fy * inv_z2);
    d_v[2] += d_jac(0, 0) * (-cam.fx * inv_z2) + d_jac(1, 1) * (-cam.fy * inv_z2) +
              d_jac(0, 2) * (2 * cam.fx * v[0] * inv_z2 * inv_z) +
              d_jac(1, 2) * (2 * cam.fy * v[1] * inv_z2 * inv_z);

    // --- v = W_rot center + W_trans ---
    d_center += w_rot.transpose() * d_v;

    // --- color = clamp(SH(dir) + 0.5), dir = (center - cam_pos)/|.| ---
    {
        const int n_sh = (scene.sh_degree + 1) * (scene.sh_degree + 1);
        const Vec3 cam_pos = cam.position();
        const Vec3 u = center - cam_pos;
        const double un = u.norm();
        const Vec3 dir = u / un;
        double sh_vals[16];
        Vec3 sh_grads[16];
        sh_basis(dir, scene.sh_degree, std::span<double>(sh_vals, n_sh));
        sh_basis_gradient(dir, scene.sh_degree, std::span<Vec3>(sh_grads, n_sh));
        Vec3 d_dir = Vec3::Zero();
        for (int ch = 0; ch < 3; ++ch) {
            double pre = 0.5;
            const double* h = g.sh_coeffs.data() + static_cast<std::size_t>(ch) * n_sh;
            for (int k = 0; k < n_sh; ++k)
                pre += h[k] * sh_vals[k];
            if (pre <= 0.0 || pre >= 1.0)
                continue; // clamped channel
            const double dch = adj.d_color[ch];
            for (int k = 0; k < n_sh; ++k) {
                out.sh_coeffs[static_cast<std::size_t>(ch) * n_sh + k] += dch * sh_vals[k];
                d_dir += dch * h[k] * sh_grads[k];
            }
        }
        d_center += (d_dir - dir * dir.dot(d_dir)) / un;
    }

    // --- cov3d = (R S)(R S)^T ---
    const Mat3 d_rs = (d_cov3d + d_cov3d.transpose()) * rs;
    const Mat3 d_rot = d_rs * scale.asDiagonal();
    Vec3 d_scale;
    for (int k = 0; k < 3; ++k)
        d_scale[k] = rot.col(k).dot(d_rs.col(k));

    // --- scale = exp(log_scale (+ slope t)) ---
    for (int k = 0; k < 3; ++k) {
        const double d_log = d_scale[k] * scale[k];
        out.log_scale[k] += d_log;
        if (model.time_varying_scale)
            out.scale_slope[k] += d_log * t;
    }

    // --- R from unit quaternion q = (x,y,z,w) ---
    const double qx = q[0], qy = q[1], qz = q[2], qw = q[3];
    Vec4 d_q;
    {
        Mat3 dr;
        dr << 0, 2 * qy, 2 * qz, 2 * qy, -4 * qx, -2 * qw, 2 * qz, 2 * qw, -4 * qx;
        d_q[0] = dr.cwiseProduct(d_rot).sum();
        dr << -4 * qy, 2 * qx, 2 * qw, 2 * qx, 0, 2 * qz, -2 * qw, 2 * qz, -4 * qy;
        d_q[1] = dr.cwiseProduct(d_rot).sum();
        dr << -4 * qz, -2 * qw, 2 * qx, 2 * qw, -4 * qz, 2 * qy, 2 * qx, 2 * qy, 0;
        d_q[2] = dr.cwiseProduct(d_rot).sum();
        dr << 0, -2 * qz, 2 * qy, 2 * qz, 0, -2 * qx, -2 * qy, 2 * qx, 0;
        d_q[3] = dr.cwiseProduct(d_rot).sum();
    }

    // --- q = q_raw / |q_raw|, q_raw = intercept + slope t ---
    const Vec4 d_q_raw = (d_q - q * q.dot(d_q)) / q_norm;
    for (int k = 0; k < 4; ++k) {
        out.rot_coeffs[2 * k] += d_q_raw[k];
        out.rot_coeffs[2 * k + 1] += d_q_raw[k] * t;
    }

    // --- opacity = sigmoid(logit) ---
    out.opacity_logit += adj.d_opacity * sp.opacity * (1.0 - sp.opacity);

    // --- center coefficients (linearity of the basis) ---
    for (int axis = 0; axis < 3; ++axis)
        for (int k = 0; k < nc; ++k)
            out.center_coeffs[static_cast<std::size_t>(axis) * nc + k] +=
                d_center[axis] * basis_t[k];

    // Density-control statistics: recon-path screen gradient rescaled to
    // NDC units so the threshold transfers across resolutions.
    const Vec2 ndc_grad(adj.d_mean_recon[0] * cam.width * 0.5,
                        adj.d_mean_recon[1] * cam.height * 0.5);
    buf.view_grad_norm_sum[gi] += ndc_grad.norm();
    buf.view_count[gi] += 1;
}

} // namespace

GradientBuffer backward_render(const Scene& scene, const Camera& cam, double t, double dt,
                               const Image* d_color, const Image* d_alpha,
                               const FlowOutput* d_flow) {
    if (d_color)
        check_finite(*d_color, "color");
    if (d_alpha)
        check_finite(*d_alpha, "alpha");
    if (d_flow)
        check_finite(*d_flow, "flow");

    const bool with_flow = d_flow != nullptr;
    const PreparedSplats prep = prepare_splats(scene, cam, t, dt, with_flow);
    GradientBuffer buf = GradientBuffer::zeros(scene);

    // Phase 1: per-tile blending adjoints into tile-local scratch.
    const std::size_t n_tiles = prep.tile_splats.size();
    std::vector<std::vector<SplatAdjoint>> scratch(n_tiles);
    parallel_for(n_tiles, [&](std::size_t tile) {
        scratch[tile].assign(prep.tile_splats[tile].size(), SplatAdjoint{});
        std::vector<PixContrib> contribs;
        contribs.reserve(64);
        tile_backward(prep, cam, tile, d_color, d_alpha, d_flow, scratch[tile], contribs);
    });

    // Fixed-order reduction keeps the result independent of thread count.
    std::vector<SplatAdjoint> reduced(prep.size());
    for (std::size_t tile = 0; tile < n_tiles; ++tile) {
        const auto& list = prep.tile_splats[tile];
        for (std::size_t k = 0; k < list.size(); ++k)
            reduced[list[k]].add(scratch[tile][k]);
    }

    // Phase 2: chain every splat's 2D adjoint to parameter space. Each splat
    // owns its Gaussian's slot, so parallel writes stay disjoint.
    parallel_for(prep.size(), [&](std::size_t i) {
        splat_backward(scene, cam, t, dt, with_flow, prep, i, reduced[i], buf);
    });
    return buf;
}

GradientBuffer backward_color(const Scene& scene, const Camera& cam, double t,
                              const Image& d_color, const Image* d_alpha) {
    return backward_render(scene, cam, t, 0.0, &d_color, d_alpha, nullptr);
}

GradientBuffer backward_flow(const Scene& scene, const Camera& cam, double t, double dt,
                             const FlowOutput& d_flow) {
    return backward_render(scene, cam, t, dt, nullptr, nullptr, &d_flow);
}

namespace {

template <typename G>
void visit_params_impl(G& g, const MotionModel& model,
                       const std::function<void(double&, const std::string&)>& fn) {
    const int nc = model.coeffs_per_axis();
    static const char* axes = "xyz";
    static const char* quat = "xyzw";
    for (int axis = 0; axis < 3; ++axis)
        for (int k = 0; k < nc; ++k)
            fn(g.center_coeffs[static_cast<std::size_t>(axis) * nc + k],
               fmt::format("center[{},{}]", axes[axis], k));
    for (int k = 0; k < 4; ++k) {
        fn(g.rot_coeffs[2 * k], fmt::format("rot_intercept[{}]", quat[k]));
        fn(g.rot_coeffs[2 * k + 1], fmt::format("rot_slope[{}]", quat[k]));
    }
    for (int k = 0; k < 3; ++k)
        fn(g.log_scale[k], fmt::format("log_scale[{}]", axes[k]));
    if (model.time_varying_scale)
        for (int k = 0; k < 3; ++k)
            fn(g.scale_slope[k], fmt::format("scale_slope[{}]", axes[k]));
    const int n_sh = static_cast<int>(g.sh_coeffs.size()) / 3;
    for (int ch = 0; ch < 3; ++ch)
        for (int k = 0; k < n_sh; ++k)
            fn(g.sh_coeffs[static_cast<std::size_t>(ch) * n_sh + k],
               fmt::format("sh[{},{}]", "rgb"[ch], k));
    fn(g.opacity_logit, "opacity_logit");
}

} // namespace

void visit_params(DynamicGaussian& g, const MotionModel& model,
                  const std::function<void(double&, const std::string&)>& fn) {
    visit_params_impl(g, model, fn);
}

void visit_params(GaussianGrad& g, const MotionModel& model,
                  const std::function<void(double&, const std::string&)>& fn) {
    visit_params_impl(g, model, fn);
}

namespace {

struct GradCheckTargets {
    Image image;
    FlowOutput flow;
};

GradCheckTargets make_targets(const Camera& cam, std::uint64_t seed) {
    GradCheckTargets t;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    t.image = Image(cam.height, cam.width, 3);
    for (auto& v : t.image.data)
        v = uni(rng);
    t.flow.fwd = FlowField(cam.height, cam.width);
    t.flow.bwd = FlowField(cam.height, cam.width);
    std::uniform_real_distribution<double> flow_uni(-1.0, 1.0);
    for (auto& v : t.flow.fwd.uv)
        v = flow_uni(rng);
    for (auto& v : t.flow.bwd.uv)
        v = flow_uni(rng);
    return t;
}

double eval_named_loss(const Scene& scene, const Camera& cam, double t, double dt,
                       NamedLoss loss, const GradCheckTargets& targets, const LossWeights& w,
                       Image* d_img, FlowOutput* d_flow) {
    const bool with_flow = loss == NamedLoss::Flow || loss == NamedLoss::ReconFlow;
    const RenderBundle bundle = render_bundle(scene, cam, t, dt, with_flow);
    switch (loss) {
    case NamedLoss::L1:
        return loss_recon(bundle.color.color, targets.image, 0.0, d_img);
    case NamedLoss::Recon:
        return loss_recon(bundle.color.color, targets.image, w.lambda_dssim, d_img);
    case NamedLoss::Flow:
        return loss_flow(bundle.flow, targets.flow, d_flow);
    case NamedLoss::ReconFlow:
        return total_loss(bundle.color.color, targets.image, &bundle.flow, &targets.flow, w,
                          d_img, d_flow);
    case NamedLoss::Quadratic: {
        // Smooth reference loss for harness calibration.
        const Image& pred = bundle.color.color;
        const double inv_n = 1.0 / static_cast<double>(pred.data.size());
        double acc = 0.0;
        if (d_img)
            *d_img = Image(pred.height, pred.width, pred.channels);
        for (std::size_t i = 0; i < pred.data.size(); ++i) {
            const double d = pred.data[i] - targets.image.data[i];
            acc += 0.5 * d * d;
            if (d_img)
                d_img->data[i] = d * inv_n;
        }
        return acc * inv_n;
    }
    }
    return 0.0;
}

} // namespace

GradCheckReport grad_check(const Scene& scene, const Camera& cam, double t, NamedLoss loss,
                           double h, std::uint64_t target_seed,
                           const std::function<void(GradientBuffer&)>& tamper) {
    const GradCheckTargets targets = make_targets(cam, target_seed);
    // lambda_flow = 1 keeps both loss terms at comparable magnitude; a
    // 1000x offset would swamp the image-path gradients in FD cancellation
    // noise. The adjoint under test is identical for any weight.
    const LossWeights weights{0.2, 1.0};
    const double dt = 0.05;
    const bool with_flow = loss == NamedLoss::Flow || loss == NamedLoss::ReconFlow;

    Image d_img;
    FlowOutput d_flow;
    eval_named_loss(scene, cam, t, dt, loss, targets, weights, &d_img, &d_flow);
    GradientBuffer analytic =
        backward_render(scene, cam, t, dt, d_img.data.empty() ? nullptr : &d_img, nullptr,
                        with_flow ? &d_flow : nullptr);
    if (tamper)
        tamper(analytic);

    GradCheckReport report;
    report.step = h;
    double worst_score = -1.0;
    Scene probe = scene;
    for (std::size_t gi = 0; gi < probe.gaussians.size(); ++gi) {
        std::vector<double*> slots;
        std::vector<std::string> names;
        visit_params(probe.gaussians[gi], probe.model,
                     [&](double& v, const std::string& n) {
                         slots.push_back(&v);
                         names.push_back(n);
                     });
        std::vector<double> analytic_vals;
        visit_params(analytic.gaussians[gi], probe.model,
                     [&](double& v, const std::string&) { analytic_vals.push_back(v); });

        for (std::size_t p = 0; p < slots.size(); ++p) {
            const double saved = *slots[p];
            *slots[p] = saved + h;
            const double up =
                eval_named_loss(probe, cam, t, dt, loss, targets, weights, nullptr, nullptr);
            *slots[p] = saved - h;
            const double down =
                eval_named_loss(probe, cam, t, dt, loss, targets, weights, nullptr, nullptr);
            *slots[p] = saved;
            const double fd = (up - down) / (2 * h);
            const double an = analytic_vals[p];
            ++report.params_checked;

            const double denom = std::max(std::abs(fd), std::abs(an));
            const double abs_err = std::abs(fd - an);
            const bool tiny = denom < 1e-8; // FD noise floor: compare absolutely
            const double score = tiny ? abs_err : abs_err / denom;
            if (score > worst_score) {
                worst_score = score;
                report.worst_param = fmt::format("gaussian {} {}", gi, names[p]);
            }
            if (tiny)
                report.max_abs_err = std::max(report.max_abs_err, abs_err);
            else
                report.max_rel_err = std::max(report.max_rel_err, abs_err / denom);
        }
    }
    return report;
}

} // namespace cdgs
