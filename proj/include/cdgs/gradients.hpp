#pragma once

#include "cdgs/image.hpp"
#include "cdgs/rasterizer.hpp"
#include "cdgs/scene.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace cdgs {

/// Gradient slots mirroring DynamicGaussian's fields.
struct GaussianGrad {
    std::vector<double> center_coeffs;
    std::array<double, 8> rot_coeffs{};
    std::array<double, 3> log_scale{};
    std::array<double, 3> scale_slope{};
    std::vector<double> sh_coeffs;
    double opacity_logit = 0.0;
};

/// Per-Gaussian gradients of one backward pass, plus the view-space
/// positional gradient statistics consumed by density control.
struct GradientBuffer {
    std::vector<GaussianGrad> gaussians;
    std::vector<double> view_grad_norm_sum; // ||d mean|| in NDC-scaled units
    std::vector<std::uint32_t> view_count;  // 1 per pass in which the Gaussian projected

    static GradientBuffer zeros(const Scene& scene);
    void accumulate(const GradientBuffer& other);
    bool all_finite() const;
};

/// Exact adjoint of the full render: pixel gradients back to every Gaussian
/// coefficient. Any of the upstream gradients may be null. d_alpha is the
/// gradient w.r.t. the reported alpha channel (used when a background is
/// composited downstream). Throws std::invalid_argument on non-finite
/// upstream gradients.
GradientBuffer backward_render(const Scene& scene, const Camera& cam, double t, double dt,
                               const Image* d_color, const Image* d_alpha,
                               const FlowOutput* d_flow);

GradientBuffer backward_color(const Scene& scene, const Camera& cam, double t,
                              const Image& d_color, const Image* d_alpha = nullptr);

GradientBuffer backward_flow(const Scene& scene, const Camera& cam, double t, double dt,
                             const FlowOutput& d_flow);

/// Visits every optimizable scalar of g as (reference, name); the same
/// order applies to GaussianGrad. scale_slope is visited only when the
/// model has time-varying scale.
void visit_params(DynamicGaussian& g, const MotionModel& model,
                  const std::function<void(double&, const std::string&)>& fn);
void visit_params(GaussianGrad& g, const MotionModel& model,
                  const std::function<void(double&, const std::string&)>& fn);

enum class NamedLoss { L1, Recon, Flow, ReconFlow, Quadratic };

struct GradCheckReport {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    std::string worst_param;
    double step = 0.0;
    std::size_t params_checked = 0;
};

/// Central finite differences of the named loss against the analytic
/// backward, parameter by parameter. Targets are generated pseudo-randomly
/// from target_seed. `tamper` (test hook) mutates the analytic buffer
/// before comparison so the harness can prove it localizes defects.
GradCheckReport grad_check(const Scene& scene, const Camera& cam, double t, NamedLoss loss,
                           double h = 1e-5, std::uint64_t target_seed = 7,
                           const std::function<void(GradientBuffer&)>& tamper = nullptr);

} // namespace cdgs
