#include "cdgs/trainer.hpp"

#include "cdgs/motion.hpp"
#include "cdgs/projection.hpp"
#include "cdgs/rasterizer.hpp"
#include "cdgs/threading.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fmt/core.h>
#include <stdexcept>

namespace cdgs {

TrainConfig TrainConfig::scaled_to(int new_total) const {
    TrainConfig out = *this;
    const double s = static_cast<double>(new_total) / total_iters;
    auto scale = [&](int v) { return std::max(1, static_cast<int>(std::lround(v * s))); };
    out.total_iters = new_total;
    out.static_iters = scale(static_iters);
    out.densify_interval = std::max(5, static_cast<int>(std::lround(densify_interval * s)));
    out.densify_from = scale(densify_from);
    out.densify_until = scale(densify_until);
    out.opacity_reset_interval = scale(opacity_reset_interval);
    out.log_interval = std::max(1, static_cast<int>(std::lround(log_interval * s)));
    return out;
}

AdamState AdamState::zeros(const Scene& scene) {
    AdamState st;
    const GradientBuffer proto = GradientBuffer::zeros(scene);
    st.m = proto.gaussians;
    st.v = proto.gaussians;
    return st;
}

void AdamState::remap(const Scene& scene, const std::vector<int>& source_index) {
    const GradientBuffer proto = GradientBuffer::zeros(scene);
    std::vector<GaussianGrad> nm = proto.gaussians, nv = proto.gaussians;
    for (std::size_t i = 0; i < source_index.size(); ++i) {
        if (source_index[i] >= 0) {
            nm[i] = m[source_index[i]];
            nv[i] = v[source_index[i]];
        }
    }
    m = std::move(nm);
    v = std::move(nv);
}

void DensifyStats::resize(std::size_t n) {
    grad_norm_sum.assign(n, 0.0);
    observations.assign(n, 0);
}

void DensifyStats::accumulate(const GradientBuffer& buf) {
    for (std::size_t i = 0; i < grad_norm_sum.size(); ++i) {
        grad_norm_sum[i] += buf.view_grad_norm_sum[i];
        observations[i] += buf.view_count[i];
    }
}

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kEps = 1e-15;

struct GroupLr {
    double center, rotation, log_scale, scale_slope, sh_dc, sh_rest, opacity;
};

GroupLr learning_rates(const TrainConfig& cfg, const Scene& scene, int iter) {
    const double frac = std::clamp(static_cast<double>(iter) / cfg.total_iters, 0.0, 1.0);
    const double center =
        scene.extent * cfg.lr_center * std::pow(cfg.lr_center_final / cfg.lr_center, frac);
    return {center,        cfg.lr_rotation, cfg.lr_log_scale, cfg.lr_scale_slope,
            cfg.lr_sh_dc,  cfg.lr_sh_rest,  cfg.lr_opacity};
}

} // namespace

void adam_step(Scene& scene, AdamState& state, const GradientBuffer& grads,
               const TrainConfig& cfg, int iter, bool static_stage) {
    if (grads.gaussians.size() != scene.size())
        throw std::invalid_argument("adam_step: gradient/scene size mismatch");
    ++state.step;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.step));
    const GroupLr lr = learning_rates(cfg, scene, iter);
    const int nc = scene.model.coeffs_per_axis();
    const int n_sh = (scene.sh_degree + 1) * (scene.sh_degree + 1);

    std::atomic<const char*> bad_group{nullptr};
    parallel_for(scene.size(), [&](std::size_t i) {
        DynamicGaussian& p = scene.gaussians[i];
        const GaussianGrad& g = grads.gaussians[i];
        GaussianGrad& m = state.m[i];
        GaussianGrad& v = state.v[i];

        auto step_one = [&](double& param, double& mo, double& ve, double grad, double rate,
                            const char* group) {
            if (!std::isfinite(grad)) {
                bad_group.store(group);
                return;
            }
            mo = kBeta1 * mo + (1 - kBeta1) * grad;
            ve = kBeta2 * ve + (1 - kBeta2) * grad * grad;
            param -= rate * (mo / bc1) / (std::sqrt(ve / bc2) + kEps);
        };

        for (int axis = 0; axis < 3; ++axis)
            for (int k = 0; k < nc; ++k) {
                if (static_stage && k > 0)
                    continue; // intercepts only
                const std::size_t idx = static_cast<std::size_t>(axis) * nc + k;
                step_one(p.center_coeffs[idx], m.center_coeffs[idx], v.center_coeffs[idx],
                         g.center_coeffs[idx], lr.center, "center");
            }
        for (int k = 0; k < 8; ++k) {
            if (static_stage && (k % 2) == 1)
                continue; // rotation intercepts only
            step_one(p.rot_coeffs[k], m.rot_coeffs[k], v.rot_coeffs[k], g.rot_coeffs[k],
                     lr.rotation, "rotation");
        }
        for (int k = 0; k < 3; ++k)
            step_one(p.log_scale[k], m.log_scale[k], v.log_scale[k], g.log_scale[k],
                     lr.log_scale, "log_scale");
        if (scene.model.time_varying_scale && !static_stage)
            for (int k = 0; k < 3; ++k)
                step_one(p.scale_slope[k], m.scale_slope[k], v.scale_slope[k], g.scale_slope[k],
                         lr.scale_slope, "scale_slope");
        for (int ch = 0; ch < 3; ++ch)
            for (int k = 0; k < n_sh; ++k) {
                const std::size_t idx = static_cast<std::size_t>(ch) * n_sh + k;
                step_one(p.sh_coeffs[idx], m.sh_coeffs[idx], v.sh_coeffs[idx], g.sh_coeffs[idx],
                         k == 0 ? lr.sh_dc : lr.sh_rest, k == 0 ? "sh_dc" : "sh_rest");
            }
        step_one(p.opacity_logit, m.opacity_logit, v.opacity_logit, g.opacity_logit, lr.opacity,
                 "opacity");
    });
    if (const char* group = bad_group.load())
        throw std::runtime_error(fmt::format("adam_step: non-finite gradient in group '{}'", group));
}

void densify_and_prune(Scene& scene, AdamState& state, DensifyStats& stats,
                       const TrainConfig& cfg, double t_ref, std::mt19937_64& rng) {
    const std::size_t n = scene.size();
    std::normal_distribution<double> normal(0.0, 1.0);

    enum class Fate { Keep, Prune, Split, Clone };
    std::vector<Fate> fate(n, Fate::Keep);
    std::vector<std::pair<double, std::size_t>> candidates; // (avg grad, index)
    for (std::size_t i = 0; i < n; ++i) {
        const DynamicGaussian& g = scene.gaussians[i];
        if (sigmoid(g.opacity_logit) < cfg.prune_opacity) {
            fate[i] = Fate::Prune;
            continue;
        }
        const double avg = stats.grad_norm_sum[i] / std::max<std::uint32_t>(1, stats.observations[i]);
        if (avg <= cfg.grad_threshold)
            continue;
        candidates.emplace_back(avg, i);
    }

    // Highest average gradient first within the per-event budget; ties are
    // broken by index so the selection is deterministic.
    const std::size_t budget = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(cfg.densify_fraction * static_cast<double>(n))));
    if (candidates.size() > budget) {
        std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first)
                return a.first > b.first;
            return a.second < b.second;
        });
        candidates.resize(budget);
    }
    for (const auto& [avg, i] : candidates) {
        const DynamicGaussian& g = scene.gaussians[i];
        const double max_scale =
            std::exp(*std::max_element(g.log_scale.begin(), g.log_scale.end()));
        fate[i] = max_scale > cfg.percent_dense * scene.extent ? Fate::Split : Fate::Clone;
    }

    if (std::all_of(fate.begin(), fate.end(), [](Fate f) { return f == Fate::Prune; }) && n > 0) {
        // Never prune the whole scene: keep the most opaque Gaussian.
        std::size_t best = 0;
        for (std::size_t i = 1; i < n; ++i)
            if (scene.gaussians[i].opacity_logit > scene.gaussians[best].opacity_logit)
                best = i;
        fate[best] = Fate::Keep;
    }

    std::vector<DynamicGaussian> out;
    std::vector<int> source;
    out.reserve(n + n / 4);
    source.reserve(n + n / 4);
    for (std::size_t i = 0; i < n; ++i) {
        if (fate[i] == Fate::Prune || fate[i] == Fate::Split)
            continue;
        out.push_back(scene.gaussians[i]);
        source.push_back(static_cast<int>(i));
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (fate[i] == Fate::Split) {
            const DynamicGaussian& parent = scene.gaussians[i];
            const Vec4 q = eval_rotation(parent, t_ref, static_cast<int>(i));
            const Vec3 s = eval_scale(parent, scene.model, t_ref);
            const Mat3 rs = quat_to_rotmat(q) * s.asDiagonal();
            for (int child = 0; child < 2; ++child) {
                DynamicGaussian c = parent;
                const Vec3 z(normal(rng), normal(rng), normal(rng));
                const Vec3 offset = rs * z;
                for (int axis = 0; axis < 3; ++axis) {
                    c.center_coeff(axis, 0) += offset[axis];
                    c.log_scale[axis] -= std::log(cfg.split_scale_shrink);
                }
                out.push_back(std::move(c));
                source.push_back(-1);
            }
        } else if (fate[i] == Fate::Clone) {
            out.push_back(scene.gaussians[i]);
            source.push_back(-1);
        }
    }

    scene.gaussians = std::move(out);
    state.remap(scene, source);
    stats.resize(scene.size());
}

std::array<Vec3, 2> default_bounds(const Dataset& ds) {
    Vec3 center = Vec3::Zero();
    for (const auto& f : ds.train)
        center += f.camera.position();
    center /= static_cast<double>(ds.train.size());
    double radius = 0.0;
    for (const auto& f : ds.train)
        radius = std::max(radius, (f.camera.position() - center).norm());
    const Vec3 half = Vec3::Constant(0.5 * std::max(radius, 1e-3));
    return {center - half, center + half};
}

Scene init_scene(const MotionModel& model, int sh_degree, const std::vector<Vec3>& points,
                 const std::vector<Vec3>& colors, const std::array<Vec3, 2>& bounds,
                 const TrainConfig& cfg) {
    std::mt19937_64 rng(cfg.seed ^ 0x5eed1234abcdef01ull);
    std::vector<Vec3> pos = points;
    std::vector<Vec3> col = colors;
    if (pos.empty()) {
        std::uniform_real_distribution<double> uni(0.0, 1.0);
        pos.reserve(cfg.init_points);
        col.reserve(cfg.init_points);
        for (int i = 0; i < cfg.init_points; ++i) {
            Vec3 p;
            for (int k = 0; k < 3; ++k)
                p[k] = bounds[0][k] + uni(rng) * (bounds[1][k] - bounds[0][k]);
            pos.push_back(p);
            col.push_back(Vec3(uni(rng), uni(rng), uni(rng)));
        }
    }
    if (col.size() != pos.size())
        col.assign(pos.size(), Vec3(0.5, 0.5, 0.5));

    const std::size_t n = pos.size();
    Vec3 centroid = Vec3::Zero();
    for (const auto& p : pos)
        centroid += p;
    centroid /= static_cast<double>(std::max<std::size_t>(1, n));
    double extent = 0.0;
    for (const auto& p : pos)
        extent = std::max(extent, (p - centroid).norm());

    // Initial size from the mean distance to the 3 nearest neighbors,
    // against a capped candidate set to stay near-linear for large inits.
    const std::size_t stride = std::max<std::size_t>(1, n / 5000);
    std::vector<Vec3> candidates;
    for (std::size_t i = 0; i < n; i += stride)
        candidates.push_back(pos[i]);

    Scene scene;
    scene.model = model;
    scene.sh_degree = sh_degree;
    scene.extent = std::max(extent, 1e-6);
    scene.time_range = {0.0, 1.0};
    scene.gaussians.resize(n);

    parallel_for(n, [&](std::size_t i) {
        double best[3] = {1e30, 1e30, 1e30};
        for (const auto& q : candidates) {
            const double d = (q - pos[i]).squaredNorm();
            if (d <= 1e-14)
                continue; // self or duplicate
            if (d < best[0]) {
                best[2] = best[1];
                best[1] = best[0];
                best[0] = d;
            } else if (d < best[1]) {
                best[2] = best[1];
                best[1] = d;
            } else if (d < best[2]) {
                best[2] = d;
            }
        }
        double mean_dist = 0.0;
        int found = 0;
        for (double b : best)
            if (b < 1e30) {
                mean_dist += std::sqrt(b);
                ++found;
            }
        mean_dist = found > 0 ? mean_dist / found : 0.01 * scene.extent;

        DynamicGaussian g = DynamicGaussian::zeros(model, sh_degree);
        for (int axis = 0; axis < 3; ++axis) {
            g.center_coeff(axis, 0) = pos[i][axis];
            g.log_scale[axis] = std::log(std::max(mean_dist, 1e-7));
        }
        const int n_sh = (sh_degree + 1) * (sh_degree + 1);
        for (int ch = 0; ch < 3; ++ch)
            g.sh_coeffs[static_cast<std::size_t>(ch) * n_sh] = (col[i][ch] - 0.5) / 0.28209479177387814;
        g.opacity_logit = logit(0.1);
        scene.gaussians[i] = std::move(g);
    });
    return scene;
}

namespace {

void reset_opacity(Scene& scene, AdamState& state) {
    const double cap = logit(0.01);
    for (std::size_t i = 0; i < scene.size(); ++i) {
        auto& g = scene.gaussians[i];
        g.opacity_logit = std::min(g.opacity_logit, cap);
        state.m[i].opacity_logit = 0.0;
        state.v[i].opacity_logit = 0.0;
    }
}

std::optional<double> probe_psnr(const Scene& scene, std::span<const TrainingFrame> probes,
                                 const Vec3& background) {
    if (probes.empty())
        return std::nullopt;
    const auto& f = probes.front();
    const RenderOutput out = render_color(scene, f.camera, f.t);
    return psnr(composite_over(out, background), f.image);
}

void run_stage(TrainState& ts, std::span<const TrainingFrame> frames,
               std::span<const TrainingFrame> probes, const TrainConfig& cfg, bool static_stage,
               int end_iter, const TrainLogSink& sink) {
    if (frames.empty())
        throw std::invalid_argument("train: no training frames");
    int time_steps = 0;
    for (const auto& f : frames)
        time_steps = std::max(time_steps, f.time_index + 1);
    const double dt = 1.0 / time_steps;
    std::uniform_int_distribution<std::size_t> pick(0, frames.size() - 1);

    for (; ts.iter < end_iter; ++ts.iter) {
        const int iter = ts.iter + 1; // 1-based for schedule arithmetic
        const TrainingFrame& frame = frames[pick(ts.rng)];
        const bool want_flow = !static_stage && cfg.use_flow && cfg.weights.lambda_flow > 0 &&
                               frame.flow_fwd && frame.flow_bwd;

        const RenderBundle bundle = render_bundle(ts.scene, frame.camera, frame.t, dt, want_flow);
        const Image pred = composite_over(bundle.color, cfg.background);

        Image d_pred;
        const double recon = loss_recon(pred, frame.image, cfg.weights.lambda_dssim, &d_pred);
        double flow_term = 0.0;
        FlowOutput d_flow;
        if (want_flow) {
            FlowOutput gt;
            gt.fwd = *frame.flow_fwd;
            gt.bwd = *frame.flow_bwd;
            flow_term = loss_flow(bundle.flow, gt, &d_flow);
            for (auto& v : d_flow.fwd.uv)
                v *= cfg.weights.lambda_flow;
            for (auto& v : d_flow.bwd.uv)
                v *= cfg.weights.lambda_flow;
        }

        // pred = color + bg * (1 - alpha), so the alpha adjoint is -d_pred . bg
        Image d_alpha;
        const bool has_bg = cfg.background.squaredNorm() > 0;
        if (has_bg) {
            d_alpha = Image(pred.height, pred.width, 1);
            for (int y = 0; y < pred.height; ++y)
                for (int x = 0; x < pred.width; ++x) {
                    double acc = 0.0;
                    for (int c = 0; c < 3; ++c)
                        acc -= d_pred.at(y, x, c) * cfg.background[c];
                    d_alpha.at(y, x, 0) = acc;
                }
        }

        const GradientBuffer grads =
            backward_render(ts.scene, frame.camera, frame.t, dt, &d_pred,
                            has_bg ? &d_alpha : nullptr, want_flow ? &d_flow : nullptr);
        ts.stats.accumulate(grads);
        adam_step(ts.scene, ts.adam, grads, cfg, ts.iter, static_stage);

        if (iter > cfg.densify_from && iter <= cfg.densify_until &&
            iter % cfg.densify_interval == 0)
            densify_and_prune(ts.scene, ts.adam, ts.stats, cfg, frame.t, ts.rng);
        if (!static_stage && iter <= cfg.densify_until &&
            iter % cfg.opacity_reset_interval == 0)
            reset_opacity(ts.scene, ts.adam);

        if (sink && (iter % cfg.log_interval == 0 || iter == end_iter)) {
            TrainRecord rec;
            rec.iter = iter;
            rec.stage = static_stage ? "static" : "dynamic";
            rec.loss_recon = recon;
            rec.loss_flow = flow_term;
            rec.loss = recon + cfg.weights.lambda_flow * flow_term;
            rec.n_gaussians = ts.scene.size();
            rec.probe_psnr = probe_psnr(ts.scene, probes, cfg.background);
            sink(rec);
        }
    }
}

} // namespace

void run_static_stage(TrainState& ts, std::span<const TrainingFrame> frames,
                      std::span<const TrainingFrame> probes, const TrainConfig& cfg,
                      const TrainLogSink& sink) {
    run_stage(ts, frames, probes, cfg, true, cfg.static_iters, sink);
}

void run_dynamic_stage(TrainState& ts, std::span<const TrainingFrame> frames,
                       std::span<const TrainingFrame> probes, const TrainConfig& cfg,
                       const TrainLogSink& sink) {
    run_stage(ts, frames, probes, cfg, false, cfg.total_iters, sink);
}

Scene train(const Dataset& ds, const MotionModel& model, int sh_degree, const TrainConfig& cfg,
            const TrainLogSink& sink) {
    TrainState ts;
    ts.rng.seed(cfg.seed);
    const auto bounds = ds.scene_bounds ? *ds.scene_bounds : default_bounds(ds);
    ts.scene = init_scene(model, sh_degree, ds.init_points, ds.init_colors, bounds, cfg);
    ts.adam = AdamState::zeros(ts.scene);
    ts.stats.resize(ts.scene.size());
    run_static_stage(ts, ds.train, ds.probe, cfg, sink);
    run_dynamic_stage(ts, ds.train, ds.probe, cfg, sink);
    return std::move(ts.scene);
}

ChunkedScene train_chunked(const Dataset& ds, const MotionModel& model, int sh_degree,
                           const TrainConfig& cfg, const TrainLogSink& sink) {
    if (!cfg.chunk_size)
        throw std::invalid_argument("train_chunked: cfg.chunk_size is not set");
    const int chunk_len = std::min(*cfg.chunk_size, ds.time_steps);
    const int n_chunks = (ds.time_steps + chunk_len - 1) / chunk_len;

    ChunkedScene cs;
    for (int c = 0; c < n_chunks; ++c) {
        const int start = c * chunk_len;
        const int len = std::min(chunk_len, ds.time_steps - start);

        Dataset sub;
        sub.background = ds.background;
        sub.time_steps = len;
        sub.init_points = ds.init_points;
        sub.init_colors = ds.init_colors;
        sub.scene_bounds = ds.scene_bounds;
        for (const auto& f : ds.train) {
            if (f.time_index < start || f.time_index >= start + len)
                continue;
            TrainingFrame local = f;
            local.time_index = f.time_index - start;
            local.t = static_cast<double>(local.time_index) / len;
            sub.train.push_back(std::move(local));
        }

        TrainConfig chunk_cfg = cfg;
        chunk_cfg.seed = cfg.seed + static_cast<std::uint64_t>(c);
        ChunkedScene::Chunk chunk;
        chunk.time_range = {static_cast<double>(start) / ds.time_steps,
                            static_cast<double>(start + len) / ds.time_steps};
        chunk.scene = train(sub, model, sh_degree, chunk_cfg, sink);
        cs.chunks.push_back(std::move(chunk));
    }
    return cs;
}

std::size_t baseline_d3dgs_memory(const Scene& scene, int time_steps) {
    const int sh = (scene.sh_degree + 1) * (scene.sh_degree + 1);
    const std::size_t floats_per_gaussian =
        7ull * time_steps + 3 + 3ull * sh + 1; // center+rotation per step, static the rest
    return scene.size() * floats_per_gaussian * 4;
}

} // namespace cdgs
