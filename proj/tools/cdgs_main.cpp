// cdgs: train, render, inspect and benchmark compact dynamic Gaussian scenes.
//
// Exit codes: 0 success, 2 usage error, 3 data/file error, 4 numeric failure.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cdgs/gradients.hpp"
#include "cdgs/io.hpp"
#include "cdgs/losses.hpp"
#include "cdgs/motion.hpp"
#include "cdgs/rasterizer.hpp"
#include "cdgs/scene.hpp"
#include "cdgs/threading.hpp"
#include "cdgs/trainer.hpp"

#include <fmt/core.h>

#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <variant>

#ifndef CDGS_VERSION
#define CDGS_VERSION "0.1.0"
#endif

namespace {

using namespace cdgs;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Either a plain or a chunked scene file.
using SceneFile = std::variant<Scene, ChunkedScene>;

SceneFile load_scene_file(const std::string& path) {
    if (is_chunked_file(path))
        return load_chunked(path);
    return load_scene(path);
}

const Scene& scene_at(const SceneFile& sf, double t) {
    if (std::holds_alternative<Scene>(sf))
        return std::get<Scene>(sf);
    const auto& cs = std::get<ChunkedScene>(sf);
    const int idx = cs.find_chunk(t);
    if (idx < 0)
        throw DataError(fmt::format("t={} outside chunk coverage", t));
    return cs.chunks[idx].scene;
}

double local_time(const SceneFile& sf, double t) {
    if (std::holds_alternative<Scene>(sf))
        return t;
    const auto& cs = std::get<ChunkedScene>(sf);
    const int idx = cs.find_chunk(t);
    if (idx < 0)
        throw DataError(fmt::format("t={} outside chunk coverage", t));
    return cs.to_local_time(idx, t);
}

// "id:N" against a dataset, or 21 comma-separated numbers: a row-major 3x3
// intrinsic matrix followed by a row-major 3x4 world-to-camera (renderer
// convention: x right, y down, z forward).
Camera parse_camera_spec(const std::string& spec, const std::optional<std::string>& data_dir,
                         int width, int height) {
    if (spec.rfind("id:", 0) == 0) {
        if (!data_dir)
            throw CLI::ValidationError("--camera id:N requires --data");
        const int want = std::stoi(spec.substr(3));
        const DatasetManifest m = load_manifest(*data_dir);
        for (const auto& f : m.frames)
            if (f.camera_id == want)
                return m.camera_for(f);
        throw DataError(fmt::format("camera id {} not present in {}", want, *data_dir));
    }

    std::vector<double> nums;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ','))
        nums.push_back(std::stod(item));
    if (nums.size() != 21)
        throw CLI::ValidationError(
            "--camera expects 'id:N' or 21 numbers (3x3 K, then 3x4 world-to-camera)");

    const double fx = nums[0], cx = nums[2], fy = nums[4], cy = nums[5];
    Mat4 w2c = Mat4::Identity();
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c)
            w2c(r, c) = nums[9 + 4 * r + c];
    if (width <= 0)
        width = static_cast<int>(std::lround(2 * cx));
    if (height <= 0)
        height = static_cast<int>(std::lround(2 * cy));
    return Camera(width, height, fx, fy, cx, cy, w2c);
}

void write_run_record(const std::string& out_path, const std::string& command, const json& cfg) {
    json j;
    j["command"] = command;
    j["version"] = CDGS_VERSION;
    j["config"] = cfg;
    std::ofstream(out_path + ".run.json") << j.dump(2) << "\n";
}

// --- train ------------------------------------------------------------------

struct TrainArgs {
    std::string data, out, log_path;
    int fourier_l = 0, poly_d = 0, spline_n = 0;
    int sh = 3;
    bool tvs = false;
    int iters = 30000, static_iters = 3000;
    double lambda = 0.2, lambda_flow = 1000.0;
    bool no_flow = false;
    int chunk = 0;
    std::uint64_t seed = 0;
    int init_points = 5000;
    std::vector<double> background;
};

int cmd_train(const TrainArgs& a) {
    MotionModel model{MotionKind::Fourier, 2, a.tvs};
    if (a.poly_d > 0)
        model = {MotionKind::Polynomial, a.poly_d, a.tvs};
    else if (a.spline_n > 0)
        model = {MotionKind::Spline, a.spline_n, a.tvs};
    else if (a.fourier_l > 0)
        model = {MotionKind::Fourier, a.fourier_l, a.tvs};

    const DatasetManifest manifest = load_manifest(a.data);
    const Dataset ds = load_dataset(manifest);

    TrainConfig cfg;
    if (a.iters != cfg.total_iters)
        cfg = cfg.scaled_to(a.iters);
    cfg.static_iters = a.static_iters == 3000 ? cfg.static_iters : a.static_iters;
    cfg.weights.lambda_dssim = a.lambda;
    cfg.weights.lambda_flow = a.lambda_flow;
    cfg.use_flow = !a.no_flow;
    cfg.seed = a.seed;
    cfg.init_points = a.init_points;
    cfg.background = ds.background;
    if (!a.background.empty())
        cfg.background = Vec3(a.background[0], a.background[1], a.background[2]);
    if (a.chunk > 0)
        cfg.chunk_size = a.chunk;

    const std::string log_path = a.log_path.empty() ? a.out + ".log.jsonl" : a.log_path;
    std::ofstream log(log_path);
    const TrainLogSink sink = [&](const TrainRecord& r) {
        json j;
        j["iter"] = r.iter;
        j["stage"] = r.stage;
        j["loss"] = r.loss;
        j["loss_recon"] = r.loss_recon;
        j["loss_flow"] = r.loss_flow;
        j["n_gaussians"] = r.n_gaussians;
        if (r.probe_psnr)
            j["probe_psnr"] = std::isinf(*r.probe_psnr) ? json("inf") : json(*r.probe_psnr);
        log << j.dump() << "\n";
        std::cerr << fmt::format("[{}] iter {:6d} loss {:.5f} N {}\n", r.stage, r.iter, r.loss,
                                 r.n_gaussians);
    };

    if (cfg.chunk_size) {
        const ChunkedScene cs = train_chunked(ds, model, a.sh, cfg, sink);
        save_chunked(a.out, cs);
    } else {
        const Scene scene = train(ds, model, a.sh, cfg, sink);
        save_scene(a.out, scene);
    }

    json cfg_json;
    cfg_json["data"] = a.data;
    cfg_json["model_kind"] = static_cast<int>(model.kind);
    cfg_json["order"] = model.order;
    cfg_json["sh"] = a.sh;
    cfg_json["iters"] = cfg.total_iters;
    cfg_json["static_iters"] = cfg.static_iters;
    cfg_json["lambda"] = cfg.weights.lambda_dssim;
    cfg_json["lambda_flow"] = cfg.weights.lambda_flow;
    cfg_json["use_flow"] = cfg.use_flow;
    cfg_json["seed"] = cfg.seed;
    cfg_json["init_points"] = cfg.init_points;
    cfg_json["threads"] = ThreadPool::instance().threads();
    if (cfg.chunk_size)
        cfg_json["chunk"] = *cfg.chunk_size;
    write_run_record(a.out, "train", cfg_json);

    // Final held-out metrics when the manifest marks probe frames.
    const SceneFile sf = load_scene_file(a.out);
    if (!ds.probe.empty()) {
        double sum_psnr = 0, sum_ssim = 0;
        for (const auto& f : ds.probe) {
            const Scene& sc = scene_at(sf, f.t);
            const Image pred =
                composite_over(render_color(sc, f.camera, local_time(sf, f.t)), cfg.background);
            sum_psnr += psnr(pred, f.image);
            sum_ssim += ssim(pred, f.image);
        }
        std::cout << fmt::format("probe PSNR {:.3f} dB  SSIM {:.4f}  ({} frames)\n",
                                 sum_psnr / ds.probe.size(), sum_ssim / ds.probe.size(),
                                 ds.probe.size());
    }
    return kExitOk;
}

// --- render -----------------------------------------------------------------

int cmd_render(const std::string& scene_path, const std::string& camera_spec,
               const std::optional<std::string>& data_dir, double t, const std::string& out,
               const std::string& flow_out, double dt, int width, int height,
               const std::vector<double>& bg) {
    const SceneFile sf = load_scene_file(scene_path);
    const Camera cam = parse_camera_spec(camera_spec, data_dir, width, height);
    const Vec3 background = bg.empty() ? Vec3::Zero() : Vec3(bg[0], bg[1], bg[2]);

    const Scene& scene = scene_at(sf, t);
    const double tl = local_time(sf, t);
    const RenderOutput color = render_color(scene, cam, tl);
    write_image(out, composite_over(color, background));

    if (!flow_out.empty()) {
        const FlowOutput flow = render_flow(scene, cam, tl, dt);
        std::filesystem::path base(flow_out);
        const std::string stem = (base.parent_path() / base.stem()).string();
        write_flo(stem + "_fwd.flo", flow.fwd);
        write_flo(stem + "_bwd.flo", flow.bwd);
    }

    json cfg;
    cfg["scene"] = scene_path;
    cfg["camera"] = camera_spec;
    cfg["t"] = t;
    cfg["dt"] = dt;
    write_run_record(out, "render", cfg);
    return kExitOk;
}

// --- compose ----------------------------------------------------------------

int cmd_compose(const std::string& a_path, const std::string& b_path,
                const std::vector<double>& translate, double tshift, const std::string& out) {
    const Scene a = load_scene(a_path);
    const Scene b = load_scene(b_path);
    Mat4 tf = Mat4::Identity();
    if (!translate.empty()) {
        tf(0, 3) = translate[0];
        tf(1, 3) = translate[1];
        tf(2, 3) = translate[2];
    }
    const Scene merged = compose(a, b, tf, TimeMap{1.0, tshift});
    save_scene(out, merged);

    json cfg;
    cfg["a"] = a_path;
    cfg["b"] = b_path;
    cfg["translate"] = translate;
    cfg["tshift"] = tshift;
    write_run_record(out, "compose", cfg);
    std::cout << fmt::format("composed {} + {} -> {} gaussians\n", a.size(), b.size(),
                             merged.size());
    return kExitOk;
}

// --- info -------------------------------------------------------------------

const char* kind_name(MotionKind k) {
    switch (k) {
    case MotionKind::Fourier: return "fourier";
    case MotionKind::Polynomial: return "polynomial";
    case MotionKind::Spline: return "spline";
    }
    return "?";
}

int cmd_info(const std::string& scene_path, int t_baseline, bool as_json) {
    const SceneFile sf = load_scene_file(scene_path);
    const std::size_t file_bytes = std::filesystem::file_size(scene_path);

    json j;
    j["file"] = scene_path;
    j["file_bytes"] = file_bytes;
    j["version"] = CDGS_VERSION;

    auto describe = [&](const Scene& s) {
        json d;
        d["n_gaussians"] = s.size();
        d["motion"] = kind_name(s.model.kind);
        d["order"] = s.model.order;
        d["time_varying_scale"] = s.model.time_varying_scale;
        d["sh_degree"] = s.sh_degree;
        d["param_count_per_gaussian"] = param_count_per_gaussian(s.model, s.sh_degree);
        d["payload_bytes"] = scene_file_bytes(s) - kSceneHeaderBytes;
        d["extent"] = s.extent;
        return d;
    };

    double total_payload = 0;
    std::size_t total_n = 0;
    if (std::holds_alternative<Scene>(sf)) {
        const Scene& s = std::get<Scene>(sf);
        j["scene"] = describe(s);
        total_payload = static_cast<double>(scene_file_bytes(s) - kSceneHeaderBytes);
        total_n = s.size();

        const double baseline_motion = 7.0 * t_baseline;
        const double ours_motion = 3.0 * s.model.coeffs_per_axis() + 8.0;
        j["baseline_T"] = t_baseline;
        j["d3dgs_bytes"] = baseline_d3dgs_memory(s, t_baseline);
        j["compression_motion_only"] = baseline_motion / ours_motion;
        j["compression_full"] =
            static_cast<double>(baseline_d3dgs_memory(s, t_baseline)) / total_payload;
    } else {
        const auto& cs = std::get<ChunkedScene>(sf);
        j["chunks"] = json::array();
        for (const auto& c : cs.chunks) {
            json d = describe(c.scene);
            d["time_range"] = {c.time_range[0], c.time_range[1]};
            j["chunks"].push_back(d);
            total_payload += static_cast<double>(scene_file_bytes(c.scene) - kSceneHeaderBytes);
            total_n += c.scene.size();
        }
        j["total_payload_bytes"] = total_payload;
        j["n_gaussians"] = total_n;
    }

    if (as_json) {
        std::cout << j.dump(2) << "\n";
    } else if (std::holds_alternative<Scene>(sf)) {
        const auto& d = j["scene"];
        std::cout << fmt::format(
            "{}: N={} motion={}({}) sh={} params/gaussian={} payload={} bytes file={} bytes\n",
            scene_path, d["n_gaussians"].get<std::size_t>(), d["motion"].get<std::string>(),
            d["order"].get<int>(), d["sh_degree"].get<int>(),
            d["param_count_per_gaussian"].get<int>(), d["payload_bytes"].get<std::size_t>(),
            file_bytes);
        std::cout << fmt::format(
            "vs per-timestep baseline at T={}: {} bytes, motion-only compression {:.1f}x\n",
            t_baseline, j["d3dgs_bytes"].get<std::size_t>(),
            j["compression_motion_only"].get<double>());
    } else {
        std::cout << fmt::format("{}: {} chunks, N={} total, payload {} bytes, file {} bytes\n",
                                 scene_path, j["chunks"].size(), total_n,
                                 static_cast<std::size_t>(total_payload), file_bytes);
    }
    return kExitOk;
}

// --- eval -------------------------------------------------------------------

int cmd_eval(const std::string& scene_path, const std::string& data_dir,
             const std::string& split, bool as_json) {
    const SceneFile sf = load_scene_file(scene_path);
    const Dataset ds = load_dataset(load_manifest(data_dir));

    std::vector<const TrainingFrame*> frames;
    if (split == "train" || split == "all")
        for (const auto& f : ds.train)
            frames.push_back(&f);
    if (split == "probe" || split == "all")
        for (const auto& f : ds.probe)
            frames.push_back(&f);
    if (frames.empty())
        throw DataError(fmt::format("split '{}' selects no frames", split));

    double sum_psnr = 0, sum_ssim = 0;
    bool any_inf = false;
    for (const auto* f : frames) {
        const Scene& sc = scene_at(sf, f->t);
        const Image pred =
            composite_over(render_color(sc, f->camera, local_time(sf, f->t)), ds.background);
        const double p = psnr(pred, f->image);
        if (std::isinf(p))
            any_inf = true;
        else
            sum_psnr += p;
        sum_ssim += ssim(pred, f->image);
    }
    const double mean_psnr = any_inf ? std::numeric_limits<double>::infinity()
                                     : sum_psnr / frames.size();
    const double mean_ssim = sum_ssim / frames.size();

    if (as_json) {
        json j;
        j["split"] = split;
        j["frames"] = frames.size();
        j["psnr"] = std::isinf(mean_psnr) ? json("inf") : json(mean_psnr);
        j["ssim"] = mean_ssim;
        j["version"] = CDGS_VERSION;
        std::cout << j.dump(2) << "\n";
    } else if (std::isinf(mean_psnr)) {
        std::cout << fmt::format("{} frames: PSNR inf  SSIM {:.4f}\n", frames.size(), mean_ssim);
    } else {
        std::cout << fmt::format("{} frames: PSNR {:.3f} dB  SSIM {:.4f}\n", frames.size(),
                                 mean_psnr, mean_ssim);
    }
    return kExitOk;
}

// --- gradcheck ----------------------------------------------------------------

Scene random_check_scene(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    auto span = [&](double lo, double hi) { return lo + uni(rng) * (hi - lo); };
    const MotionModel model{MotionKind::Fourier, 2, false};
    Scene s;
    s.model = model;
    s.sh_degree = 1;
    s.extent = 1.5;
    for (int i = 0; i < n; ++i) {
        DynamicGaussian g = DynamicGaussian::zeros(model, 1);
        for (int axis = 0; axis < 3; ++axis) {
            g.center_coeff(axis, 0) = span(-1, 1);
            for (int k = 1; k < model.coeffs_per_axis(); ++k)
                g.center_coeff(axis, k) = span(-0.15, 0.15);
            g.log_scale[axis] = std::log(span(0.06, 0.16));
        }
        Vec4 q(span(-1, 1), span(-1, 1), span(-1, 1), span(-1, 1));
        g.set_rot_intercept(q.normalized());
        g.set_rot_slope(0.3 * Vec4(span(-1, 1), span(-1, 1), span(-1, 1), span(-1, 1)));
        for (int ch = 0; ch < 3; ++ch) {
            g.sh_coeffs[static_cast<std::size_t>(ch) * 4] = (span(0.25, 0.75) - 0.5) / 0.282094;
            for (int k = 1; k < 4; ++k)
                g.sh_coeffs[static_cast<std::size_t>(ch) * 4 + k] = span(-0.05, 0.05);
        }
        g.opacity_logit = logit(span(0.3, 0.85));
        s.gaussians.push_back(std::move(g));
    }
    return s;
}

int cmd_gradcheck(int n, int res, std::uint64_t seed, double h, bool as_json) {
    const Scene scene = random_check_scene(n, seed);
    Mat4 w2c = Mat4::Identity();
    w2c(2, 3) = 4.0; // scene in front of the camera
    const Camera cam(res, res, res * 0.9, res * 0.9, res / 2.0, res / 2.0, w2c);

    json results = json::array();
    double worst = 0;
    std::string worst_param;
    for (NamedLoss loss : {NamedLoss::Recon, NamedLoss::ReconFlow}) {
        const auto rep = grad_check(scene, cam, 0.35, loss, h, seed + 1);
        json j;
        j["loss"] = loss == NamedLoss::Recon ? "recon" : "recon+flow";
        j["max_rel_err"] = rep.max_rel_err;
        j["max_abs_err"] = rep.max_abs_err;
        j["worst_param"] = rep.worst_param;
        j["step"] = rep.step;
        j["params_checked"] = rep.params_checked;
        results.push_back(j);
        if (rep.max_rel_err > worst) {
            worst = rep.max_rel_err;
            worst_param = rep.worst_param;
        }
    }

    const bool ok = worst < 1e-3;
    if (as_json) {
        json j;
        j["results"] = results;
        j["pass"] = ok;
        j["version"] = CDGS_VERSION;
        std::cout << j.dump(2) << "\n";
    } else {
        for (const auto& r : results)
            std::cout << fmt::format("{}: max rel err {:.3e} (worst: {}), step {}\n",
                                     r["loss"].get<std::string>(),
                                     r["max_rel_err"].get<double>(),
                                     r["worst_param"].get<std::string>(),
                                     r["step"].get<double>());
        std::cout << (ok ? "gradcheck PASS\n" : "gradcheck FAIL\n");
    }
    if (!ok)
        throw NumericError(fmt::format("gradient check failed: rel err {:.3e} at {}", worst,
                                       worst_param));
    return kExitOk;
}

// --- bench --------------------------------------------------------------------

int cmd_bench(const std::string& scene_path, const std::string& camera_spec,
              const std::optional<std::string>& data_dir, int frames, int width, int height,
              bool as_json) {
    const SceneFile sf = load_scene_file(scene_path);
    const Camera cam = parse_camera_spec(camera_spec, data_dir, width, height);

    auto run_once = [&]() {
        const auto start = std::chrono::steady_clock::now();
        double sink = 0;
        for (int i = 0; i < frames; ++i) {
            const double t = static_cast<double>(i) / frames;
            const RenderOutput out = render_color(scene_at(sf, t), cam, local_time(sf, t));
            sink += out.color.data[0]; // keep the render from being elided
        }
        const auto end = std::chrono::steady_clock::now();
        return std::chrono::duration<double>(end - start).count() + sink * 0.0;
    };

    run_once(); // warm up
    std::vector<double> times;
    for (int rep = 0; rep < 5; ++rep)
        times.push_back(run_once());
    std::sort(times.begin(), times.end());
    const double median = times[times.size() / 2];
    const double fps = frames / median;

    if (as_json) {
        json j;
        j["frames"] = frames;
        j["median_seconds"] = median;
        j["renders_per_second"] = fps;
        j["threads"] = ThreadPool::instance().threads();
        j["width"] = cam.width;
        j["height"] = cam.height;
        j["version"] = CDGS_VERSION;
        std::cout << j.dump(2) << "\n";
    } else {
        std::cout << fmt::format("{} renders at {}x{}: median {:.3f} s, {:.1f} renders/s\n",
                                 frames, cam.width, cam.height, median, fps);
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"compact dynamic 3D gaussian scenes", "cdgs"};
    app.require_subcommand(1);
    app.set_version_flag("--version", CDGS_VERSION);

    int threads = 0;
    app.add_option("--threads", threads, "worker threads (0 = hardware)")->capture_default_str();

    // train
    TrainArgs ta;
    auto* train_cmd = app.add_subcommand("train", "optimize a scene from a dataset");
    train_cmd->add_option("--data", ta.data, "dataset directory")->required();
    train_cmd->add_option("--out", ta.out, "output scene file")->required();
    auto* opt_l = train_cmd->add_option("--l", ta.fourier_l, "Fourier harmonics");
    auto* opt_poly = train_cmd->add_option("--poly", ta.poly_d, "polynomial degree");
    auto* opt_spline = train_cmd->add_option("--spline", ta.spline_n, "spline control points");
    opt_l->excludes(opt_poly)->excludes(opt_spline);
    opt_poly->excludes(opt_spline);
    train_cmd->add_option("--sh", ta.sh, "SH degree (0-3)")->capture_default_str();
    train_cmd->add_flag("--tvs", ta.tvs, "time-varying scale variant");
    train_cmd->add_option("--iters", ta.iters, "total iterations")->capture_default_str();
    train_cmd->add_option("--static-iters", ta.static_iters, "static-stage iterations")
        ->capture_default_str();
    train_cmd->add_option("--lambda", ta.lambda, "D-SSIM weight")->capture_default_str();
    train_cmd->add_option("--lambda-flow", ta.lambda_flow, "flow loss weight")
        ->capture_default_str();
    train_cmd->add_flag("--no-flow", ta.no_flow, "disable the flow loss");
    train_cmd->add_option("--chunk", ta.chunk, "timesteps per chunk (chunked training)");
    train_cmd->add_option("--seed", ta.seed, "RNG seed")->capture_default_str();
    train_cmd->add_option("--init-points", ta.init_points, "random init point count")
        ->capture_default_str();
    train_cmd->add_option("--background", ta.background, "override background r,g,b")
        ->expected(3);
    train_cmd->add_option("--log", ta.log_path, "training log path (JSONL)");

    // render
    std::string r_scene, r_camera, r_out, r_flow_out;
    std::optional<std::string> r_data;
    double r_t = 0, r_dt = 1.0 / 30.0;
    int r_width = 0, r_height = 0;
    std::vector<double> r_bg;
    auto* render_cmd = app.add_subcommand("render", "render one frame of a scene");
    render_cmd->add_option("--scene", r_scene)->required();
    render_cmd->add_option("--camera", r_camera, "'id:N' or 21 inline numbers")->required();
    render_cmd->add_option("--data", r_data, "dataset dir for 'id:N' cameras");
    render_cmd->add_option("--t", r_t, "normalized time")->required();
    render_cmd->add_option("--out", r_out, "output PNG")->required();
    render_cmd->add_option("--flow-out", r_flow_out, "write <stem>_fwd/_bwd.flo");
    render_cmd->add_option("--dt", r_dt, "flow time step")->capture_default_str();
    render_cmd->add_option("--width", r_width);
    render_cmd->add_option("--height", r_height);
    render_cmd->add_option("--background", r_bg, "background r,g,b")->expected(3);

    // compose
    std::string c_a, c_b, c_out;
    std::vector<double> c_translate;
    double c_tshift = 0;
    auto* compose_cmd = app.add_subcommand("compose", "merge scene b into scene a");
    compose_cmd->add_option("--a", c_a)->required();
    compose_cmd->add_option("--b", c_b)->required();
    compose_cmd->add_option("--translate", c_translate, "translate b by x,y,z")->expected(3);
    compose_cmd->add_option("--tshift", c_tshift, "shift b's timeline");
    compose_cmd->add_option("--out", c_out)->required();

    // info
    std::string i_scene;
    int i_t = 300;
    bool i_json = false;
    auto* info_cmd = app.add_subcommand("info", "model and memory accounting");
    info_cmd->add_option("--scene", i_scene)->required();
    info_cmd->add_option("--t-baseline", i_t, "T for the per-timestep baseline")
        ->capture_default_str();
    info_cmd->add_flag("--json", i_json);

    // eval
    std::string e_scene, e_data, e_split = "probe";
    bool e_json = false;
    auto* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM over a dataset split");
    eval_cmd->add_option("--scene", e_scene)->required();
    eval_cmd->add_option("--data", e_data)->required();
    eval_cmd->add_option("--split", e_split, "train|probe|all")->capture_default_str();
    eval_cmd->add_flag("--json", e_json);

    // gradcheck
    int g_n = 10, g_res = 32;
    std::uint64_t g_seed = 1;
    double g_h = 1e-5;
    bool g_json = false;
    auto* grad_cmd = app.add_subcommand("gradcheck", "analytic vs finite-difference gradients");
    grad_cmd->add_option("--n", g_n, "gaussian count")->capture_default_str();
    grad_cmd->add_option("--res", g_res, "image resolution")->capture_default_str();
    grad_cmd->add_option("--seed", g_seed)->capture_default_str();
    grad_cmd->add_option("--step", g_h, "FD step")->capture_default_str();
    grad_cmd->add_flag("--json", g_json);

    // bench
    std::string b_scene, b_camera;
    std::optional<std::string> b_data;
    int b_frames = 100, b_width = 0, b_height = 0;
    bool b_json = false;
    auto* bench_cmd = app.add_subcommand("bench", "renders/second, median of 5 runs");
    bench_cmd->add_option("--scene", b_scene)->required();
    bench_cmd->add_option("--camera", b_camera)->required();
    bench_cmd->add_option("--data", b_data);
    bench_cmd->add_option("--frames", b_frames)->capture_default_str();
    bench_cmd->add_option("--width", b_width);
    bench_cmd->add_option("--height", b_height);
    bench_cmd->add_flag("--json", b_json);

    try {
        app.parse(argc, argv);
        if (threads > 0)
            ThreadPool::instance().set_threads(static_cast<unsigned>(threads));

        if (*train_cmd)
            return cmd_train(ta);
        if (*render_cmd)
            return cmd_render(r_scene, r_camera, r_data, r_t, r_out, r_flow_out, r_dt, r_width,
                              r_height, r_bg);
        if (*compose_cmd)
            return cmd_compose(c_a, c_b, c_translate, c_tshift, c_out);
        if (*info_cmd)
            return cmd_info(i_scene, i_t, i_json);
        if (*eval_cmd)
            return cmd_eval(e_scene, e_data, e_split, e_json);
        if (*grad_cmd)
            return cmd_gradcheck(g_n, g_res, g_seed, g_h, g_json);
        if (*bench_cmd)
            return cmd_bench(b_scene, b_camera, b_data, b_frames, b_width, b_height, b_json);
        return kExitUsage;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::out_of_range& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    }
}
