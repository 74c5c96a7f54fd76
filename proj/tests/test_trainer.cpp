#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cdgs/io.hpp"
#include "cdgs/motion.hpp"
#include "cdgs/threading.hpp"
#include "cdgs/trainer.hpp"
#include "support/synthetic.hpp"

#include <filesystem>
#include <fstream>
#include <random>

using namespace cdgs;

namespace {

Dataset tiny_dataset(int timesteps = 4, int n_cams = 2, int res = 24, bool with_flow = false,
                     std::uint64_t seed = 42) {
    const MotionModel m{MotionKind::Fourier, 1, false};
    const Scene gt = cdgs::testing::random_scene(6, m, 0, seed, 0.1);
    std::vector<Camera> cams;
    for (int i = 0; i < n_cams; ++i)
        cams.push_back(cdgs::testing::orbit_camera(res, res, 4.0, 0.5 + i, 0.35, res * 0.8));
    Dataset ds = cdgs::testing::render_dataset(gt, cams, timesteps, Vec3::Zero(), with_flow);
    ds.scene_bounds = {{Vec3(-1.5, -1.5, -1.5), Vec3(1.5, 1.5, 1.5)}};
    return ds;
}

TrainConfig quick_config(int iters, int static_iters) {
    TrainConfig cfg;
    cfg.total_iters = iters;
    cfg.static_iters = static_iters;
    cfg.init_points = 40;
    cfg.log_interval = 1000000; // quiet
    cfg.use_flow = false;
    return cfg;
}

std::vector<char> scene_bytes(const Scene& s) {
    const auto tmp = std::filesystem::temp_directory_path() /
                     ("cdgs_trainer_" + std::to_string(std::random_device{}()) + ".cdgs");
    save_scene(tmp, s);
    std::ifstream in(tmp, std::ios::binary);
    std::vector<char> bytes{std::istreambuf_iterator<char>(in),
                            std::istreambuf_iterator<char>()};
    std::filesystem::remove(tmp);
    return bytes;
}

} // namespace

TEST_CASE("adam_step") {
    const MotionModel m{MotionKind::Fourier, 1, false};
    Scene s = cdgs::testing::random_scene(3, m, 1, 1);
    AdamState state = AdamState::zeros(s);
    TrainConfig cfg;

    SUBCASE("zero gradient leaves parameters bit-identical") {
        const Scene before = s;
        adam_step(s, state, GradientBuffer::zeros(s), cfg, 0, false);
        for (std::size_t i = 0; i < s.size(); ++i) {
            CHECK(s.gaussians[i].center_coeffs == before.gaussians[i].center_coeffs);
            CHECK(s.gaussians[i].rot_coeffs == before.gaussians[i].rot_coeffs);
            CHECK(s.gaussians[i].opacity_logit == before.gaussians[i].opacity_logit);
        }
    }

    SUBCASE("first step with constant gradient moves by about -lr*sign") {
        GradientBuffer g = GradientBuffer::zeros(s);
        g.gaussians[0].opacity_logit = 0.5; // positive gradient
        const double before = s.gaussians[0].opacity_logit;
        adam_step(s, state, g, cfg, 0, false);
        CHECK(s.gaussians[0].opacity_logit ==
              doctest::Approx(before - cfg.lr_opacity).epsilon(1e-9));
    }

    SUBCASE("identical scenes, grads and seeds stay identical") {
        Scene s2 = s;
        AdamState state2 = AdamState::zeros(s2);
        GradientBuffer g = GradientBuffer::zeros(s);
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> uni(-1, 1);
        for (auto& gg : g.gaussians) {
            for (auto& v : gg.center_coeffs)
                v = uni(rng);
            gg.opacity_logit = uni(rng);
        }
        adam_step(s, state, g, cfg, 10, false);
        adam_step(s2, state2, g, cfg, 10, false);
        CHECK(scene_bytes(s) == scene_bytes(s2));
    }

    SUBCASE("non-finite gradient names the group") {
        GradientBuffer g = GradientBuffer::zeros(s);
        g.gaussians[1].log_scale[0] = std::numeric_limits<double>::infinity();
        CHECK_THROWS_WITH_AS(adam_step(s, state, g, cfg, 0, false),
                             doctest::Contains("log_scale"), std::runtime_error);
    }
}

TEST_CASE("static stage freezes higher-order coefficients bit-zero") {
    const Dataset ds = tiny_dataset();
    TrainConfig cfg = quick_config(40, 30);
    cfg.densify_from = 1000000; // keep the gaussian set fixed here

    TrainState ts;
    ts.rng.seed(cfg.seed);
    ts.scene = init_scene(MotionModel{MotionKind::Fourier, 2, false}, 1, {}, {},
                          *ds.scene_bounds, cfg);
    ts.adam = AdamState::zeros(ts.scene);
    ts.stats.resize(ts.scene.size());

    run_static_stage(ts, ds.train, {}, cfg);
    CHECK(ts.iter == 30);
    const int nc = ts.scene.model.coeffs_per_axis();
    for (const auto& g : ts.scene.gaussians) {
        for (int axis = 0; axis < 3; ++axis)
            for (int k = 1; k < nc; ++k)
                CHECK(g.center_coeff(axis, k) == 0.0);
        CHECK(g.rot_slope().norm() == 0.0);
        // intercepts did move
    }

    // and the dynamic stage unfreezes them
    run_dynamic_stage(ts, ds.train, {}, cfg);
    CHECK(ts.iter == 40);
    double moved = 0;
    for (const auto& g : ts.scene.gaussians)
        for (int axis = 0; axis < 3; ++axis)
            for (int k = 1; k < nc; ++k)
                moved = std::max(moved, std::abs(g.center_coeff(axis, k)));
    CHECK(moved > 0.0);
}

TEST_CASE("static_iters=0 leaves the scene untouched by the static stage") {
    const Dataset ds = tiny_dataset();
    TrainConfig cfg = quick_config(10, 0);
    TrainState ts;
    ts.rng.seed(1);
    ts.scene = init_scene(MotionModel{MotionKind::Fourier, 1, false}, 0, {}, {},
                          *ds.scene_bounds, cfg);
    ts.adam = AdamState::zeros(ts.scene);
    ts.stats.resize(ts.scene.size());
    const auto before = scene_bytes(ts.scene);
    run_static_stage(ts, ds.train, {}, cfg);
    CHECK(ts.iter == 0);
    CHECK(scene_bytes(ts.scene) == before);
}

TEST_CASE("loss decreases over the first 100 static iterations") {
    Dataset ds = tiny_dataset(1, 1, 24, false, 7); // single static target frame
    TrainConfig cfg = quick_config(100, 100);
    cfg.log_interval = 1;
    cfg.densify_from = 1000000;

    std::vector<double> losses;
    TrainState ts;
    ts.rng.seed(cfg.seed);
    ts.scene = init_scene(MotionModel{MotionKind::Fourier, 1, false}, 0, {}, {},
                          *ds.scene_bounds, cfg);
    ts.adam = AdamState::zeros(ts.scene);
    ts.stats.resize(ts.scene.size());
    run_static_stage(ts, ds.train, {}, cfg,
                     [&](const TrainRecord& r) { losses.push_back(r.loss); });
    REQUIRE(losses.size() == 100);
    CHECK(losses.back() < losses.front());
}

TEST_CASE("densify_and_prune") {
    const MotionModel m{MotionKind::Fourier, 1, false};
    TrainConfig cfg;
    cfg.grad_threshold = 0.1;
    cfg.percent_dense = 0.01;
    std::mt19937_64 rng(5);

    Scene s = cdgs::testing::random_scene(4, m, 0, 6);
    s.extent = 1.0;

    SUBCASE("nothing over threshold leaves the scene unchanged except pruning") {
        AdamState state = AdamState::zeros(s);
        DensifyStats stats;
        stats.resize(s.size());
        const auto before = scene_bytes(s);
        densify_and_prune(s, state, stats, cfg, 0.0, rng);
        CHECK(scene_bytes(s) == before);
    }

    SUBCASE("over-threshold large gaussian splits into two children") {
        s.gaussians[1].log_scale = {std::log(0.5), std::log(0.5), std::log(0.5)}; // > 1% extent
        AdamState state = AdamState::zeros(s);
        DensifyStats stats;
        stats.resize(s.size());
        stats.grad_norm_sum[1] = 10.0;
        stats.observations[1] = 1;
        const DynamicGaussian parent = s.gaussians[1];
        const std::size_t before_n = s.size();

        densify_and_prune(s, state, stats, cfg, 0.3, rng);
        CHECK(s.size() == before_n + 1); // one removed, two added
        CHECK(state.m.size() == s.size());
        CHECK(state.v.size() == s.size());
        CHECK(stats.grad_norm_sum.size() == s.size());

        // children sit at the end, identical motion coefficients except the
        // intercept, scales shrunk by 1.6
        for (std::size_t c = s.size() - 2; c < s.size(); ++c) {
            const auto& child = s.gaussians[c];
            const int nc = m.coeffs_per_axis();
            for (int axis = 0; axis < 3; ++axis) {
                for (int k = 1; k < nc; ++k)
                    CHECK(child.center_coeff(axis, k) == parent.center_coeff(axis, k));
                CHECK(child.center_coeff(axis, 0) != parent.center_coeff(axis, 0));
                CHECK(child.log_scale[axis] ==
                      doctest::Approx(parent.log_scale[axis] - std::log(1.6)));
            }
            CHECK(child.rot_coeffs == parent.rot_coeffs);
            CHECK(child.sh_coeffs == parent.sh_coeffs);
        }
    }

    SUBCASE("over-threshold small gaussian clones exactly") {
        s.gaussians[2].log_scale = {std::log(0.001), std::log(0.001), std::log(0.001)};
        AdamState state = AdamState::zeros(s);
        DensifyStats stats;
        stats.resize(s.size());
        stats.grad_norm_sum[2] = 5.0;
        stats.observations[2] = 1;
        const std::size_t before_n = s.size();
        densify_and_prune(s, state, stats, cfg, 0.0, rng);
        CHECK(s.size() == before_n + 1);
        const auto& copy = s.gaussians.back();
        CHECK(copy.center_coeffs == s.gaussians[2].center_coeffs);
        CHECK(copy.rot_coeffs == s.gaussians[2].rot_coeffs);
        CHECK(copy.opacity_logit == s.gaussians[2].opacity_logit);
    }

    SUBCASE("transparent gaussians are pruned") {
        s.gaussians[0].opacity_logit = logit(0.001);
        AdamState state = AdamState::zeros(s);
        DensifyStats stats;
        stats.resize(s.size());
        const std::size_t before_n = s.size();
        densify_and_prune(s, state, stats, cfg, 0.0, rng);
        CHECK(s.size() == before_n - 1);
        for (const auto& g : s.gaussians)
            CHECK(sigmoid(g.opacity_logit) >= 0.005);
    }

    SUBCASE("never prunes the entire scene") {
        for (auto& g : s.gaussians)
            g.opacity_logit = logit(0.0001);
        AdamState state = AdamState::zeros(s);
        DensifyStats stats;
        stats.resize(s.size());
        densify_and_prune(s, state, stats, cfg, 0.0, rng);
        CHECK(s.size() == 1);
    }
}

TEST_CASE("training is deterministic and thread-count independent") {
    const Dataset ds = tiny_dataset(3, 2, 20);
    TrainConfig cfg = quick_config(25, 10);

    ThreadPool::instance().set_threads(1);
    const Scene a = train(ds, MotionModel{MotionKind::Fourier, 1, false}, 0, cfg);
    ThreadPool::instance().set_threads(8);
    const Scene b = train(ds, MotionModel{MotionKind::Fourier, 1, false}, 0, cfg);
    CHECK(scene_bytes(a) == scene_bytes(b));
}

TEST_CASE("chunked training") {
    SUBCASE("timeline partitioning: 300 steps at 60 per chunk gives 5 chunks") {
        // Frame images are tiny; 2 iterations keep this fast.
        const MotionModel m{MotionKind::Fourier, 1, false};
        const Scene gt = cdgs::testing::random_scene(3, m, 0, 20, 0.05);
        const std::vector<Camera> cams = {cdgs::testing::orbit_camera(12, 12, 4, 0.4, 0.3, 10)};
        Dataset ds = cdgs::testing::render_dataset(gt, cams, 300, Vec3::Zero(), false);
        ds.scene_bounds = {{Vec3(-1.5, -1.5, -1.5), Vec3(1.5, 1.5, 1.5)}};

        TrainConfig cfg = quick_config(2, 1);
        cfg.init_points = 8;
        cfg.chunk_size = 60;
        const ChunkedScene cs = train_chunked(ds, m, 0, cfg);
        REQUIRE(cs.chunks.size() == 5);
        CHECK(cs.chunks[0].time_range[0] == 0.0);
        CHECK(cs.chunks[4].time_range[1] == 1.0);
        CHECK(cs.chunks[2].time_range[0] == doctest::Approx(120.0 / 300.0));

        // With no densification the per-chunk payload matches the single
        // model, so total bytes grow about 5x.
        TrainConfig single = cfg;
        single.chunk_size.reset();
        const Scene one = train(ds, m, 0, single);
        const auto tmp = std::filesystem::temp_directory_path() / "cdgs_chunked.cdgc";
        save_chunked(tmp, cs);
        const double ratio = static_cast<double>(std::filesystem::file_size(tmp)) /
                             scene_file_bytes(one);
        std::filesystem::remove(tmp);
        CHECK(ratio > 4.5);
        CHECK(ratio < 5.5);
    }

    SUBCASE("one full chunk equals unchunked training byte for byte") {
        const Dataset ds = tiny_dataset(4, 1, 16);
        TrainConfig cfg = quick_config(12, 4);
        cfg.init_points = 12;
        const Scene plain = train(ds, MotionModel{MotionKind::Fourier, 1, false}, 0, cfg);
        cfg.chunk_size = 4;
        const ChunkedScene cs = train_chunked(ds, MotionModel{MotionKind::Fourier, 1, false}, 0, cfg);
        REQUIRE(cs.chunks.size() == 1);
        CHECK(scene_bytes(cs.chunks[0].scene) == scene_bytes(plain));
    }

    SUBCASE("missing chunk_size throws") {
        const Dataset ds = tiny_dataset(2, 1, 12);
        CHECK_THROWS_AS(train_chunked(ds, MotionModel{MotionKind::Fourier, 1, false}, 0,
                                      quick_config(2, 1)),
                        std::invalid_argument);
    }
}

TEST_CASE("d3dgs baseline memory accounting") {
    const MotionModel m{MotionKind::Fourier, 5, false};
    Scene s = cdgs::testing::random_scene(1, m, 3, 30);

    SUBCASE("paper arithmetic at T=300") {
        // Motion floats: 7 * 300 = 2100 baseline vs 3*11 + 8 = 41 ours
        const double baseline_motion = 7.0 * 300;
        const double ours_motion = 3.0 * m.coeffs_per_axis() + 8;
        CHECK(ours_motion == 41);
        CHECK(baseline_motion / ours_motion == doctest::Approx(51.2).epsilon(1e-3));

        const std::size_t static_floats = 3 + 3 * 16 + 1;
        CHECK(baseline_d3dgs_memory(s, 300) == (2100 + static_floats) * 4);
    }

    SUBCASE("T=1 collapses to the static count") {
        CHECK(baseline_d3dgs_memory(s, 1) == (7 + 3 + 48 + 1) * 4);
    }

    SUBCASE("ratio is independent of N") {
        Scene s10 = cdgs::testing::random_scene(10, m, 3, 31);
        const double r1 = static_cast<double>(baseline_d3dgs_memory(s, 300)) /
                          (param_count_per_gaussian(m, 3) * 4);
        const double r10 = static_cast<double>(baseline_d3dgs_memory(s10, 300)) /
                           (10.0 * param_count_per_gaussian(m, 3) * 4);
        CHECK(r1 == doctest::Approx(r10));
    }
}

TEST_CASE("config scaling keeps schedule proportions") {
    TrainConfig cfg;
    const TrainConfig scaled = cfg.scaled_to(5000);
    CHECK(scaled.total_iters == 5000);
    CHECK(scaled.static_iters == 500);
    CHECK(scaled.densify_from == 83);
    CHECK(scaled.densify_until == 2500);
    CHECK(scaled.opacity_reset_interval == 500);
}
