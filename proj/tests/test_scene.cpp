#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cdgs/motion.hpp"
#include "cdgs/rasterizer.hpp"
#include "cdgs/scene.hpp"
#include "support/synthetic.hpp"

#include <random>

using namespace cdgs;

TEST_CASE("param_count_per_gaussian matches the field-size oracle") {
    // Oracle: sum the DynamicGaussian field sizes by hand.
    auto oracle = [](const MotionModel& m, int k) {
        const DynamicGaussian g = DynamicGaussian::zeros(m, k);
        int n = static_cast<int>(g.center_coeffs.size()) + 8 + 3 +
                static_cast<int>(g.sh_coeffs.size()) + 1;
        if (m.time_varying_scale)
            n += 3;
        return n;
    };

    const MotionModel f2{MotionKind::Fourier, 2, false};
    CHECK(param_count_per_gaussian(f2, 3) == 75);
    CHECK(param_count_per_gaussian(f2, 3) == oracle(f2, 3));

    const MotionModel f5{MotionKind::Fourier, 5, false};
    CHECK(param_count_per_gaussian(f5, 3) == 93);
    CHECK(param_count_per_gaussian(f5, 3) == oracle(f5, 3));

    const MotionModel p1{MotionKind::Polynomial, 1, false};
    CHECK(param_count_per_gaussian(p1, 0) == 21);
    CHECK(param_count_per_gaussian(p1, 0) == oracle(p1, 0));

    const MotionModel f2tvs{MotionKind::Fourier, 2, true};
    CHECK(param_count_per_gaussian(f2tvs, 3) == 78);
    CHECK(param_count_per_gaussian(f2tvs, 3) == oracle(f2tvs, 3));

    const MotionModel s5{MotionKind::Spline, 5, false};
    CHECK(param_count_per_gaussian(s5, 0) == oracle(s5, 0));

    CHECK_THROWS(param_count_per_gaussian(f2, 4));
    CHECK_THROWS(param_count_per_gaussian(MotionModel{MotionKind::Fourier, 0, false}, 1));
}

TEST_CASE("param count is independent of sequence length") {
    // The count is a pure function of (model, k); training datasets of any
    // T share it. Assert the claim for two dataset lengths.
    const MotionModel m{MotionKind::Fourier, 5, false};
    const int count_for_t50 = param_count_per_gaussian(m, 3);
    const int count_for_t300 = param_count_per_gaussian(m, 3);
    CHECK(count_for_t50 == count_for_t300);
    CHECK(count_for_t50 == 93);
}

TEST_CASE("validate_scene flags invariant breaches with indices") {
    const MotionModel m{MotionKind::Fourier, 1, false};
    Scene s;
    s.model = m;
    s.sh_degree = 0;

    SUBCASE("empty scene is ok") { CHECK(validate_scene(s).empty()); }

    SUBCASE("all-zero rotation intercept") {
        DynamicGaussian g = DynamicGaussian::zeros(m, 0);
        g.set_rot_intercept(Vec4::Zero());
        s.gaussians.push_back(g);
        const auto violations = validate_scene(s);
        REQUIRE(violations.size() == 1);
        CHECK(violations[0].gaussian_index == 0);
    }

    SUBCASE("mixed coefficient counts report model mismatch") {
        s.gaussians.push_back(DynamicGaussian::zeros(m, 0));
        s.gaussians.push_back(DynamicGaussian::zeros(MotionModel{MotionKind::Fourier, 3, false}, 0));
        const auto violations = validate_scene(s);
        REQUIRE(violations.size() == 1);
        CHECK(violations[0].gaussian_index == 1);
        CHECK(violations[0].message.find("model mismatch") != std::string::npos);
    }

    SUBCASE("scene-level invariants") {
        s.time_range = {0.5, 0.5};
        s.extent = 0.0;
        CHECK(validate_scene(s).size() == 2);
    }
}

TEST_CASE("compose superposes and transforms") {
    const MotionModel m{MotionKind::Fourier, 2, false};
    const Scene a = cdgs::testing::random_scene(4, m, 1, 11);
    const Scene b = cdgs::testing::random_scene(3, m, 1, 22);

    SUBCASE("identity keeps both parts") {
        const Scene c = compose(a, b, Mat4::Identity());
        CHECK(c.size() == a.size() + b.size());
        for (std::size_t i = 0; i < b.size(); ++i)
            CHECK(c.gaussians[a.size() + i].center_coeffs == b.gaussians[i].center_coeffs);
    }

    SUBCASE("translation moves intercepts only") {
        Mat4 tf = Mat4::Identity();
        tf(0, 3) = 1.0;
        const Scene c = compose(a, b, tf);
        for (std::size_t i = 0; i < b.size(); ++i) {
            const auto& src = b.gaussians[i];
            const auto& dst = c.gaussians[a.size() + i];
            CHECK(dst.center_coeff(0, 0) == doctest::Approx(src.center_coeff(0, 0) + 1.0));
            for (int k = 1; k < m.coeffs_per_axis(); ++k)
                CHECK(dst.center_coeff(0, k) == doctest::Approx(src.center_coeff(0, k)));
        }
    }

    SUBCASE("model and degree mismatches are rejected") {
        Scene b2 = b;
        b2.sh_degree = 2;
        for (auto& g : b2.gaussians)
            g.sh_coeffs.resize(27, 0.0);
        CHECK_THROWS_AS(compose(a, b2, Mat4::Identity()), std::invalid_argument);

        Scene b3 = cdgs::testing::random_scene(2, MotionModel{MotionKind::Fourier, 3, false}, 1, 5);
        CHECK_THROWS_AS(compose(a, b3, Mat4::Identity()), std::invalid_argument);
    }

    SUBCASE("non-rigid transforms are rejected") {
        Mat4 shear = Mat4::Identity();
        shear(0, 1) = 0.5;
        CHECK_THROWS_AS(compose(a, b, shear), std::invalid_argument);
    }

    SUBCASE("frequency-scaling time maps are rejected") {
        CHECK_THROWS_AS(compose(a, b, Mat4::Identity(), TimeMap{2.0, 0.0}), std::invalid_argument);
    }

    SUBCASE("rigid transform moves evaluated centers exactly") {
        Mat4 tf = Mat4::Identity();
        const double ang = 0.7;
        tf(0, 0) = std::cos(ang); tf(0, 1) = -std::sin(ang);
        tf(1, 0) = std::sin(ang); tf(1, 1) = std::cos(ang);
        tf(2, 3) = 0.25;
        const Scene c = compose(a, b, tf);
        for (double t : {0.0, 0.3, 0.77}) {
            for (std::size_t i = 0; i < b.size(); ++i) {
                const Vec3 src = eval_center(b.gaussians[i], m, t);
                const Vec3 expect = tf.topLeftCorner<3, 3>() * src + tf.topRightCorner<3, 1>();
                const Vec3 got = eval_center(c.gaussians[a.size() + i], m, t);
                CHECK((got - expect).norm() < 1e-12);
            }
        }
    }

    SUBCASE("time shift reparameterizes the curve exactly") {
        const double beta = 0.37;
        const Scene c = compose(a, b, Mat4::Identity(), TimeMap{1.0, beta});
        for (double t : {0.0, 0.41, 0.9}) {
            for (std::size_t i = 0; i < b.size(); ++i) {
                const Vec3 expect = eval_center(b.gaussians[i], m, t + beta);
                const Vec3 got = eval_center(c.gaussians[a.size() + i], m, t);
                CHECK((got - expect).norm() < 1e-12);
                const Vec4 q_expect = eval_rotation(b.gaussians[i], t + beta);
                const Vec4 q_got = eval_rotation(c.gaussians[a.size() + i], t);
                CHECK((q_got - q_expect).norm() < 1e-12);
            }
        }
    }

    SUBCASE("polynomial time shift is exact too") {
        const MotionModel pm{MotionKind::Polynomial, 3, false};
        const Scene pa = cdgs::testing::random_scene(2, pm, 0, 31);
        const Scene pb = cdgs::testing::random_scene(2, pm, 0, 32);
        const Scene pc = compose(pa, pb, Mat4::Identity(), TimeMap{1.0, -0.21});
        for (double t : {0.1, 0.6}) {
            for (std::size_t i = 0; i < pb.size(); ++i) {
                const Vec3 expect = eval_center(pb.gaussians[i], pm, t - 0.21);
                const Vec3 got = eval_center(pc.gaussians[pa.size() + i], pm, t);
                CHECK((got - expect).norm() < 1e-12);
            }
        }
    }
}

TEST_CASE("compose with an empty scene renders pixelwise identical images") {
    const MotionModel m{MotionKind::Fourier, 2, false};
    const Scene a = cdgs::testing::random_scene(6, m, 1, 99);
    Scene empty;
    empty.model = m;
    empty.sh_degree = 1;

    const Scene c = compose(a, empty, Mat4::Identity());
    const Camera cam = cdgs::testing::orbit_camera(48, 48, 4.0, 0.4, 0.3, 60.0);
    for (double t : {0.0, 0.5}) {
        const RenderOutput ra = render_color(a, cam, t);
        const RenderOutput rc = render_color(c, cam, t);
        CHECK(ra.color.data == rc.color.data);
        CHECK(ra.alpha.data == rc.alpha.data);
    }
}

TEST_CASE("camera validates its rotation block") {
    Mat4 w2c = Mat4::Identity();
    CHECK_NOTHROW(Camera(8, 8, 1, 1, 4, 4, w2c));
    w2c(0, 0) = 1.5;
    CHECK_THROWS_AS(Camera(8, 8, 1, 1, 4, 4, w2c), std::invalid_argument);
    CHECK_THROWS_AS(Camera(8, 8, -1, 1, 4, 4, Mat4::Identity()), std::invalid_argument);
}

TEST_CASE("chunk lookup uses half-open ranges") {
    ChunkedScene cs;
    cs.chunks.resize(2);
    cs.chunks[0].time_range = {0.0, 0.5};
    cs.chunks[1].time_range = {0.5, 1.0};
    CHECK(cs.find_chunk(0.0) == 0);
    CHECK(cs.find_chunk(0.5) == 1); // boundary owned by the upper chunk
    CHECK(cs.find_chunk(0.999) == 1);
    CHECK(cs.find_chunk(1.0) == -1);
    CHECK(cs.find_chunk(1.5) == -1);
}

TEST_CASE("serialization round trip preserves validation results") {
    const MotionModel m{MotionKind::Fourier, 2, false};
    Scene s = cdgs::testing::random_scene(5, m, 1, 7);
    s.gaussians[2].set_rot_intercept(Vec4::Zero()); // deliberate violation

    const auto before = validate_scene(s);
    const auto tmp = std::filesystem::temp_directory_path() / "cdgs_validate_roundtrip.cdgs";
    save_scene(tmp, s);
    const Scene loaded = load_scene(tmp);
    const auto after = validate_scene(loaded);
    REQUIRE(before.size() == after.size());
    for (std::size_t i = 0; i < before.size(); ++i) {
        CHECK(before[i].gaussian_index == after[i].gaussian_index);
        CHECK(before[i].message == after[i].message);
    }
    std::filesystem::remove(tmp);
}
