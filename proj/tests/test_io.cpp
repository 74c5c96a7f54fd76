#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cdgs/io.hpp"
#include "support/synthetic.hpp"

#include <filesystem>
#include <fstream>
#include <random>

using namespace cdgs;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("cdgs_test_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::vector<char> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

TEST_CASE("scene files have the exact documented size") {
    TempDir dir;
    const MotionModel m{MotionKind::Fourier, 5, false};
    const Scene s = cdgs::testing::random_scene(1000, m, 3, 1);
    const fs::path file = dir.path / "scene.cdgs";
    save_scene(file, s);
    CHECK(param_count_per_gaussian(m, 3) == 93);
    CHECK(fs::file_size(file) == 44 + 1000 * 93 * 4);
    CHECK(fs::file_size(file) == scene_file_bytes(s));
    CHECK(fs::file_size(file) - kSceneHeaderBytes == 372000); // payload bytes
}

TEST_CASE("scene round trip is bitwise stable") {
    TempDir dir;
    const MotionModel m{MotionKind::Fourier, 2, true};
    const Scene s = cdgs::testing::random_scene(50, m, 2, 2);
    const fs::path a = dir.path / "a.cdgs";
    const fs::path b = dir.path / "b.cdgs";
    save_scene(a, s);
    const Scene loaded = load_scene(a);
    save_scene(b, loaded);
    CHECK(slurp(a) == slurp(b));

    CHECK(loaded.model == s.model);
    CHECK(loaded.sh_degree == s.sh_degree);
    CHECK(loaded.size() == s.size());
    CHECK(loaded.extent == s.extent);
    // On-disk parameters are f32; loading returns the f32-rounded values.
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t k = 0; k < s.gaussians[i].center_coeffs.size(); ++k)
            CHECK(loaded.gaussians[i].center_coeffs[k] ==
                  static_cast<double>(static_cast<float>(s.gaussians[i].center_coeffs[k])));
}

TEST_CASE("malformed scene files raise typed errors") {
    TempDir dir;
    const MotionModel m{MotionKind::Fourier, 1, false};
    const Scene s = cdgs::testing::random_scene(3, m, 0, 3);
    const fs::path file = dir.path / "scene.cdgs";
    save_scene(file, s);

    SUBCASE("bad magic") {
        auto bytes = slurp(file);
        bytes[0] = 'X';
        std::ofstream(file, std::ios::binary).write(bytes.data(), bytes.size());
        CHECK_THROWS_AS(load_scene(file), BadMagicError);
    }

    SUBCASE("version mismatch") {
        auto bytes = slurp(file);
        bytes[4] = 99;
        std::ofstream(file, std::ios::binary).write(bytes.data(), bytes.size());
        CHECK_THROWS_AS(load_scene(file), VersionError);
    }

    SUBCASE("truncation") {
        auto bytes = slurp(file);
        bytes.resize(bytes.size() - 7);
        std::ofstream(file, std::ios::binary).write(bytes.data(), bytes.size());
        CHECK_THROWS_AS(load_scene(file), TruncatedError);
    }

    SUBCASE("trailing garbage") {
        std::ofstream(file, std::ios::binary | std::ios::app) << "junk";
        CHECK_THROWS_AS(load_scene(file), ParseError);
    }
}

TEST_CASE("chunked container round trips and sizes add up") {
    TempDir dir;
    const MotionModel m{MotionKind::Fourier, 2, false};
    ChunkedScene cs;
    cs.chunks.push_back({{0.0, 0.5}, cdgs::testing::random_scene(10, m, 1, 4)});
    cs.chunks.push_back({{0.5, 1.0}, cdgs::testing::random_scene(14, m, 1, 5)});
    const fs::path file = dir.path / "scene.cdgc";
    save_chunked(file, cs);
    CHECK(is_chunked_file(file));

    const ChunkedScene loaded = load_chunked(file);
    REQUIRE(loaded.chunks.size() == 2);
    CHECK(loaded.chunks[0].time_range == cs.chunks[0].time_range);
    CHECK(loaded.chunks[1].scene.size() == 14);

    const std::size_t index_bytes = 4 + 2 + 4 + 2 * (8 + 8 + 8);
    CHECK(fs::file_size(file) ==
          index_bytes + scene_file_bytes(cs.chunks[0].scene) + scene_file_bytes(cs.chunks[1].scene));

    const fs::path plain = dir.path / "plain.cdgs";
    save_scene(plain, cs.chunks[0].scene);
    CHECK(!is_chunked_file(plain));
    CHECK_THROWS_AS(load_chunked(plain), BadMagicError);
}

TEST_CASE("flo reader parses the documented layout") {
    TempDir dir;
    const fs::path file = dir.path / "tiny.flo";

    SUBCASE("hand-written 1x1 file") {
        std::ofstream out(file, std::ios::binary);
        const float magic = 202021.25f;
        const std::int32_t w = 1, h = 1;
        const float uv[2] = {1.0f, -2.0f};
        out.write(reinterpret_cast<const char*>(&magic), 4);
        out.write(reinterpret_cast<const char*>(&w), 4);
        out.write(reinterpret_cast<const char*>(&h), 4);
        out.write(reinterpret_cast<const char*>(uv), 8);
        out.close();
        const FlowField f = read_flo(file);
        CHECK(f.width == 1);
        CHECK(f.height == 1);
        CHECK(f.u(0, 0) == 1.0);
        CHECK(f.v(0, 0) == -2.0);
        CHECK(f.is_valid(0, 0));
    }

    SUBCASE("wrong magic") {
        std::ofstream out(file, std::ios::binary);
        const float magic = 123.0f;
        out.write(reinterpret_cast<const char*>(&magic), 4);
        out.close();
        CHECK_THROWS_AS(read_flo(file), BadMagicError);
    }

    SUBCASE("sentinel values are masked invalid") {
        FlowField f(2, 2);
        f.u(0, 0) = 1e10;
        f.v(1, 1) = 3.0;
        write_flo(file, f);
        const FlowField r = read_flo(file);
        CHECK(!r.is_valid(0, 0));
        CHECK(r.is_valid(0, 1));
        CHECK(r.is_valid(1, 1));
        CHECK(r.v(1, 1) == 3.0);
    }

    SUBCASE("round trip") {
        FlowField f(3, 5);
        std::mt19937_64 rng(6);
        std::uniform_real_distribution<double> uni(-10, 10);
        for (auto& v : f.uv)
            v = std::round(uni(rng) * 100) / 100.0;
        write_flo(file, f);
        const FlowField r = read_flo(file);
        for (std::size_t i = 0; i < f.uv.size(); ++i)
            CHECK(r.uv[i] == static_cast<double>(static_cast<float>(f.uv[i])));
    }
}

TEST_CASE("ply reader") {
    TempDir dir;
    const fs::path file = dir.path / "points.ply";

    SUBCASE("ascii with colors") {
        std::ofstream(file) << "ply\nformat ascii 1.0\nelement vertex 3\n"
                               "property float x\nproperty float y\nproperty float z\n"
                               "property uchar red\nproperty uchar green\nproperty uchar blue\n"
                               "end_header\n"
                               "0 0 0 255 0 0\n"
                               "1 2 3 0 255 0\n"
                               "-1 -2 -3 0 0 255\n";
        const auto pts = read_ply_points(file);
        REQUIRE(pts.size() == 3);
        CHECK((pts[1].position - Vec3(1, 2, 3)).norm() == 0.0);
        CHECK((pts[0].color - Vec3(1, 0, 0)).norm() == 0.0);
        CHECK((pts[2].color - Vec3(0, 0, 1)).norm() == 0.0);
    }

    SUBCASE("missing color defaults to gray") {
        std::ofstream(file) << "ply\nformat ascii 1.0\nelement vertex 1\n"
                               "property float x\nproperty float y\nproperty float z\n"
                               "end_header\n0.5 0.5 0.5\n";
        const auto pts = read_ply_points(file);
        REQUIRE(pts.size() == 1);
        CHECK((pts[0].color - Vec3(0.5, 0.5, 0.5)).norm() == 0.0);
    }

    SUBCASE("binary and ascii encodings agree") {
        const std::vector<float> xyz = {0.25f, -1.5f, 3.0f, 7.125f, 0.0f, -2.25f};
        const std::vector<unsigned char> rgb = {10, 20, 30, 200, 150, 100};

        std::ofstream(file) << "ply\nformat ascii 1.0\nelement vertex 2\n"
                               "property float x\nproperty float y\nproperty float z\n"
                               "property uchar red\nproperty uchar green\nproperty uchar blue\n"
                               "end_header\n"
                            << xyz[0] << " " << xyz[1] << " " << xyz[2] << " " << int(rgb[0])
                            << " " << int(rgb[1]) << " " << int(rgb[2]) << "\n"
                            << xyz[3] << " " << xyz[4] << " " << xyz[5] << " " << int(rgb[3])
                            << " " << int(rgb[4]) << " " << int(rgb[5]) << "\n";
        const auto ascii_pts = read_ply_points(file);

        const fs::path bin = dir.path / "points_bin.ply";
        std::ofstream out(bin, std::ios::binary);
        out << "ply\nformat binary_little_endian 1.0\nelement vertex 2\n"
               "property float x\nproperty float y\nproperty float z\n"
               "property uchar red\nproperty uchar green\nproperty uchar blue\n"
               "end_header\n";
        for (int i = 0; i < 2; ++i) {
            out.write(reinterpret_cast<const char*>(&xyz[3 * i]), 12);
            out.write(reinterpret_cast<const char*>(&rgb[3 * i]), 3);
        }
        out.close();
        const auto bin_pts = read_ply_points(bin);

        REQUIRE(ascii_pts.size() == bin_pts.size());
        for (std::size_t i = 0; i < ascii_pts.size(); ++i) {
            CHECK((ascii_pts[i].position - bin_pts[i].position).norm() == 0.0);
            CHECK((ascii_pts[i].color - bin_pts[i].color).norm() == 0.0);
        }
    }

    SUBCASE("malformed header") {
        std::ofstream(file) << "ply\nformat ascii 1.0\nelement vertex 1\n"
                               "property nonsense x\nend_header\n0\n";
        CHECK_THROWS_AS(read_ply_points(file), ParseError);
    }
}

TEST_CASE("png round trip") {
    TempDir dir;
    const fs::path file = dir.path / "img.png";

    SUBCASE("quantization rules") {
        Image img(1, 3, 3);
        img.at(0, 0, 0) = 1.0;
        img.at(0, 1, 0) = 0.5;
        img.at(0, 2, 0) = 0.0;
        write_image(file, img);
        const Image r = read_image(file);
        CHECK(r.at(0, 0, 0) == doctest::Approx(1.0));
        CHECK(r.at(0, 1, 0) == doctest::Approx(128.0 / 255.0)); // round-half-up
        CHECK(r.at(0, 2, 0) == doctest::Approx(0.0));
    }

    SUBCASE("round trip within half a quantization step") {
        Image img(9, 7, 3);
        std::mt19937_64 rng(7);
        std::uniform_real_distribution<double> uni(0, 1);
        for (auto& v : img.data)
            v = uni(rng);
        write_image(file, img);
        const Image r = read_image(file);
        for (std::size_t i = 0; i < img.data.size(); ++i)
            CHECK(std::abs(r.data[i] - img.data[i]) <= 1.0 / 510.0 + 1e-12);
    }

    SUBCASE("alpha channel is preserved") {
        Image img(4, 4, 4);
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) {
                img.at(y, x, 0) = 0.8;
                img.at(y, x, 3) = (y * 4 + x) / 15.0;
            }
        write_image(file, img);
        const Image r = read_image(file);
        REQUIRE(r.channels == 4);
        CHECK(std::abs(r.at(1, 2, 3) - img.at(1, 2, 3)) <= 1.0 / 510.0);
    }
}

TEST_CASE("manifest loading") {
    TempDir dir;
    // A black 8x8 placeholder referenced by every frame.
    write_image(dir.path / "f0.png", Image(8, 8, 3));
    write_image(dir.path / "f1.png", Image(8, 8, 3));

    auto write_manifest = [&](const std::string& body) {
        std::ofstream(dir.path / "transforms.json") << body;
    };
    const std::string identity_matrix =
        R"([[1,0,0,0],[0,1,0,0],[0,0,1,3],[0,0,0,1]])";

    SUBCASE("two-frame toy manifest gets times 0 and 0.5") {
        write_manifest(R"({"camera_angle_x": 0.8, "frames": [
            {"file_path": "f0.png", "time": 0.0, "transform_matrix": )" +
                       identity_matrix + R"(},
            {"file_path": "f1.png", "time": 1.0, "transform_matrix": )" +
                       identity_matrix + R"(}]})");
        const DatasetManifest m = load_manifest(dir.path);
        CHECK(m.time_steps == 2);
        CHECK(m.time_of(m.frames[0]) == 0.0);
        CHECK(m.time_of(m.frames[1]) == 0.5);
        CHECK(m.width == 8);
        CHECK(m.fl_x == doctest::Approx(0.5 * 8 / std::tan(0.4)));
    }

    SUBCASE("missing transform_matrix is a named parse error") {
        write_manifest(R"({"camera_angle_x": 0.8, "frames": [
            {"file_path": "f0.png", "time": 0.0}]})");
        CHECK_THROWS_WITH_AS(load_manifest(dir.path),
                             doctest::Contains("transform_matrix"), ParseError);
    }

    SUBCASE("per-camera focal override lands on the built camera") {
        write_manifest(R"({"fl_x": 10.0, "cameras": [{"id": 1, "fl_x": 20.0}], "frames": [
            {"file_path": "f0.png", "time_index": 0, "camera_id": 0, "transform_matrix": )" +
                       identity_matrix + R"(},
            {"file_path": "f1.png", "time_index": 0, "camera_id": 1, "transform_matrix": )" +
                       identity_matrix + R"(}]})");
        const DatasetManifest m = load_manifest(dir.path);
        CHECK(m.camera_for(m.frames[0]).fx == 10.0);
        CHECK(m.camera_for(m.frames[1]).fx == 20.0);
    }

    SUBCASE("non-contiguous timesteps are rejected") {
        write_manifest(R"({"fl_x": 10.0, "frames": [
            {"file_path": "f0.png", "time_index": 0, "transform_matrix": )" +
                       identity_matrix + R"(},
            {"file_path": "f1.png", "time_index": 2, "transform_matrix": )" +
                       identity_matrix + R"(}]})");
        CHECK_THROWS_AS(load_manifest(dir.path), ParseError);
    }

    SUBCASE("missing referenced image is rejected") {
        write_manifest(R"({"fl_x": 10.0, "frames": [
            {"file_path": "missing.png", "time_index": 0, "transform_matrix": )" +
                       identity_matrix + R"(}]})");
        CHECK_THROWS_AS(load_manifest(dir.path), ParseError);
    }

    SUBCASE("CDGS_DATA_ROOT resolves relative dataset paths") {
        write_manifest(R"({"fl_x": 10.0, "frames": [
            {"file_path": "f0.png", "time_index": 0, "transform_matrix": )" +
                       identity_matrix + R"(}]})");
        setenv("CDGS_DATA_ROOT", dir.path.parent_path().c_str(), 1);
        const DatasetManifest m = load_manifest(dir.path.filename());
        unsetenv("CDGS_DATA_ROOT");
        CHECK(m.frames.size() == 1);
        CHECK(std::filesystem::exists(m.frames[0].image_path));
    }
}

TEST_CASE("camera convention: the documented worked example") {
    // A camera 3 units up the world +z axis (OpenGL camera-to-world: x right,
    // y up, camera looking along world -z). In renderer space the camera
    // looks down +z with y down, so the world origin must land at depth 3
    // on the principal point.
    TempDir dir;
    write_image(dir.path / "f0.png", Image(8, 8, 3));
    std::ofstream(dir.path / "transforms.json")
        << R"({"fl_x": 4.0, "frames": [{"file_path": "f0.png", "time_index": 0,
             "transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,3],[0,0,0,1]]}]})";
    const DatasetManifest m = load_manifest(dir.path);
    const Camera cam = m.camera_for(m.frames[0]);

    Mat4 expected;
    expected << 1, 0, 0, 0,
                0, -1, 0, 0,
                0, 0, -1, 3,
                0, 0, 0, 1;
    CHECK((cam.world_to_camera - expected).cwiseAbs().maxCoeff() < 1e-12);
    const Vec3 v = world_to_camera(cam, Vec3(0, 0, 0));
    CHECK((v - Vec3(0, 0, 3)).norm() < 1e-12);
}

TEST_CASE("dataset round trip through a written directory") {
    TempDir dir;
    const MotionModel m{MotionKind::Fourier, 1, false};
    const Scene gt = cdgs::testing::random_scene(5, m, 0, 8);
    const std::vector<Camera> cams = {cdgs::testing::orbit_camera(16, 16, 4, 0.3, 0.4, 14),
                                      cdgs::testing::orbit_camera(16, 16, 4, 2.1, 0.4, 14)};
    Dataset ds = cdgs::testing::render_dataset(gt, cams, 3, Vec3::Zero(), true);
    ds.probe.push_back(ds.train.back());
    ds.train.pop_back();

    cdgs::testing::write_dataset_dir(dir.path, ds);
    const Dataset loaded = load_dataset(load_manifest(dir.path));
    CHECK(loaded.time_steps == 3);
    REQUIRE(loaded.train.size() == ds.train.size());
    REQUIRE(loaded.probe.size() == 1);

    // Images survive up to 8-bit quantization; cameras and times exactly.
    for (std::size_t i = 0; i < ds.train.size(); ++i) {
        CHECK(loaded.train[i].t == ds.train[i].t);
        CHECK((loaded.train[i].camera.world_to_camera - ds.train[i].camera.world_to_camera)
                  .cwiseAbs()
                  .maxCoeff() < 1e-9);
        double max_diff = 0;
        for (std::size_t k = 0; k < ds.train[i].image.data.size(); ++k)
            max_diff = std::max(max_diff, std::abs(loaded.train[i].image.data[k] -
                                                   ds.train[i].image.data[k]));
        CHECK(max_diff <= 1.0 / 510.0 + 1e-12);
        REQUIRE(loaded.train[i].flow_fwd.has_value());
        double flow_diff = 0;
        for (std::size_t k = 0; k < ds.train[i].flow_fwd->uv.size(); ++k)
            flow_diff = std::max(flow_diff, std::abs(loaded.train[i].flow_fwd->uv[k] -
                                                     ds.train[i].flow_fwd->uv[k]));
        CHECK(flow_diff < 1e-6); // f32 on disk
    }
}
