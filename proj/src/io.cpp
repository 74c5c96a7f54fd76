#include "cdgs/io.hpp"

#include <nlohmann/json.hpp>
#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fmt/core.h>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are unsupported");

namespace cdgs {

namespace {

constexpr char kSceneMagic[4] = {'C', 'D', 'G', 'S'};
constexpr char kChunkMagic[4] = {'C', 'D', 'G', 'C'};
constexpr std::uint16_t kSceneVersion = 1;

struct FileReader {
    std::ifstream in;
    std::string name;

    explicit FileReader(const std::filesystem::path& path)
        : in(path, std::ios::binary), name(path.string()) {
        if (!in)
            throw IoError(fmt::format("cannot open {}", name));
    }
    void read(void* dst, std::size_t n) {
        in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in.gcount()) != n)
            throw TruncatedError(fmt::format("{}: truncated file", name));
    }
    template <typename T>
    T read_value() {
        T v;
        read(&v, sizeof(T));
        return v;
    }
    bool at_eof() {
        return in.peek() == EOF;
    }
};

struct FileWriter {
    std::ofstream out;
    std::string name;

    explicit FileWriter(const std::filesystem::path& path)
        : out(path, std::ios::binary), name(path.string()) {
        if (!out)
            throw IoError(fmt::format("cannot open {} for writing", name));
    }
    void write(const void* src, std::size_t n) {
        out.write(static_cast<const char*>(src), static_cast<std::streamsize>(n));
        if (!out)
            throw IoError(fmt::format("{}: write failed", name));
    }
    template <typename T>
    void write_value(const T& v) {
        write(&v, sizeof(T));
    }
};

void serialize_gaussian(const DynamicGaussian& g, bool time_varying_scale,
                        std::vector<float>& out) {
    for (double v : g.center_coeffs)
        out.push_back(static_cast<float>(v));
    for (double v : g.rot_coeffs)
        out.push_back(static_cast<float>(v));
    for (double v : g.log_scale)
        out.push_back(static_cast<float>(v));
    if (time_varying_scale)
        for (double v : g.scale_slope)
            out.push_back(static_cast<float>(v));
    for (double v : g.sh_coeffs)
        out.push_back(static_cast<float>(v));
    out.push_back(static_cast<float>(g.opacity_logit));
}

DynamicGaussian deserialize_gaussian(const float* data, const MotionModel& model,
                                     int sh_degree) {
    DynamicGaussian g = DynamicGaussian::zeros(model, sh_degree);
    std::size_t k = 0;
    for (auto& v : g.center_coeffs)
        v = data[k++];
    for (auto& v : g.rot_coeffs)
        v = data[k++];
    for (auto& v : g.log_scale)
        v = data[k++];
    if (model.time_varying_scale)
        for (auto& v : g.scale_slope)
            v = data[k++];
    for (auto& v : g.sh_coeffs)
        v = data[k++];
    g.opacity_logit = data[k++];
    return g;
}

void write_scene_stream(FileWriter& w, const Scene& scene) {
    w.write(kSceneMagic, 4);
    w.write_value<std::uint16_t>(kSceneVersion);
    w.write_value<std::uint8_t>(static_cast<std::uint8_t>(scene.model.kind));
    w.write_value<std::uint16_t>(static_cast<std::uint16_t>(scene.model.order));
    w.write_value<std::uint8_t>(static_cast<std::uint8_t>(scene.sh_degree));
    w.write_value<std::uint8_t>(scene.model.time_varying_scale ? 1 : 0);
    w.write_value<std::uint8_t>(0); // reserved
    w.write_value<std::uint64_t>(scene.gaussians.size());
    w.write_value<double>(scene.time_range[0]);
    w.write_value<double>(scene.time_range[1]);
    w.write_value<double>(scene.extent);

    std::vector<float> payload;
    payload.reserve(scene.size() * param_count_per_gaussian(scene.model, scene.sh_degree));
    for (const auto& g : scene.gaussians)
        serialize_gaussian(g, scene.model.time_varying_scale, payload);
    w.write(payload.data(), payload.size() * sizeof(float));
}

Scene read_scene_stream(FileReader& r) {
    char magic[4];
    r.read(magic, 4);
    if (std::memcmp(magic, kSceneMagic, 4) != 0)
        throw BadMagicError(fmt::format("{}: not a CDGS scene file", r.name));
    const auto version = r.read_value<std::uint16_t>();
    if (version != kSceneVersion)
        throw VersionError(fmt::format("{}: unsupported scene version {}", r.name, version));

    Scene scene;
    scene.model.kind = static_cast<MotionKind>(r.read_value<std::uint8_t>());
    scene.model.order = r.read_value<std::uint16_t>();
    scene.sh_degree = r.read_value<std::uint8_t>();
    scene.model.time_varying_scale = r.read_value<std::uint8_t>() != 0;
    r.read_value<std::uint8_t>(); // reserved
    const auto count = r.read_value<std::uint64_t>();
    scene.time_range[0] = r.read_value<double>();
    scene.time_range[1] = r.read_value<double>();
    scene.extent = r.read_value<double>();

    if (!scene.model.valid() || scene.sh_degree < 0 || scene.sh_degree > 3)
        throw ParseError(fmt::format("{}: invalid model header", r.name));

    const int params = param_count_per_gaussian(scene.model, scene.sh_degree);
    std::vector<float> buf(static_cast<std::size_t>(params));
    scene.gaussians.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        r.read(buf.data(), buf.size() * sizeof(float));
        scene.gaussians.push_back(deserialize_gaussian(buf.data(), scene.model, scene.sh_degree));
    }
    return scene;
}

} // namespace

std::size_t scene_file_bytes(const Scene& scene) {
    return kSceneHeaderBytes +
           scene.size() * static_cast<std::size_t>(
                              param_count_per_gaussian(scene.model, scene.sh_degree)) * 4;
}

void save_scene(const std::filesystem::path& path, const Scene& scene) {
    FileWriter w(path);
    write_scene_stream(w, scene);
}

Scene load_scene(const std::filesystem::path& path) {
    FileReader r(path);
    Scene scene = read_scene_stream(r);
    if (!r.at_eof())
        throw ParseError(fmt::format("{}: trailing bytes after payload", r.name));
    return scene;
}

void save_chunked(const std::filesystem::path& path, const ChunkedScene& cs) {
    FileWriter w(path);
    w.write(kChunkMagic, 4);
    w.write_value<std::uint16_t>(kSceneVersion);
    w.write_value<std::uint32_t>(static_cast<std::uint32_t>(cs.chunks.size()));
    for (const auto& c : cs.chunks) {
        w.write_value<double>(c.time_range[0]);
        w.write_value<double>(c.time_range[1]);
        w.write_value<std::uint64_t>(scene_file_bytes(c.scene));
    }
    for (const auto& c : cs.chunks)
        write_scene_stream(w, c.scene);
}

ChunkedScene load_chunked(const std::filesystem::path& path) {
    FileReader r(path);
    char magic[4];
    r.read(magic, 4);
    if (std::memcmp(magic, kChunkMagic, 4) != 0)
        throw BadMagicError(fmt::format("{}: not a CDGC chunked scene file", r.name));
    const auto version = r.read_value<std::uint16_t>();
    if (version != kSceneVersion)
        throw VersionError(fmt::format("{}: unsupported version {}", r.name, version));
    const auto n = r.read_value<std::uint32_t>();
    ChunkedScene cs;
    cs.chunks.resize(n);
    for (auto& c : cs.chunks) {
        c.time_range[0] = r.read_value<double>();
        c.time_range[1] = r.read_value<double>();
        r.read_value<std::uint64_t>(); // chunk size, implied by its header
    }
    for (auto& c : cs.chunks)
        c.scene = read_scene_stream(r);
    return cs;
}

bool is_chunked_file(const std::filesystem::path& path) {
    FileReader r(path);
    char magic[4];
    r.read(magic, 4);
    return std::memcmp(magic, kChunkMagic, 4) == 0;
}

// --- manifest -------------------------------------------------------------

namespace {

using nlohmann::json;

Mat4 parse_matrix(const json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 4)
        throw ParseError(fmt::format("{}: transform_matrix must be 4x4", where));
    Mat4 m;
    for (int r = 0; r < 4; ++r) {
        if (!j[r].is_array() || j[r].size() != 4)
            throw ParseError(fmt::format("{}: transform_matrix must be 4x4", where));
        for (int c = 0; c < 4; ++c)
            m(r, c) = j[r][c].get<double>();
    }
    return m;
}

// Width/height from the PNG IHDR without decoding the image.
std::pair<int, int> png_dimensions(const std::filesystem::path& path) {
    FileReader r(path);
    unsigned char head[24];
    r.read(head, 24);
    static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    if (std::memcmp(head, sig, 8) != 0)
        throw BadMagicError(fmt::format("{}: not a PNG file", path.string()));
    auto be32 = [&](int off) {
        return (head[off] << 24) | (head[off + 1] << 16) | (head[off + 2] << 8) | head[off + 3];
    };
    return {be32(16), be32(20)};
}

} // namespace

Camera DatasetManifest::camera_for(const FrameRecord& f) const {
    double fx = fl_x, fy = fl_y, cx_ = cx, cy_ = cy;
    for (const auto& c : cameras) {
        if (c.id == f.camera_id) {
            if (c.fl_x) fx = *c.fl_x;
            if (c.fl_y) fy = *c.fl_y;
            if (c.cx) cx_ = *c.cx;
            if (c.cy) cy_ = *c.cy;
            break;
        }
    }
    // NeRF-style camera-to-world (x right, y up, z backward) to the
    // renderer's y-down z-forward camera space: invert, then negate the
    // y and z rows.
    Mat4 w2c = f.camera_to_world.inverse();
    w2c.row(1) = -w2c.row(1);
    w2c.row(2) = -w2c.row(2);
    w2c.row(3) << 0, 0, 0, 1;
    return Camera(width, height, fx, fy, cx_, cy_, w2c);
}

DatasetManifest load_manifest(const std::filesystem::path& dir_in) {
    std::filesystem::path dir = dir_in;
    // Relative dataset paths resolve against CDGS_DATA_ROOT when set.
    if (dir.is_relative()) {
        if (const char* root = std::getenv("CDGS_DATA_ROOT"))
            dir = std::filesystem::path(root) / dir;
    }
    std::filesystem::path file = dir / "transforms.json";
    if (!std::filesystem::exists(file))
        file = dir / "manifest.json";
    if (!std::filesystem::exists(file))
        throw ParseError(fmt::format("{}: no transforms.json or manifest.json", dir.string()));

    std::ifstream in(file);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError(fmt::format("{}: {}", file.string(), e.what()));
    }

    DatasetManifest m;
    m.root = dir;
    if (!j.contains("frames") || !j["frames"].is_array() || j["frames"].empty())
        throw ParseError(fmt::format("{}: missing frames[]", file.string()));

    for (const auto& jf : j["frames"]) {
        FrameRecord f;
        if (!jf.contains("file_path"))
            throw ParseError(fmt::format("{}: frame missing file_path", file.string()));
        std::filesystem::path p = jf["file_path"].get<std::string>();
        if (!p.has_extension())
            p += ".png";
        f.image_path = dir / p;
        if (!jf.contains("transform_matrix"))
            throw ParseError(fmt::format("{}: frame '{}' missing transform_matrix",
                                         file.string(), jf["file_path"].get<std::string>()));
        f.camera_to_world = parse_matrix(jf["transform_matrix"], file.string());
        f.camera_id = jf.value("camera_id", 0);
        f.probe = jf.value("probe", false);
        if (jf.contains("flow_fwd"))
            f.flow_fwd_path = dir / jf["flow_fwd"].get<std::string>();
        if (jf.contains("flow_bwd"))
            f.flow_bwd_path = dir / jf["flow_bwd"].get<std::string>();
        m.frames.push_back(std::move(f));
    }

    // Timestep indices: either explicit, or ranks of the distinct "time"
    // floats. Normalized times are then recomputed as index / T.
    const bool has_index = j["frames"][0].contains("time_index");
    if (has_index) {
        for (std::size_t i = 0; i < m.frames.size(); ++i)
            m.frames[i].time_index = j["frames"][i]["time_index"].get<int>();
    } else {
        std::set<double> times;
        for (const auto& jf : j["frames"]) {
            if (!jf.contains("time"))
                throw ParseError(fmt::format("{}: frame missing time/time_index", file.string()));
            times.insert(jf["time"].get<double>());
        }
        std::vector<double> ordered(times.begin(), times.end());
        for (std::size_t i = 0; i < m.frames.size(); ++i) {
            const double t = j["frames"][i]["time"].get<double>();
            m.frames[i].time_index = static_cast<int>(
                std::lower_bound(ordered.begin(), ordered.end(), t) - ordered.begin());
        }
    }

    for (const auto& f : m.frames)
        if (!std::filesystem::exists(f.image_path))
            throw ParseError(fmt::format("{}: referenced image '{}' does not exist",
                                         file.string(), f.image_path.string()));

    int max_index = 0;
    for (const auto& f : m.frames)
        max_index = std::max(max_index, f.time_index);
    m.time_steps = max_index + 1;

    // Contiguity per camera over training frames.
    std::map<int, std::set<int>> by_camera;
    for (const auto& f : m.frames)
        if (!f.probe)
            by_camera[f.camera_id].insert(f.time_index);
    for (const auto& [cam_id, indices] : by_camera) {
        int expect = 0;
        for (int idx : indices)
            if (idx != expect++)
                throw ParseError(fmt::format("{}: camera {} timesteps are not contiguous from 0",
                                             file.string(), cam_id));
    }

    m.width = j.value("w", 0);
    m.height = j.value("h", 0);
    if (m.width == 0 || m.height == 0) {
        auto [w, h] = png_dimensions(m.frames.front().image_path);
        m.width = w;
        m.height = h;
    }

    if (j.contains("fl_x")) {
        m.fl_x = j["fl_x"].get<double>();
        m.fl_y = j.value("fl_y", m.fl_x);
    } else if (j.contains("camera_angle_x")) {
        m.fl_x = 0.5 * m.width / std::tan(0.5 * j["camera_angle_x"].get<double>());
        m.fl_y = m.fl_x;
    } else {
        throw ParseError(fmt::format("{}: missing fl_x or camera_angle_x", file.string()));
    }
    m.cx = j.value("cx", m.width / 2.0);
    m.cy = j.value("cy", m.height / 2.0);

    if (j.contains("background")) {
        const auto& bg = j["background"];
        if (bg.is_string()) {
            const auto s = bg.get<std::string>();
            if (s == "white")
                m.background = Vec3(1, 1, 1);
            else if (s != "black")
                throw ParseError(fmt::format("{}: unknown background '{}'", file.string(), s));
        } else {
            for (int k = 0; k < 3; ++k)
                m.background[k] = bg[k].get<double>();
        }
    }

    if (j.contains("cameras")) {
        for (const auto& jc : j["cameras"]) {
            ManifestCamera c;
            c.id = jc.value("id", 0);
            if (jc.contains("fl_x")) c.fl_x = jc["fl_x"].get<double>();
            if (jc.contains("fl_y")) c.fl_y = jc["fl_y"].get<double>();
            if (jc.contains("cx")) c.cx = jc["cx"].get<double>();
            if (jc.contains("cy")) c.cy = jc["cy"].get<double>();
            m.cameras.push_back(c);
        }
    }

    if (j.contains("init_ply"))
        m.init_ply = dir / j["init_ply"].get<std::string>();
    if (j.contains("scene_bounds")) {
        const auto& b = j["scene_bounds"];
        std::array<Vec3, 2> bounds;
        for (int side = 0; side < 2; ++side)
            for (int k = 0; k < 3; ++k)
                bounds[side][k] = b[side][k].get<double>();
        m.scene_bounds = bounds;
    }

    return m;
}

Dataset load_dataset(const DatasetManifest& manifest) {
    Dataset ds;
    ds.background = manifest.background;
    ds.time_steps = manifest.time_steps;
    ds.scene_bounds = manifest.scene_bounds;

    for (const auto& rec : manifest.frames) {
        TrainingFrame f;
        f.time_index = rec.time_index;
        f.t = manifest.time_of(rec);
        f.camera = manifest.camera_for(rec);

        Image img = read_image(rec.image_path);
        if (img.channels == 4) {
            // Composite over the dataset background.
            Image rgb(img.height, img.width, 3);
            for (int y = 0; y < img.height; ++y)
                for (int x = 0; x < img.width; ++x) {
                    const double a = img.at(y, x, 3);
                    for (int c = 0; c < 3; ++c)
                        rgb.at(y, x, c) = img.at(y, x, c) * a + manifest.background[c] * (1 - a);
                }
            img = std::move(rgb);
        }
        if (img.height != manifest.height || img.width != manifest.width)
            throw ParseError(fmt::format("{}: image size {}x{} does not match manifest {}x{}",
                                         rec.image_path.string(), img.width, img.height,
                                         manifest.width, manifest.height));
        f.image = std::move(img);
        if (rec.flow_fwd_path)
            f.flow_fwd = read_flo(*rec.flow_fwd_path);
        if (rec.flow_bwd_path)
            f.flow_bwd = read_flo(*rec.flow_bwd_path);
        (rec.probe ? ds.probe : ds.train).push_back(std::move(f));
    }

    if (manifest.init_ply) {
        for (const auto& p : read_ply_points(*manifest.init_ply)) {
            ds.init_points.push_back(p.position);
            ds.init_colors.push_back(p.color);
        }
    }
    return ds;
}

// --- .flo -----------------------------------------------------------------

namespace {
constexpr float kFloMagic = 202021.25f;
constexpr double kFlowInvalid = 1e9;
} // namespace

FlowField read_flo(const std::filesystem::path& path) {
    FileReader r(path);
    const auto magic = r.read_value<float>();
    if (magic != kFloMagic)
        throw BadMagicError(fmt::format("{}: bad .flo magic", path.string()));
    const auto width = r.read_value<std::int32_t>();
    const auto height = r.read_value<std::int32_t>();
    if (width < 1 || height < 1 || width > 99999 || height > 99999)
        throw ParseError(fmt::format("{}: implausible .flo size {}x{}", path.string(), width, height));

    FlowField flow(height, width);
    std::vector<float> row(static_cast<std::size_t>(width) * 2);
    for (int y = 0; y < height; ++y) {
        r.read(row.data(), row.size() * sizeof(float));
        for (int x = 0; x < width; ++x) {
            const double u = row[2 * x], v = row[2 * x + 1];
            flow.u(y, x) = u;
            flow.v(y, x) = v;
            if (!(std::abs(u) < kFlowInvalid) || !(std::abs(v) < kFlowInvalid))
                flow.valid[static_cast<std::size_t>(y) * width + x] = 0;
        }
    }
    return flow;
}

void write_flo(const std::filesystem::path& path, const FlowField& flow) {
    FileWriter w(path);
    w.write_value<float>(kFloMagic);
    w.write_value<std::int32_t>(flow.width);
    w.write_value<std::int32_t>(flow.height);
    std::vector<float> row(static_cast<std::size_t>(flow.width) * 2);
    for (int y = 0; y < flow.height; ++y) {
        for (int x = 0; x < flow.width; ++x) {
            row[2 * x] = static_cast<float>(flow.u(y, x));
            row[2 * x + 1] = static_cast<float>(flow.v(y, x));
        }
        w.write(row.data(), row.size() * sizeof(float));
    }
}

// --- PLY --------------------------------------------------------------------

namespace {

struct PlyProperty {
    std::string name;
    int bytes = 0;
    bool is_float = false;
    bool is_signed = false;
};

int ply_type_bytes(const std::string& t, bool& is_float, bool& is_signed) {
    is_float = t == "float" || t == "float32" || t == "double" || t == "float64";
    is_signed = t == "char" || t == "int8" || t == "short" || t == "int16" || t == "int" ||
                t == "int32";
    if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
    if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
    if (t == "int" || t == "uint" || t == "int32" || t == "uint32" || t == "float" ||
        t == "float32") return 4;
    if (t == "double" || t == "float64") return 8;
    return 0;
}

double ply_decode(const unsigned char* p, const PlyProperty& prop) {
    if (prop.is_float) {
        if (prop.bytes == 4) {
            float v;
            std::memcpy(&v, p, 4);
            return v;
        }
        double v;
        std::memcpy(&v, p, 8);
        return v;
    }
    std::int64_t v = 0;
    std::memcpy(&v, p, prop.bytes);
    if (prop.is_signed && prop.bytes < 8) {
        const int shift = 64 - prop.bytes * 8;
        v = (v << shift) >> shift;
    }
    return static_cast<double>(v);
}

} // namespace

std::vector<PlyPoint> read_ply_points(const std::filesystem::path& path) {
    FileReader r(path);
    std::string line;
    auto next_line = [&]() -> std::string {
        std::string s;
        if (!std::getline(r.in, s))
            throw ParseError(fmt::format("{}: unexpected end of PLY header", path.string()));
        if (!s.empty() && s.back() == '\r')
            s.pop_back();
        return s;
    };

    if (next_line() != "ply")
        throw BadMagicError(fmt::format("{}: not a PLY file", path.string()));
    bool binary = false;
    bool in_vertex = false;
    bool seen_vertex = false;
    std::size_t vertex_count = 0;
    std::vector<PlyProperty> props;

    for (;;) {
        line = next_line();
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "comment" || word == "obj_info")
            continue;
        if (word == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt == "binary_little_endian")
                binary = true;
            else if (fmt != "ascii")
                throw ParseError(fmt::format("{}: unsupported PLY format '{}'", path.string(), fmt));
        } else if (word == "element") {
            std::string name;
            std::size_t count;
            ls >> name >> count;
            if (name == "vertex") {
                in_vertex = true;
                seen_vertex = true;
                vertex_count = count;
            } else {
                if (!seen_vertex && count > 0)
                    throw ParseError(fmt::format(
                        "{}: element '{}' precedes vertex data", path.string(), name));
                in_vertex = false;
            }
        } else if (word == "property") {
            if (!in_vertex)
                continue;
            std::string type, name;
            ls >> type;
            if (type == "list")
                throw ParseError(fmt::format("{}: list property in vertex element", path.string()));
            ls >> name;
            PlyProperty p;
            p.name = name;
            p.bytes = ply_type_bytes(type, p.is_float, p.is_signed);
            if (p.bytes == 0)
                throw ParseError(fmt::format("{}: unknown PLY type '{}'", path.string(), type));
            props.push_back(p);
        } else if (word == "end_header") {
            break;
        } else if (!word.empty()) {
            throw ParseError(fmt::format("{}: malformed PLY header line '{}'", path.string(), line));
        }
    }
    if (!seen_vertex)
        throw ParseError(fmt::format("{}: PLY has no vertex element", path.string()));

    int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1;
    std::size_t stride = 0;
    std::vector<std::size_t> offsets;
    for (std::size_t i = 0; i < props.size(); ++i) {
        offsets.push_back(stride);
        stride += props[i].bytes;
        const auto& n = props[i].name;
        if (n == "x") ix = static_cast<int>(i);
        else if (n == "y") iy = static_cast<int>(i);
        else if (n == "z") iz = static_cast<int>(i);
        else if (n == "red") ir = static_cast<int>(i);
        else if (n == "green") ig = static_cast<int>(i);
        else if (n == "blue") ib = static_cast<int>(i);
    }
    if (ix < 0 || iy < 0 || iz < 0)
        throw ParseError(fmt::format("{}: PLY lacks x/y/z vertex properties", path.string()));
    const bool has_color = ir >= 0 && ig >= 0 && ib >= 0;

    std::vector<PlyPoint> points;
    points.reserve(vertex_count);
    auto normalize_color = [&](double v, const PlyProperty& p) {
        return p.is_float ? v : v / 255.0;
    };

    if (binary) {
        std::vector<unsigned char> row(stride);
        for (std::size_t i = 0; i < vertex_count; ++i) {
            r.read(row.data(), stride);
            PlyPoint pt;
            pt.position = Vec3(ply_decode(&row[offsets[ix]], props[ix]),
                               ply_decode(&row[offsets[iy]], props[iy]),
                               ply_decode(&row[offsets[iz]], props[iz]));
            pt.color = has_color
                           ? Vec3(normalize_color(ply_decode(&row[offsets[ir]], props[ir]), props[ir]),
                                  normalize_color(ply_decode(&row[offsets[ig]], props[ig]), props[ig]),
                                  normalize_color(ply_decode(&row[offsets[ib]], props[ib]), props[ib]))
                           : Vec3(0.5, 0.5, 0.5);
            points.push_back(pt);
        }
    } else {
        for (std::size_t i = 0; i < vertex_count; ++i) {
            line = next_line();
            std::istringstream ls(line);
            std::vector<double> vals(props.size());
            for (auto& v : vals)
                if (!(ls >> v))
                    throw ParseError(fmt::format("{}: short PLY vertex row", path.string()));
            PlyPoint pt;
            pt.position = Vec3(vals[ix], vals[iy], vals[iz]);
            pt.color = has_color ? Vec3(normalize_color(vals[ir], props[ir]),
                                        normalize_color(vals[ig], props[ig]),
                                        normalize_color(vals[ib], props[ib]))
                                 : Vec3(0.5, 0.5, 0.5);
            points.push_back(pt);
        }
    }
    return points;
}

// --- PNG --------------------------------------------------------------------

namespace {

struct PngReadCtx {
    png_structp png = nullptr;
    png_infop info = nullptr;
    FILE* fp = nullptr;
    ~PngReadCtx() {
        if (png)
            png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (fp)
            std::fclose(fp);
    }
};

struct PngWriteCtx {
    png_structp png = nullptr;
    png_infop info = nullptr;
    FILE* fp = nullptr;
    ~PngWriteCtx() {
        if (png)
            png_destroy_write_struct(&png, info ? &info : nullptr);
        if (fp)
            std::fclose(fp);
    }
};

[[noreturn]] void png_error_thrower(png_structp, png_const_charp msg) {
    throw IoError(fmt::format("libpng: {}", msg));
}

void png_warning_silencer(png_structp, png_const_charp) {}

} // namespace

Image read_image(const std::filesystem::path& path) {
    PngReadCtx ctx;
    ctx.fp = std::fopen(path.string().c_str(), "rb");
    if (!ctx.fp)
        throw IoError(fmt::format("cannot open {}", path.string()));
    ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_thrower,
                                     png_warning_silencer);
    ctx.info = png_create_info_struct(ctx.png);
    png_init_io(ctx.png, ctx.fp);
    png_read_info(ctx.png, ctx.info);

    const int bit_depth = png_get_bit_depth(ctx.png, ctx.info);
    const int color_type = png_get_color_type(ctx.png, ctx.info);
    if (bit_depth == 16)
        throw ParseError(fmt::format("{}: unsupported bit depth 16", path.string()));

    if (color_type == PNG_COLOR_TYPE_PALETTE)
        png_set_palette_to_rgb(ctx.png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8)
        png_set_expand_gray_1_2_4_to_8(ctx.png);
    if (png_get_valid(ctx.png, ctx.info, PNG_INFO_tRNS))
        png_set_tRNS_to_alpha(ctx.png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(ctx.png);
    png_read_update_info(ctx.png, ctx.info);

    const int width = static_cast<int>(png_get_image_width(ctx.png, ctx.info));
    const int height = static_cast<int>(png_get_image_height(ctx.png, ctx.info));
    const int channels = png_get_channels(ctx.png, ctx.info);
    if (channels != 3 && channels != 4)
        throw ParseError(fmt::format("{}: unsupported channel count {}", path.string(), channels));

    std::vector<unsigned char> raw(static_cast<std::size_t>(height) * width * channels);
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y)
        rows[y] = raw.data() + static_cast<std::size_t>(y) * width * channels;
    png_read_image(ctx.png, rows.data());
    png_read_end(ctx.png, nullptr);

    Image img(height, width, channels);
    for (std::size_t i = 0; i < raw.size(); ++i)
        img.data[i] = raw[i] / 255.0;
    return img;
}

void write_image(const std::filesystem::path& path, const Image& image) {
    int color_type;
    switch (image.channels) {
    case 1: color_type = PNG_COLOR_TYPE_GRAY; break;
    case 3: color_type = PNG_COLOR_TYPE_RGB; break;
    case 4: color_type = PNG_COLOR_TYPE_RGBA; break;
    default:
        throw std::invalid_argument(
            fmt::format("write_image: unsupported channel count {}", image.channels));
    }

    PngWriteCtx ctx;
    ctx.fp = std::fopen(path.string().c_str(), "wb");
    if (!ctx.fp)
        throw IoError(fmt::format("cannot open {} for writing", path.string()));
    ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_thrower,
                                      png_warning_silencer);
    ctx.info = png_create_info_struct(ctx.png);
    png_init_io(ctx.png, ctx.fp);
    png_set_IHDR(ctx.png, ctx.info, image.width, image.height, 8, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(ctx.png, ctx.info);

    std::vector<unsigned char> row(static_cast<std::size_t>(image.width) * image.channels);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < image.channels; ++c) {
                const double v = std::clamp(image.at(y, x, c), 0.0, 1.0);
                row[static_cast<std::size_t>(x) * image.channels + c] =
                    static_cast<unsigned char>(std::floor(v * 255.0 + 0.5));
            }
        png_write_row(ctx.png, row.data());
    }
    png_write_end(ctx.png, nullptr);
}

} // namespace cdgs
