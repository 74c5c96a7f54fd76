#pragma once

#include "cdgs/image.hpp"
#include "cdgs/scene.hpp"

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace cdgs {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct BadMagicError : IoError {
    using IoError::IoError;
};
struct VersionError : IoError {
    using IoError::IoError;
};
struct TruncatedError : IoError {
    using IoError::IoError;
};
struct ParseError : IoError {
    using IoError::IoError;
};

inline constexpr std::size_t kSceneHeaderBytes = 44;

/// Scene container, magic "CDGS": a 44-byte little-endian header followed by
/// N * param_count_per_gaussian f32 values in declared field order
/// (center_coeffs, rot_coeffs, log_scale, [scale_slope], sh_coeffs,
/// opacity_logit).
void save_scene(const std::filesystem::path& path, const Scene& scene);
Scene load_scene(const std::filesystem::path& path);

/// Chunked container, magic "CDGC": index table of (t_lo, t_hi, byte size)
/// per chunk followed by concatenated scene blobs.
void save_chunked(const std::filesystem::path& path, const ChunkedScene& cs);
ChunkedScene load_chunked(const std::filesystem::path& path);

/// True when the file starts with the chunked-container magic.
bool is_chunked_file(const std::filesystem::path& path);

/// Exact on-disk size of a scene saved with save_scene.
std::size_t scene_file_bytes(const Scene& scene);

// --- dataset manifest ---------------------------------------------------

struct ManifestCamera {
    int id = 0;
    std::optional<double> fl_x, fl_y, cx, cy;
};

struct FrameRecord {
    std::filesystem::path image_path;
    int time_index = 0;
    int camera_id = 0;
    Mat4 camera_to_world = Mat4::Identity(); // OpenGL-style axes (NeRF convention)
    std::optional<std::filesystem::path> flow_fwd_path, flow_bwd_path;
    bool probe = false;
};

/// Parsed transforms.json. Frames reference a shared intrinsics block with
/// optional per-camera overrides; normalized times are recomputed as
/// time_index / time_steps, never read from file floats.
struct DatasetManifest {
    std::filesystem::path root;
    int width = 0;
    int height = 0;
    double fl_x = 0, fl_y = 0, cx = 0, cy = 0;
    Vec3 background = Vec3::Zero();
    std::vector<ManifestCamera> cameras;
    std::vector<FrameRecord> frames;
    int time_steps = 0;
    std::optional<std::filesystem::path> init_ply;
    std::optional<std::array<Vec3, 2>> scene_bounds; // optional [min, max] init box

    double time_of(const FrameRecord& f) const {
        return static_cast<double>(f.time_index) / time_steps;
    }
    /// Renderer-space camera for one frame (y-down z-forward, see docs).
    Camera camera_for(const FrameRecord& f) const;
};

/// Reads <dir>/transforms.json (or manifest.json). Throws ParseError on
/// missing fields or non-contiguous training timesteps.
DatasetManifest load_manifest(const std::filesystem::path& dir);

/// One posed, timed training observation.
struct TrainingFrame {
    Image image; // RGB in [0,1]
    Camera camera;
    int time_index = 0;
    double t = 0.0;
    std::optional<FlowField> flow_fwd, flow_bwd;
};

struct Dataset {
    std::vector<TrainingFrame> train;
    std::vector<TrainingFrame> probe;
    Vec3 background = Vec3::Zero();
    int time_steps = 0;
    std::vector<Vec3> init_points;
    std::vector<Vec3> init_colors;
    std::optional<std::array<Vec3, 2>> scene_bounds;

    double frame_dt() const { return 1.0 / time_steps; }
};

/// Loads every referenced image and flow field into memory.
Dataset load_dataset(const DatasetManifest& manifest);

// --- flow, point cloud and image files -----------------------------------

/// Middlebury .flo: float magic 202021.25, i32 width/height, interleaved
/// (u, v) f32 rows. Components with |value| > 1e9 are masked invalid.
FlowField read_flo(const std::filesystem::path& path);
void write_flo(const std::filesystem::path& path, const FlowField& flow);

struct PlyPoint {
    Vec3 position;
    Vec3 color; // [0,1], gray 0.5 when the file has no color
};

/// ASCII or binary-little-endian PLY with x/y/z and optional red/green/blue.
std::vector<PlyPoint> read_ply_points(const std::filesystem::path& path);

/// 8-bit PNG; values scaled by 255 with round-half-up. Gray and palette
/// files are expanded to RGB; an alpha channel is preserved as a 4th channel.
Image read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Image& image);

} // namespace cdgs
