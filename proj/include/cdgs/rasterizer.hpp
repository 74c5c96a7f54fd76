#pragma once

#include "cdgs/image.hpp"
#include "cdgs/projection.hpp"
#include "cdgs/scene.hpp"

#include <cstdint>
#include <vector>

namespace cdgs {

struct RenderOutput {
    Image color;                              // H x W x 3, background excluded (black)
    Image alpha;                              // H x W x 1, 1 - transmittance
    std::vector<std::uint32_t> contrib_count; // H x W accepted contributions per pixel
};

struct FlowOutput {
    FlowField fwd;
    FlowField bwd;
};

/// Ascending camera-space depth, ties broken by ascending gaussian_index.
std::vector<Splat2D> sort_splats(std::vector<Splat2D> splats);

RenderOutput render_color(const Scene& scene, const Camera& cam, double t);

/// Per-Gaussian 2D scene flow alpha-blended with the blend weights of time t.
FlowOutput render_flow(const Scene& scene, const Camera& cam, double t, double dt);

/// Color and flow from one shared projection + sort, guaranteeing identical
/// blend weights for both outputs.
struct RenderBundle {
    RenderOutput color;
    FlowOutput flow;
};
RenderBundle render_bundle(const Scene& scene, const Camera& cam, double t, double dt,
                           bool want_flow);

/// Dispatches to the chunk whose half-open time range contains t.
/// Throws std::out_of_range when t is not covered.
RenderOutput render_chunked(const ChunkedScene& cs, const Camera& cam, double t);

/// color + background * (1 - alpha).
Image composite_over(const RenderOutput& out, const Vec3& background);

} // namespace cdgs
