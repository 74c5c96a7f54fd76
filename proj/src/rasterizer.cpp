#include "cdgs/rasterizer.hpp"

#include "cdgs/motion.hpp"
#include "cdgs/threading.hpp"
#include "raster_internal.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/core.h>
#include <stdexcept>

namespace cdgs {

namespace detail {

PreparedSplats prepare_splats(const Scene& scene, const Camera& cam, double t, double dt,
                              bool with_flow) {
    PreparedSplats prep;
    prep.with_flow = with_flow;

    auto projected = project_scene(scene, cam, t);
    prep.splats.reserve(projected.size());
    for (auto& p : projected)
        if (p)
            prep.splats.push_back(*p);
    prep.splats = sort_splats(std::move(prep.splats));

    const std::size_t n = prep.splats.size();
    prep.conic.resize(n);
    if (with_flow) {
        prep.flow_fwd.resize(n);
        prep.flow_bwd.resize(n);
    }
    parallel_for(n, [&](std::size_t i) {
        const Splat2D& s = prep.splats[i];
        const double det = s.cov2d.determinant();
        if (!(det > 0.0) || !(s.cov2d(0, 0) > 0.0))
            throw std::runtime_error(fmt::format(
                "render: non positive-definite 2D covariance for gaussian {}", s.gaussian_index));
        Mat2 inv;
        inv << s.cov2d(1, 1), -s.cov2d(0, 1), -s.cov2d(1, 0), s.cov2d(0, 0);
        prep.conic[i] = inv / det;

        if (with_flow) {
            const DynamicGaussian& g = scene.gaussians[s.gaussian_index];
            const Vec3 v = world_to_camera(cam, eval_center(g, scene.model, t));
            const Mat3 jac = projection_jacobian(cam, v).value();
            const auto [fwd3, bwd3] = scene_flow_delta(g, scene.model, t, dt);
            prep.flow_fwd[i] = (jac * fwd3).head<2>();
            prep.flow_bwd[i] = (jac * bwd3).head<2>();
        }
    });

    prep.tile_cols = (cam.width + kTileSize - 1) / kTileSize;
    prep.tile_rows = (cam.height + kTileSize - 1) / kTileSize;
    prep.tile_splats.assign(static_cast<std::size_t>(prep.tile_cols) * prep.tile_rows, {});
    for (std::size_t i = 0; i < n; ++i) {
        const Splat2D& s = prep.splats[i];
        const double mid = 0.5 * (s.cov2d(0, 0) + s.cov2d(1, 1));
        const double disc = std::sqrt(std::max(mid * mid - s.cov2d.determinant(), 0.0));
        const double radius = kBinSigma * std::sqrt(mid + disc) + 1.0;
        const int x0 = std::max(0, static_cast<int>(std::floor(s.mean_px[0] - radius)));
        const int x1 = std::min(cam.width - 1, static_cast<int>(std::ceil(s.mean_px[0] + radius)));
        const int y0 = std::max(0, static_cast<int>(std::floor(s.mean_px[1] - radius)));
        const int y1 = std::min(cam.height - 1, static_cast<int>(std::ceil(s.mean_px[1] + radius)));
        if (x0 > x1 || y0 > y1)
            continue;
        for (int ty = y0 / kTileSize; ty <= y1 / kTileSize; ++ty)
            for (int tx = x0 / kTileSize; tx <= x1 / kTileSize; ++tx)
                prep.tile_splats[static_cast<std::size_t>(ty) * prep.tile_cols + tx].push_back(
                    static_cast<int>(i));
    }
    return prep;
}

} // namespace detail

std::vector<Splat2D> sort_splats(std::vector<Splat2D> splats) {
    std::sort(splats.begin(), splats.end(), [](const Splat2D& a, const Splat2D& b) {
        if (a.depth != b.depth)
            return a.depth < b.depth;
        return a.gaussian_index < b.gaussian_index;
    });
    return splats;
}

namespace {

using namespace detail;

void render_tiles(const PreparedSplats& prep, const Camera& cam, RenderOutput* out,
                  FlowOutput* flow) {
    const std::size_t n_tiles = prep.tile_splats.size();
    parallel_for(n_tiles, [&](std::size_t tile) {
        const auto& list = prep.tile_splats[tile];
        const int tx = static_cast<int>(tile) % prep.tile_cols;
        const int ty = static_cast<int>(tile) / prep.tile_cols;
        const int x_end = std::min((tx + 1) * kTileSize, cam.width);
        const int y_end = std::min((ty + 1) * kTileSize, cam.height);
        for (int y = ty * kTileSize; y < y_end; ++y) {
            for (int x = tx * kTileSize; x < x_end; ++x) {
                Vec3 color = Vec3::Zero();
                Vec2 f_fwd = Vec2::Zero(), f_bwd = Vec2::Zero();
                std::uint32_t count = 0;
                const double transmittance = blend_pixel(
                    prep, list, x + 0.5, y + 0.5, [&](const Contribution& c) {
                        const double w = c.alpha * c.transmittance;
                        color += w * prep.splats[c.splat].color;
                        if (flow) {
                            f_fwd += w * prep.flow_fwd[c.splat];
                            f_bwd += w * prep.flow_bwd[c.splat];
                        }
                        ++count;
                    });
                if (out) {
                    for (int ch = 0; ch < 3; ++ch)
                        out->color.at(y, x, ch) = color[ch];
                    out->alpha.at(y, x, 0) = 1.0 - transmittance;
                    out->contrib_count[static_cast<std::size_t>(y) * cam.width + x] = count;
                }
                if (flow) {
                    flow->fwd.u(y, x) = f_fwd[0];
                    flow->fwd.v(y, x) = f_fwd[1];
                    flow->bwd.u(y, x) = f_bwd[0];
                    flow->bwd.v(y, x) = f_bwd[1];
                }
            }
        }
    });
}

} // namespace

RenderBundle render_bundle(const Scene& scene, const Camera& cam, double t, double dt,
                           bool want_flow) {
    const auto prep = detail::prepare_splats(scene, cam, t, dt, want_flow);
    RenderBundle bundle;
    bundle.color.color = Image(cam.height, cam.width, 3);
    bundle.color.alpha = Image(cam.height, cam.width, 1);
    bundle.color.contrib_count.assign(static_cast<std::size_t>(cam.height) * cam.width, 0);
    if (want_flow) {
        bundle.flow.fwd = FlowField(cam.height, cam.width);
        bundle.flow.bwd = FlowField(cam.height, cam.width);
    }
    render_tiles(prep, cam, &bundle.color, want_flow ? &bundle.flow : nullptr);
    return bundle;
}

RenderOutput render_color(const Scene& scene, const Camera& cam, double t) {
    return render_bundle(scene, cam, t, 0.0, false).color;
}

FlowOutput render_flow(const Scene& scene, const Camera& cam, double t, double dt) {
    return render_bundle(scene, cam, t, dt, true).flow;
}

RenderOutput render_chunked(const ChunkedScene& cs, const Camera& cam, double t) {
    const int idx = cs.find_chunk(t);
    if (idx < 0)
        throw std::out_of_range(fmt::format("render_chunked: t={} outside chunk coverage", t));
    return render_color(cs.chunks[idx].scene, cam, cs.to_local_time(idx, t));
}

Image composite_over(const RenderOutput& out, const Vec3& background) {
    Image img = out.color;
    if (background.squaredNorm() == 0)
        return img;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const double residual = 1.0 - out.alpha.at(y, x, 0);
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) += background[c] * residual;
        }
    return img;
}

} // namespace cdgs
