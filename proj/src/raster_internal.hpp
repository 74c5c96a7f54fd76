#pragma once

// Shared machinery between the forward rasterizer and the backward pass:
// projection to sorted splats, conic precomputation, and 16x16 tile binning.
// Both passes must walk splats in exactly the order produced here.

#include "cdgs/projection.hpp"
#include "cdgs/rasterizer.hpp"
#include "cdgs/scene.hpp"

#include <vector>

namespace cdgs::detail {

inline constexpr int kTileSize = 16;
inline constexpr double kAlphaClamp = 0.99;
inline constexpr double kAlphaSkip = 1.0 / 255.0;
inline constexpr double kTransmittanceStop = 1e-4;
// Binning radius in sigmas. Slightly beyond the largest radius at which a
// contribution can clear the alpha-skip threshold (0.99 * exp(-r^2/2) >=
// 1/255 implies r <= 3.33), so binning never masks a visible contribution.
inline constexpr double kBinSigma = 3.4;

struct PreparedSplats {
    std::vector<Splat2D> splats;  // culled removed, depth-sorted
    std::vector<Mat2> conic;      // cov2d inverse, parallel to splats
    std::vector<Vec2> flow_fwd;   // per-splat 2D flow, filled when with_flow
    std::vector<Vec2> flow_bwd;
    bool with_flow = false;

    int tile_cols = 0;
    int tile_rows = 0;
    std::vector<std::vector<int>> tile_splats; // indices into splats, depth order

    std::size_t size() const { return splats.size(); }
};

/// Projects, sorts, computes conics and per-splat flow, and bins into tiles.
/// Deterministic for a given scene/camera/time regardless of thread count.
PreparedSplats prepare_splats(const Scene& scene, const Camera& cam, double t, double dt,
                              bool with_flow);

/// One accepted blending contribution at a pixel.
struct Contribution {
    int splat;            // index into PreparedSplats::splats
    int pos;              // position within the tile list
    double alpha;         // post-clamp alpha
    double gauss;         // exp(-0.5 d^T conic d)
    double transmittance; // before this contribution
};

/// Replays the front-to-back blend for one pixel, invoking fn(contribution)
/// for every accepted term; returns the final transmittance. This is the
/// single definition of the per-pixel forward used by render and backward.
template <typename Fn>
double blend_pixel(const PreparedSplats& prep, const std::vector<int>& tile_list, double px,
                   double py, Fn&& fn) {
    double transmittance = 1.0;
    for (std::size_t k = 0; k < tile_list.size(); ++k) {
        const int idx = tile_list[k];
        const Splat2D& s = prep.splats[idx];
        const Mat2& q = prep.conic[idx];
        const double dx = px - s.mean_px[0];
        const double dy = py - s.mean_px[1];
        const double power =
            -0.5 * (q(0, 0) * dx * dx + (q(0, 1) + q(1, 0)) * dx * dy + q(1, 1) * dy * dy);
        if (power < -15.0)
            continue; // alpha would underflow the skip threshold regardless of opacity
        const double gauss = std::exp(power);
        const double alpha = std::min(kAlphaClamp, s.opacity * gauss);
        if (alpha < kAlphaSkip)
            continue;
        fn(Contribution{idx, static_cast<int>(k), alpha, gauss, transmittance});
        transmittance *= 1.0 - alpha;
        if (transmittance < kTransmittanceStop)
            break;
    }
    return transmittance;
}

} // namespace cdgs::detail
