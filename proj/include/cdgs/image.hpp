#pragma once

#include <cstdint>
#include <vector>

namespace cdgs {

/// Row-major H x W x C image of doubles, channels interleaved.
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int h, int w, int c) : height(h), width(w), channels(c),
        data(static_cast<std::size_t>(h) * w * c, 0.0) {}

    double& at(int y, int x, int c) {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    double at(int y, int x, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    std::size_t size() const { return data.size(); }
    bool same_shape(const Image& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
};

/// Dense 2D flow field (u, v in pixels) with a per-pixel validity mask.
struct FlowField {
    int height = 0;
    int width = 0;
    std::vector<double> uv;         // H x W x 2
    std::vector<std::uint8_t> valid; // H x W, 1 = usable ground truth

    FlowField() = default;
    FlowField(int h, int w) : height(h), width(w),
        uv(static_cast<std::size_t>(h) * w * 2, 0.0),
        valid(static_cast<std::size_t>(h) * w, 1) {}

    double& u(int y, int x) { return uv[(static_cast<std::size_t>(y) * width + x) * 2]; }
    double& v(int y, int x) { return uv[(static_cast<std::size_t>(y) * width + x) * 2 + 1]; }
    double u(int y, int x) const { return uv[(static_cast<std::size_t>(y) * width + x) * 2]; }
    double v(int y, int x) const { return uv[(static_cast<std::size_t>(y) * width + x) * 2 + 1]; }
    bool is_valid(int y, int x) const { return valid[static_cast<std::size_t>(y) * width + x] != 0; }
};

} // namespace cdgs
