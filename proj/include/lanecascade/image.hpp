#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "lanecascade/errors.hpp"

namespace lanecascade {

// 8-bit RGB image, row-major, origin at the top-left.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;  // height * width * 3

    Image() = default;
    Image(int w, int h, std::uint8_t fill = 0) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

    bool empty() const { return data.empty(); }
    bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }

    std::uint8_t& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    std::uint8_t at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

    std::array<std::uint8_t, 3> pixel(int x, int y) const { return {at(x, y, 0), at(x, y, 1), at(x, y, 2)}; }

    void set_pixel(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
        at(x, y, 0) = r;
        at(x, y, 1) = g;
        at(x, y, 2) = b;
    }

    bool operator==(const Image& other) const = default;
};

inline std::uint8_t clamp_u8(int v) { return static_cast<std::uint8_t>(std::clamp(v, 0, 255)); }

// Bilinear resize; identity when the size already matches.
inline Image resize_bilinear(const Image& src, int width, int height) {
    if (width <= 0 || height <= 0) throw InvalidArgumentError("resize: target size must be positive");
    if (src.empty()) throw InvalidArgumentError("resize: empty source image");
    if (src.width == width && src.height == height) return src;
    Image dst(width, height);
    const double sx = static_cast<double>(src.width) / width;
    const double sy = static_cast<double>(src.height) / height;
    for (int y = 0; y < height; ++y) {
        const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
        const int y0 = std::min(static_cast<int>(fy), src.height - 1);
        const int y1 = std::min(y0 + 1, src.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < width; ++x) {
            const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
            const int x0 = std::min(static_cast<int>(fx), src.width - 1);
            const int x1 = std::min(x0 + 1, src.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                const double top = src.at(x0, y0, c) * (1.0 - wx) + src.at(x1, y0, c) * wx;
                const double bot = src.at(x0, y1, c) * (1.0 - wx) + src.at(x1, y1, c) * wx;
                dst.at(x, y, c) = clamp_u8(static_cast<int>(std::lround(top * (1.0 - wy) + bot * wy)));
            }
        }
    }
    return dst;
}

}  // namespace lanecascade
