// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "neusg/camera.hpp"

namespace neusg {

/// Linear RGB image, row-major, three interleaved channels.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, double fill = 0.0)
        : width(w), height(h), data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, fill) {}

    [[nodiscard]] int pixels() const { return width * height; }
    double& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    [[nodiscard]] double at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    [[nodiscard]] Vec3 pixel(int x, int y) const { return {at(x, y, 0), at(x, y, 1), at(x, y, 2)}; }
    void set(int x, int y, const Vec3& v) {
        for (int c = 0; c < 3; ++c) at(x, y, c) = v[c];
    }
};

}  // namespace neusg
