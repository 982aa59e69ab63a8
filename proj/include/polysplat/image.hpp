// Copyright Contributors to the PolySplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace polysplat {

/// Radiometric interpretation of pixel values.
enum class ColorSpace : uint8_t {
    LinearHDR,      ///< scene-linear radiometric values
    UnboundedSRGB,  ///< sRGB transfer curve extended past [0,1] without clamping
};

/// Row-major RGBA float image. Alpha is never tone-mapped.
struct ImageBuffer {
    int width = 0;
    int height = 0;
    ColorSpace space = ColorSpace::LinearHDR;
    std::vector<float> data;  // width*height*4, RGBA interleaved

    ImageBuffer() = default;
    ImageBuffer(int w, int h, ColorSpace cs)
        : width(w), height(h), space(cs), data(static_cast<size_t>(w) * h * 4, 0.0f) {
        if (w < 0 || h < 0) throw std::invalid_argument("ImageBuffer: negative size");
    }

    size_t pixel_count() const { return static_cast<size_t>(width) * height; }

    float* px(int x, int y) { return data.data() + (static_cast<size_t>(y) * width + x) * 4; }
    const float* px(int x, int y) const {
        return data.data() + (static_cast<size_t>(y) * width + x) * 4;
    }

    bool same_shape(const ImageBuffer& o) const { return width == o.width && height == o.height; }
};

}  // namespace polysplat
