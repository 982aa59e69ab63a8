// Copyright Contributors to the PolySplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "polysplat/image.hpp"

namespace polysplat::stabilizer {

constexpr int kPyramidLevels = 5;
constexpr double kDefaultValidityTau = 0.1;

/// Per-pixel displacement mapping a current-frame pixel to its location in
/// the previous frame (prev_pos = pos + flow).
struct FlowField {
    int width = 0, height = 0;
    std::vector<float> dx, dy;  // width*height each

    FlowField() = default;
    FlowField(int w, int h)
        : width(w), height(h), dx(static_cast<size_t>(w) * h, 0.0f),
          dy(static_cast<size_t>(w) * h, 0.0f) {}
};

struct ValidityMask {
    int width = 0, height = 0;
    std::vector<uint8_t> valid;  // 0 or 1

    ValidityMask() = default;
    ValidityMask(int w, int h, uint8_t fill = 0)
        : width(w), height(h), valid(static_cast<size_t>(w) * h, fill) {}
};

/// Coarse-to-fine pyramidal gradient-based dense flow on luminance of the
/// display-mapped inputs (5 levels, 3 warp iterations per level, 5x5 window).
FlowField compute_flow(const ImageBuffer& curr_lq, const ImageBuffer& prev_lq);

struct WarpResult {
    ImageBuffer image;
    std::vector<uint8_t> in_bounds;  // per pixel
};

/// Bilinear backward warping; out-of-bounds samples produce zeros and are
/// flagged for the validity mask.
WarpResult warp(const ImageBuffer& prev, const FlowField& flow);

/// Valid where the display-mapped mean absolute RGB difference is below tau
/// and the warp sample was in bounds.
ValidityMask validity_mask(const ImageBuffer& curr_lq, const WarpResult& warped_prev_lq,
                           double tau = kDefaultValidityTau);

/// 5-level Laplacian pyramid, binomial [1,4,6,4,1]/16 kernel, periodic
/// boundaries, all four channels. Bands are kept in double precision so that
/// collapse(build(img)) reproduces img bitwise.
struct LaplacianPyramid {
    int base_width = 0, base_height = 0;
    ColorSpace space = ColorSpace::LinearHDR;
    struct Level {
        int width = 0, height = 0;
        std::vector<double> data;  // RGBA interleaved
    };
    std::vector<Level> levels;  // fine-to-coarse bands; last entry is the lowest level
};

/// Requires width and height divisible by 2^(levels-1).
LaplacianPyramid build_pyramid(const ImageBuffer& img, int levels = kPyramidLevels);
ImageBuffer collapse(const LaplacianPyramid& pyr);

/// Replaces the lowest pyramid level of `enhanced` with that of
/// `reference_lq` (RGB and alpha alike). Sizes not divisible by 16 are
/// reflect-padded internally.
ImageBuffer low_freq_swap(const ImageBuffer& enhanced, const ImageBuffer& reference_lq);

/// Detail-enhancement backend interface. All images are RGBA; warped_prev and
/// mask carry zeros on the first frame of a sequence.
class Enhancer {
  public:
    virtual ~Enhancer() = default;
    virtual ImageBuffer enhance(const ImageBuffer& curr_rgba, const ImageBuffer& warped_prev,
                                const ValidityMask& mask) = 0;
};

/// Passes the input through unchanged.
std::unique_ptr<Enhancer> make_identity_enhancer();
/// Unsharp masking, radius 2, amount 0.5 (test backend).
std::unique_ptr<Enhancer> make_unsharp_enhancer();
/// Random global RGB gain per frame in [0.9, 1.1] (test backend).
std::unique_ptr<Enhancer> make_flicker_enhancer(uint64_t seed);
/// Subprocess protocol: <cmd> --rgb A --alpha B --warped C --mask D
/// --out-rgb E --out-alpha F with PFM file arguments; nonzero exit aborts.
std::unique_ptr<Enhancer> make_subprocess_enhancer(const std::string& command,
                                                   const std::string& work_dir);

struct BackendError : std::runtime_error {
    BackendError(const std::string& what, size_t frame)
        : std::runtime_error(what + " (frame " + std::to_string(frame) + ")"), frame(frame) {}
    size_t frame;
};

/// Full temporal-stabilization chain around a backend: optical flow against
/// the previous LQ frame, warped previous output + validity mask conditioning,
/// then a low-frequency swap against the current LQ frame.
std::vector<ImageBuffer> stabilize_sequence(const std::vector<ImageBuffer>& lq_frames,
                                            Enhancer& backend);

}  // namespace polysplat::stabilizer
