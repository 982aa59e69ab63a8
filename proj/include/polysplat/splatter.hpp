// Copyright Contributors to the PolySplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "polysplat/camera.hpp"
#include "polysplat/gaussian4d.hpp"
#include "polysplat/image.hpp"

namespace polysplat::splatter {

constexpr int kTileSize = 16;
constexpr double kAntialiasSigma = 0.3;   // pixel-space low-pass dilation
constexpr double kFootprintCutoff = 4.5;  // -0.5 * 3^2
constexpr double kAlphaMin = 1.0 / 255.0;
constexpr double kAlphaMax = 0.9999;
constexpr double kTransmittanceStop = 1e-4;

/// Screen-space intermediate of one projected Gaussian.
struct Splat2D {
    Eigen::Vector2d mean;   // pixel coordinates
    Eigen::Matrix2d cov;    // 2x2 covariance after antialias dilation
    double depth = 0.0;
    double opacity = 0.0;   // after antialias compensation
    Eigen::Vector3d color;  // linear RGB
    int index = -1;         // source slice index
};

/// Real SH basis up to degree 3, raw dot product (no +0.5 offset; unbounded
/// sRGB colors may be negative). dir must be unit length.
Eigen::Vector3d evaluate_sh(const std::vector<double>& sh, const Eigen::Vector3d& dir);

struct ShGrad {
    std::vector<double> d_sh;
    Eigen::Vector3d d_dir = Eigen::Vector3d::Zero();
};
ShGrad evaluate_sh_grad(const std::vector<double>& sh, const Eigen::Vector3d& dir,
                        const Eigen::Vector3d& upstream_rgb);

/// Front-to-back alpha compositing in linear color; double-precision RGBA
/// output (row-major, w*h*4). With srgb_colors (the default) SH outputs pass
/// through the inverse sRGB map before compositing; without it they are
/// treated as linear already (ablation mode). Deterministic regardless of
/// thread count.
std::vector<double> rasterize_raw(const std::vector<GaussianSlice>& slices,
                                  const CameraFrame& cam, const Eigen::Vector3d& background,
                                  const std::string& debug_splat_csv = {},
                                  bool srgb_colors = true);

/// Same, packaged as a LinearHDR ImageBuffer.
ImageBuffer rasterize(const std::vector<GaussianSlice>& slices, const CameraFrame& cam,
                      const Eigen::Vector3d& background,
                      const std::string& debug_splat_csv = {}, bool srgb_colors = true);

struct RasterGrads {
    std::vector<SliceGrad> slices;            // mean/rotation/scale/opacity per input slice
    std::vector<std::vector<double>> sh;      // per input slice, matches its sh size
};

/// Analytic backward of rasterize_raw; upstream is dLoss/dImage (RGBA).
RasterGrads rasterize_backward(const std::vector<GaussianSlice>& slices, const CameraFrame& cam,
                               const Eigen::Vector3d& background,
                               const std::vector<double>& upstream, bool srgb_colors = true);

}  // namespace polysplat::splatter
