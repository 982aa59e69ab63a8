// Copyright Contributors to the PolySplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

#include "polysplat/image.hpp"

namespace polysplat {

constexpr int kPhotometricGridSize = 32;

/// Per-camera spatially varying black-level and exposure grids.
/// E must stay positive elementwise (the trainer optimizes log E).
struct PhotometricGrid {
    int camera_id = 0;
    Eigen::MatrixXd B;  // 32x32 black level, linear radiometric units
    Eigen::MatrixXd E;  // 32x32 exposure gain, unitless, > 0

    static PhotometricGrid identity(int camera_id, int n = kPhotometricGridSize);
};

struct InvalidSizeError : std::runtime_error {
    explicit InvalidSizeError(const std::string& what) : std::runtime_error(what) {}
};

/// Upsamples an n x n grid to out_h x out_w by embedding its DFT spectrum
/// centered in the larger spectrum (Nyquist split evenly) and inverting.
/// Mean-preserving; output is real by construction.
Eigen::MatrixXd fft_upsample(const Eigen::MatrixXd& grid, int out_w, int out_h);

/// Transpose of the linear forward operator.
Eigen::MatrixXd fft_upsample_adjoint(const Eigen::MatrixXd& upstream, int grid_size);

/// C_adjusted = (C + B_up) . E_up per RGB channel; alpha untouched.
ImageBuffer apply(const ImageBuffer& img, const PhotometricGrid& grid);

/// Same, with precomputed full-resolution maps (row-major y,x indexing).
ImageBuffer apply_with_maps(const ImageBuffer& img, const Eigen::MatrixXd& b_up,
                            const Eigen::MatrixXd& e_up);

/// Backward of apply_with_maps. Fills dL/dC (RGBA, alpha passed through) and
/// the gradients of the full-resolution maps.
void apply_backward(const ImageBuffer& img, const Eigen::MatrixXd& b_up,
                    const Eigen::MatrixXd& e_up, const std::vector<float>& upstream,
                    std::vector<float>& d_img, Eigen::MatrixXd& d_b_up, Eigen::MatrixXd& d_e_up);

/// L_exposure = (global mean of (E - 1) over all cells and cameras)^2.
double exposure_loss(const std::vector<PhotometricGrid>& grids);

/// L_black = -(global mean of B over all cells and cameras).
double black_loss(const std::vector<PhotometricGrid>& grids);

/// d exposure_loss / dE for every grid (same global mean convention).
std::vector<Eigen::MatrixXd> exposure_loss_grad(const std::vector<PhotometricGrid>& grids);

/// d black_loss / dB (constant -1/N).
std::vector<Eigen::MatrixXd> black_loss_grad(const std::vector<PhotometricGrid>& grids);

}  // namespace polysplat
