// Copyright Contributors to the PolySplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "polysplat/image.hpp"

namespace polysplat::metrics {

constexpr double kPsnrCap = 99.0;  // reported for identical inputs

/// Maps an image to bounded display space: unbounded sRGB clamped to [0,1]
/// (linear images are display-mapped first). RGB only, planar not required.
ImageBuffer to_display(const ImageBuffer& img);

/// 10*log10(peak^2 / MSE) over RGB in display space, capped at 99 dB.
double psnr(const ImageBuffer& a, const ImageBuffer& b, double peak = 1.0);

/// Single-scale SSIM: 11x11 Gaussian window sigma 1.5, K1=0.01, K2=0.03,
/// peak 1.0, mean over pixels and channels, computed in display space.
double ssim(const ImageBuffer& a, const ImageBuffer& b);

/// Differentiable SSIM core on raw RGB values (no display mapping); shared
/// with the trainer's reconstruction loss.
double ssim_raw(const ImageBuffer& a, const ImageBuffer& b);

/// d ssim_raw / da, same layout as a.data (alpha slots zero).
std::vector<float> ssim_raw_grad(const ImageBuffer& a, const ImageBuffer& b);

/// PSNR of temporal finite differences (a_t - a_{t-1} vs b_t - b_{t-1}),
/// averaged over t >= 1, in display space. Needs >= 2 frames.
double tpsnr(const std::vector<ImageBuffer>& seq_a, const std::vector<ImageBuffer>& seq_b,
             double peak = 1.0);

struct MetricReport {
    std::vector<double> psnr;   // per frame
    std::vector<double> ssim;   // per frame
    std::vector<double> tpsnr;  // per consecutive pair (size frames-1)
    double psnr_mean = 0.0;
    double ssim_mean = 0.0;
    double tpsnr_mean = 0.0;

    static MetricReport compute(const std::vector<ImageBuffer>& pred,
                                const std::vector<ImageBuffer>& gt);
    void save_csv(const std::string& path) const;
    void save_json(const std::string& path) const;
};

}  // namespace polysplat::metrics
