// Copyright Contributors to the PolySplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "polysplat/gaussian4d.hpp"
#include "polysplat/photometric.hpp"

namespace polysplat {

/// On-disk model container ("P4GS"): little-endian header (magic, version u32,
/// gaussian count u64, degrees 4xu8, SH degree u8, segment time range 2xf32)
/// followed by fixed-size f32 per-Gaussian records in PolyGaussian field
/// order, then per-camera photometric grid blocks (ids ascending).
struct ModelContainer {
    PolyDegrees degrees;
    uint8_t sh_degree = 0;
    float t_min = 0.0f, t_max = 0.0f;
    std::vector<PolyGaussian> gaussians;
    std::vector<PhotometricGrid> grids;  // camera ids ascending
};

constexpr uint32_t kModelVersion = 1;

void save_model(const std::string& path, const ModelContainer& model);
ModelContainer load_model(const std::string& path);

}  // namespace polysplat
