// Copyright Contributors to the PolySplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <unistd.h>

#include <filesystem>
#include <random>
#include <string>

#include "polysplat/image.hpp"

namespace testutil {

inline polysplat::ImageBuffer random_image(int w, int h, polysplat::ColorSpace space,
                                           uint64_t seed, float lo = 0.0f, float hi = 1.0f) {
    polysplat::ImageBuffer img(w, h, space);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> dist(lo, hi);
    for (size_t i = 0; i < img.data.size(); ++i)
        img.data[i] = (i % 4 == 3) ? 1.0f : dist(rng);
    return img;
}

inline polysplat::ImageBuffer constant_image(int w, int h, polysplat::ColorSpace space,
                                             float value, float alpha = 1.0f) {
    polysplat::ImageBuffer img(w, h, space);
    for (size_t i = 0; i < img.data.size(); i += 4) {
        img.data[i] = img.data[i + 1] = img.data[i + 2] = value;
        img.data[i + 3] = alpha;
    }
    return img;
}

/// Temporary directory removed on destruction.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("polysplat_test_" + tag + "_" + std::to_string(::getpid()));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string str() const { return path.string(); }
};

}  // namespace testutil
