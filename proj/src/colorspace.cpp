// Copyright Contributors to the PolySplat Project
// SPDX-License-Identifier: Apache-2.0

#include "polysplat/colorspace.hpp"

#include <cmath>

namespace polysplat::colorspace {

namespace {
constexpr double kLinearKnee = 0.0031308;
// Derived (not the rounded 0.04045) so the two branch switches are consistent
// and srgb_forward(srgb_inverse(x)) is exact on all reals.
constexpr double kSrgbKnee = 12.92 * kLinearKnee;
}  // namespace

double srgb_inverse(double x) {
    if (x < 0.0) return -srgb_inverse(-x);
    if (x <= kSrgbKnee) return x / 12.92;
    return std::pow((x + 0.055) / 1.055, 2.4);
}

double srgb_forward(double y) {
    if (y < 0.0) return -srgb_forward(-y);
    if (y <= kLinearKnee) return y * 12.92;
    return 1.055 * std::pow(y, 1.0 / 2.4) - 0.055;
}

double srgb_inverse_deriv(double x) {
    double ax = std::fabs(x);
    if (ax <= kSrgbKnee) return 1.0 / 12.92;
    return 2.4 / 1.055 * std::pow((ax + 0.055) / 1.055, 1.4);
}

double srgb_forward_deriv(double y) {
    double ay = std::fabs(y);
    if (ay <= kLinearKnee) return 12.92;
    return 1.055 / 2.4 * std::pow(ay, 1.0 / 2.4 - 1.0);
}

ImageBuffer convert_image(const ImageBuffer& img, ColorSpace target) {
    if (img.space == target) return img;
    ImageBuffer out = img;
    out.space = target;
    double (*f)(double) =
        (target == ColorSpace::LinearHDR) ? &srgb_inverse : &srgb_forward;
    for (size_t i = 0; i < out.data.size(); i += 4) {
        out.data[i + 0] = static_cast<float>(f(out.data[i + 0]));
        out.data[i + 1] = static_cast<float>(f(out.data[i + 1]));
        out.data[i + 2] = static_cast<float>(f(out.data[i + 2]));
    }
    return out;
}

}  // namespace polysplat::colorspace
