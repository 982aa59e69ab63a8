// Copyright Contributors to the PolySplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "polysplat/image.hpp"

namespace polysplat::colorspace {

// Standard sRGB transfer curve, extended past 1 without clamping and
// point-symmetrically below 0 so the map stays bijective and monotone.

/// Unbounded sRGB -> linear (EOTF).
double srgb_inverse(double x);

/// Linear -> unbounded sRGB (OETF). Exact inverse of srgb_inverse on all reals.
double srgb_forward(double y);

/// d srgb_inverse / dx.
double srgb_inverse_deriv(double x);

/// d srgb_forward / dy.
double srgb_forward_deriv(double y);

/// Per-channel RGB conversion; alpha untouched. Same-target conversion is the identity.
ImageBuffer convert_image(const ImageBuffer& img, ColorSpace target);

}  // namespace polysplat::colorspace
