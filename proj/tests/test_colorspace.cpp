// Copyright Contributors to the PolySplat Project
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include "doctest.h"
#include "polysplat/colorspace.hpp"
#include "test_util.hpp"

using namespace polysplat;
namespace cs = polysplat::colorspace;

TEST_CASE("srgb_inverse fixed points and reference values") {
    CHECK(cs::srgb_inverse(0.0) == 0.0);
    CHECK(cs::srgb_inverse(1.0) == doctest::Approx(1.0).epsilon(1e-12));
    // extended power branch evaluated directly
    const double expect2 = std::pow((2.0 + 0.055) / 1.055, 2.4);
    CHECK(cs::srgb_inverse(2.0) == doctest::Approx(expect2).epsilon(1e-12));
    CHECK(cs::srgb_inverse(2.0) == doctest::Approx(4.95385).epsilon(1e-5));
}

TEST_CASE("srgb_forward fixed points and branch continuity at the knee") {
    CHECK(cs::srgb_forward(0.0) == 0.0);
    CHECK(cs::srgb_forward(1.0) == doctest::Approx(1.0).epsilon(1e-12));
    const double knee = 0.0031308;
    const double lin = knee * 12.92;
    const double pow_branch = 1.055 * std::pow(knee, 1.0 / 2.4) - 0.055;
    CHECK(std::fabs(lin - pow_branch) < 1e-7);  // canonical constants nearly meet
    // both transfer functions inherit that small canonical gap at their knees
    CHECK(std::fabs(cs::srgb_forward(knee + 1e-12) - cs::srgb_forward(knee - 1e-12)) < 1e-7);
    CHECK(std::fabs(cs::srgb_inverse(0.04045 + 1e-12) - cs::srgb_inverse(0.04045 - 1e-12)) <
          1e-7);
}

TEST_CASE("round trip identity over [-1, 100]") {
    for (double x : {-0.2, 0.01, 0.5, 3.0, 10.0})
        CHECK(cs::srgb_forward(cs::srgb_inverse(x)) == doctest::Approx(x).epsilon(1e-9));
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> dist(-1.0, 100.0);
    for (int i = 0; i < 2000; ++i) {
        const double x = dist(rng);
        const double rt = cs::srgb_forward(cs::srgb_inverse(x));
        CHECK(std::fabs(rt - x) <= 1e-9 * std::max(1.0, std::fabs(x)));
    }
    // dense sweep across the knee region
    for (double x = 0.0404; x < 0.0406; x += 1e-6)
        CHECK(std::fabs(cs::srgb_forward(cs::srgb_inverse(x)) - x) <= 1e-9);
}

TEST_CASE("srgb_inverse is odd, strictly increasing, and unclamped") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> dist(0.0, 50.0);
    for (int i = 0; i < 500; ++i) {
        const double x = dist(rng);
        CHECK(cs::srgb_inverse(-x) == doctest::Approx(-cs::srgb_inverse(x)).epsilon(1e-12));
    }
    double prev = cs::srgb_inverse(-1.0);
    for (double x = -1.0 + 1e-3; x <= 100.0; x += 0.05) {
        const double y = cs::srgb_inverse(x);
        CHECK(y > prev);
        prev = y;
    }
    CHECK(cs::srgb_inverse(100.0) > 1.0);  // no upper clamp
}

TEST_CASE("transfer derivatives match finite differences") {
    const double h = 1e-6;
    for (double x : {-2.0, -0.01, 0.002, 0.2, 1.5, 30.0}) {
        const double fd_inv = (cs::srgb_inverse(x + h) - cs::srgb_inverse(x - h)) / (2 * h);
        CHECK(cs::srgb_inverse_deriv(x) == doctest::Approx(fd_inv).epsilon(1e-6));
        const double fd_fwd = (cs::srgb_forward(x + h) - cs::srgb_forward(x - h)) / (2 * h);
        CHECK(cs::srgb_forward_deriv(x) == doctest::Approx(fd_fwd).epsilon(1e-5));
    }
}

TEST_CASE("convert_image identity, zeros, and round trip") {
    const ImageBuffer img = testutil::random_image(9, 7, ColorSpace::LinearHDR, 3);

    const ImageBuffer same = cs::convert_image(img, ColorSpace::LinearHDR);
    CHECK(same.data == img.data);
    CHECK(same.space == img.space);

    ImageBuffer zeros(5, 4, ColorSpace::LinearHDR);
    const ImageBuffer zc = cs::convert_image(zeros, ColorSpace::UnboundedSRGB);
    for (float v : zc.data) CHECK(v == 0.0f);
    CHECK(zc.space == ColorSpace::UnboundedSRGB);

    const ImageBuffer fwd = cs::convert_image(img, ColorSpace::UnboundedSRGB);
    const ImageBuffer back = cs::convert_image(fwd, ColorSpace::LinearHDR);
    for (size_t i = 0; i < img.data.size(); ++i)
        CHECK(back.data[i] == doctest::Approx(img.data[i]).epsilon(1e-6));
    // alpha untouched by the forward conversion
    for (size_t i = 3; i < img.data.size(); i += 4) CHECK(fwd.data[i] == img.data[i]);
}
