// Copyright Contributors to the PolySplat Project
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>

#include "doctest.h"
#include "polysplat/stabilizer.hpp"
#include "test_util.hpp"

using namespace polysplat;
namespace st = polysplat::stabilizer;

namespace {

// Smooth random texture: sum of a few low-frequency sinusoids, sampled anywhere.
struct Texture {
    std::vector<std::array<double, 5>> waves;  // ax, ay, phase, amp, channel base

    explicit Texture(uint64_t seed) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (int i = 0; i < 30; ++i)
            waves.push_back({0.08 + 0.32 * u(rng), 0.08 + 0.32 * u(rng),
                             6.28 * u(rng), 0.04 + 0.05 * u(rng), u(rng)});
    }
    double sample(double x, double y, int c) const {
        double v = 0.45;
        for (size_t i = 0; i < waves.size(); ++i) {
            if (static_cast<int>(i) % 3 != c) continue;
            const auto& w = waves[i];
            v += w[3] * std::sin(w[0] * x + w[1] * y + w[2]);
        }
        return std::clamp(v, 0.0, 1.0);
    }
    ImageBuffer render(int w, int h, double dx = 0.0, double dy = 0.0) const {
        ImageBuffer img(w, h, ColorSpace::UnboundedSRGB);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                float* p = img.px(x, y);
                for (int c = 0; c < 3; ++c)
                    p[c] = static_cast<float>(sample(x + dx, y + dy, c));
                p[3] = 1.0f;
            }
        return img;
    }
};

struct CountingEnhancer : st::Enhancer {
    int calls = 0;
    bool first_conditions_zero = false;

    ImageBuffer enhance(const ImageBuffer& curr, const ImageBuffer& warped,
                        const st::ValidityMask& mask) override {
        if (calls == 0) {
            first_conditions_zero = true;
            for (float v : warped.data)
                if (v != 0.0f) first_conditions_zero = false;
            for (uint8_t v : mask.valid)
                if (v != 0) first_conditions_zero = false;
        }
        ++calls;
        return curr;
    }
};

struct ThrowingEnhancer : st::Enhancer {
    int calls = 0;
    ImageBuffer enhance(const ImageBuffer& curr, const ImageBuffer&,
                        const st::ValidityMask&) override {
        if (++calls == 3) throw std::runtime_error("backend exploded");
        return curr;
    }
};

}  // namespace

TEST_CASE("compute_flow: identical frames give near-zero flow") {
    const ImageBuffer img = Texture(300).render(96, 64);
    const st::FlowField flow = st::compute_flow(img, img);
    std::vector<double> mags;
    for (size_t i = 0; i < flow.dx.size(); ++i)
        mags.push_back(std::hypot(flow.dx[i], flow.dy[i]));
    std::sort(mags.begin(), mags.end());
    CHECK(mags[mags.size() * 9 / 10] < 0.05);
}

TEST_CASE("compute_flow: recovers a global one-pixel shift") {
    const Texture tex(301);
    const ImageBuffer prev = tex.render(96, 64);
    const ImageBuffer curr = tex.render(96, 64, 1.0, 0.0);  // curr(x) = prev(x + 1)
    const st::FlowField flow = st::compute_flow(curr, prev);
    std::vector<float> dxs, dys;
    for (int y = 8; y < 56; ++y)
        for (int x = 8; x < 88; ++x) {
            dxs.push_back(flow.dx[y * 96 + x]);
            dys.push_back(flow.dy[y * 96 + x]);
        }
    std::nth_element(dxs.begin(), dxs.begin() + dxs.size() / 2, dxs.end());
    std::nth_element(dys.begin(), dys.begin() + dys.size() / 2, dys.end());
    CHECK(std::fabs(dxs[dxs.size() / 2] - 1.0) < 0.1);
    CHECK(std::fabs(dys[dys.size() / 2]) < 0.1);
}

TEST_CASE("compute_flow: small rotation matches the analytic field") {
    const int w = 96, h = 96;
    const double theta = 2.0 * M_PI / 180.0, cx = w / 2.0, cy = h / 2.0;
    const Texture tex(302);
    const ImageBuffer prev = tex.render(w, h);
    ImageBuffer curr(w, h, ColorSpace::UnboundedSRGB);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double rx = std::cos(theta) * (x - cx) - std::sin(theta) * (y - cy) + cx;
            const double ry = std::sin(theta) * (x - cx) + std::cos(theta) * (y - cy) + cy;
            float* p = curr.px(x, y);
            for (int c = 0; c < 3; ++c) p[c] = static_cast<float>(tex.sample(rx, ry, c));
            p[3] = 1.0f;
        }
    const st::FlowField flow = st::compute_flow(curr, prev);
    std::vector<double> epe;
    for (int y = 16; y < h - 16; ++y)
        for (int x = 16; x < w - 16; ++x) {
            const double gx = std::cos(theta) * (x - cx) - std::sin(theta) * (y - cy) + cx - x;
            const double gy = std::sin(theta) * (x - cx) + std::cos(theta) * (y - cy) + cy - y;
            epe.push_back(std::hypot(flow.dx[y * w + x] - gx, flow.dy[y * w + x] - gy));
        }
    std::nth_element(epe.begin(), epe.begin() + epe.size() / 2, epe.end());
    CHECK(epe[epe.size() / 2] < 0.5);
}

TEST_CASE("warp: zero flow, integer shift, half-pixel average") {
    const ImageBuffer img = testutil::random_image(20, 14, ColorSpace::UnboundedSRGB, 303);

    const st::WarpResult ident = st::warp(img, st::FlowField(20, 14));
    CHECK(ident.image.data == img.data);
    for (uint8_t f : ident.in_bounds) CHECK(f == 1);

    st::FlowField shift(20, 14);
    std::fill(shift.dx.begin(), shift.dx.end(), 2.0f);
    const st::WarpResult sh = st::warp(img, shift);
    for (int y = 0; y < 14; ++y)
        for (int x = 0; x < 20; ++x)
            for (int c = 0; c < 4; ++c) {
                if (x + 2 < 20) {
                    CHECK(sh.image.px(x, y)[c] == img.px(x + 2, y)[c]);
                    CHECK(sh.in_bounds[y * 20 + x] == 1);
                } else {
                    CHECK(sh.image.px(x, y)[c] == 0.0f);
                    CHECK(sh.in_bounds[y * 20 + x] == 0);
                }
            }

    ImageBuffer ramp(16, 4, ColorSpace::UnboundedSRGB);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 16; ++x)
            for (int c = 0; c < 4; ++c) ramp.px(x, y)[c] = static_cast<float>(0.05 * x);
    st::FlowField half(16, 4);
    std::fill(half.dx.begin(), half.dx.end(), 0.5f);
    const st::WarpResult hw = st::warp(ramp, half);
    for (int y = 0; y < 4; ++y)
        for (int x = 2; x < 14; ++x) {
            const double expect = 0.5 * (ramp.px(x, y)[0] + ramp.px(x + 1, y)[0]);
            CHECK(std::fabs(hw.image.px(x, y)[0] - expect) < 1e-6);
        }
}

TEST_CASE("validity_mask: trivial cases and tau monotonicity") {
    const ImageBuffer img = Texture(304).render(32, 32);
    const st::WarpResult ident = st::warp(img, st::FlowField(32, 32));
    const st::ValidityMask all = st::validity_mask(img, ident);
    for (uint8_t v : all.valid) CHECK(v == 1);

    st::FlowField oob(32, 32);
    std::fill(oob.dx.begin(), oob.dx.end(), 100.0f);
    const st::ValidityMask none = st::validity_mask(img, st::warp(img, oob));
    for (uint8_t v : none.valid) CHECK(v == 0);

    // a patch changed beyond tau is invalid; growing tau only adds pixels
    ImageBuffer changed = img;
    for (int y = 8; y < 16; ++y)
        for (int x = 8; x < 16; ++x)
            for (int c = 0; c < 3; ++c) changed.px(x, y)[c] += 0.5f;
    const st::ValidityMask tight = st::validity_mask(changed, ident, 0.1);
    const st::ValidityMask loose = st::validity_mask(changed, ident, 0.3);
    CHECK(tight.valid[10 * 32 + 10] == 0);
    CHECK(tight.valid[2 * 32 + 2] == 1);
    for (size_t i = 0; i < tight.valid.size(); ++i)
        if (tight.valid[i]) CHECK(loose.valid[i] == 1);
}

TEST_CASE("pyramid: exact round trip and constant image bands") {
    const ImageBuffer img = testutil::random_image(80, 48, ColorSpace::UnboundedSRGB, 305);
    const st::LaplacianPyramid pyr = st::build_pyramid(img);
    REQUIRE(pyr.levels.size() == 5);
    const ImageBuffer back = st::collapse(pyr);
    CHECK(back.data == img.data);  // double-precision bands collapse bitwise

    const ImageBuffer flat = testutil::constant_image(64, 64, ColorSpace::UnboundedSRGB, 0.6f);
    const st::LaplacianPyramid fp = st::build_pyramid(flat);
    for (size_t l = 0; l + 1 < fp.levels.size(); ++l)
        for (size_t i = 0; i < fp.levels[l].data.size(); i += 4)
            for (int c = 0; c < 3; ++c)
                CHECK(std::fabs(fp.levels[l].data[i + c]) < 1e-12);
    for (size_t i = 0; i < fp.levels.back().data.size(); i += 4)
        CHECK(fp.levels.back().data[i] == doctest::Approx(0.6).epsilon(1e-6));
}

TEST_CASE("pyramid: production frame size reduces to 120x68") {
    const ImageBuffer img(1920, 1088, ColorSpace::UnboundedSRGB);
    const st::LaplacianPyramid pyr = st::build_pyramid(img);
    CHECK(pyr.levels.back().width == 120);
    CHECK(pyr.levels.back().height == 68);
}

TEST_CASE("low_freq_swap: identity, constant offset, band isolation") {
    const ImageBuffer enh = Texture(306).render(64, 48);

    const ImageBuffer same = st::low_freq_swap(enh, enh);
    for (size_t i = 0; i < enh.data.size(); ++i)
        CHECK(std::fabs(same.data[i] - enh.data[i]) < 1e-6);

    // constant-offset reference: all high bands agree, so the output is the
    // enhanced image lifted by the offset and its lowest band matches the
    // reference's exactly
    ImageBuffer ref = enh;
    for (size_t i = 0; i < ref.data.size(); ++i)
        if (i % 4 != 3) ref.data[i] += 0.25f;
    const ImageBuffer swapped = st::low_freq_swap(enh, ref);
    for (size_t i = 0; i < enh.data.size(); ++i)
        if (i % 4 != 3) CHECK(std::fabs(swapped.data[i] - (enh.data[i] + 0.25f)) < 1e-6);
    const auto low_out = st::build_pyramid(swapped).levels.back();
    const auto low_ref = st::build_pyramid(ref).levels.back();
    for (size_t i = 0; i < low_out.data.size(); ++i)
        if (i % 4 != 3) CHECK(std::fabs(low_out.data[i] - low_ref.data[i]) < 1e-6);

    // Nyquist noise lives entirely in the finest band (the binomial kernel
    // annihilates it), so swapping the lowest band leaves it untouched
    ImageBuffer noisy = enh;
    for (int y = 0; y < 48; ++y)
        for (int x = 0; x < 64; ++x)
            for (int c = 0; c < 3; ++c)
                noisy.px(x, y)[c] += (((x + y) % 2 == 0) ? 0.02f : -0.02f);
    const ImageBuffer iso = st::low_freq_swap(noisy, enh);
    for (size_t i = 0; i < noisy.data.size(); ++i)
        CHECK(std::fabs(iso.data[i] - noisy.data[i]) < 1e-6);
}

TEST_CASE("low_freq_swap: band bookkeeping on a x2 brightened reference") {
    const ImageBuffer enh = Texture(307).render(64, 64);
    ImageBuffer ref = enh;
    for (size_t i = 0; i < ref.data.size(); ++i)
        if (i % 4 != 3) ref.data[i] *= 2.0f;

    const ImageBuffer out = st::low_freq_swap(enh, ref);

    // oracle: enhanced plus the collapse of a pyramid holding only the
    // lowest-band difference
    st::LaplacianPyramid diff = st::build_pyramid(enh);
    const st::LaplacianPyramid rp = st::build_pyramid(ref);
    for (size_t l = 0; l + 1 < diff.levels.size(); ++l)
        std::fill(diff.levels[l].data.begin(), diff.levels[l].data.end(), 0.0);
    for (size_t i = 0; i < diff.levels.back().data.size(); ++i)
        diff.levels.back().data[i] = rp.levels.back().data[i] - diff.levels.back().data[i];
    const ImageBuffer lift = st::collapse(diff);
    for (size_t i = 0; i < out.data.size(); ++i)
        CHECK(std::fabs(out.data[i] - (enh.data[i] + lift.data[i])) < 1e-5);
}

TEST_CASE("enhancers: unsharp fixed point and flicker determinism") {
    const ImageBuffer flat = testutil::constant_image(32, 32, ColorSpace::UnboundedSRGB, 0.5f);
    auto unsharp = st::make_unsharp_enhancer();
    const ImageBuffer u = unsharp->enhance(flat, flat, st::ValidityMask(32, 32, 1));
    for (size_t i = 0; i < flat.data.size(); ++i)
        CHECK(std::fabs(u.data[i] - flat.data[i]) < 1e-6);

    auto f1 = st::make_flicker_enhancer(9);
    auto f2 = st::make_flicker_enhancer(9);
    const st::ValidityMask m(32, 32, 0);
    for (int t = 0; t < 4; ++t) {
        const ImageBuffer a = f1->enhance(flat, flat, m);
        const ImageBuffer b = f2->enhance(flat, flat, m);
        CHECK(a.data == b.data);
        const double gain = a.data[0] / flat.data[0];
        CHECK(gain >= 0.9);
        CHECK(gain <= 1.1);
    }
}

TEST_CASE("stabilize_sequence: identity backend reproduces the input") {
    std::vector<ImageBuffer> frames;
    for (int t = 0; t < 4; ++t) frames.push_back(Texture(310 + t).render(64, 48));
    auto backend = st::make_identity_enhancer();
    const auto out = st::stabilize_sequence(frames, *backend);
    REQUIRE(out.size() == frames.size());
    for (size_t t = 0; t < frames.size(); ++t) CHECK(out[t].data == frames[t].data);
}

TEST_CASE("stabilize_sequence: first-frame contract and error reporting") {
    const ImageBuffer frame = Texture(320).render(48, 32);
    CountingEnhancer counter;
    const auto out = st::stabilize_sequence({frame}, counter);
    CHECK(out.size() == 1);
    CHECK(counter.calls == 1);
    CHECK(counter.first_conditions_zero);

    ThrowingEnhancer thrower;
    std::vector<ImageBuffer> frames(4, frame);
    try {
        st::stabilize_sequence(frames, thrower);
        FAIL("expected BackendError");
    } catch (const st::BackendError& e) {
        CHECK(e.frame == 2);
        CHECK(std::string(e.what()).find("frame 2") != std::string::npos);
    }
}

TEST_CASE("subprocess enhancer: pass-through script and failure") {
    testutil::TempDir dir("subproc");
    const std::string script = dir.str() + "/copy.sh";
    {
        std::ofstream out(script);
        out << "#!/bin/sh\n"
               "while [ $# -gt 0 ]; do\n"
               "  case \"$1\" in\n"
               "    --rgb) RGB=$2; shift 2;;\n"
               "    --alpha) ALPHA=$2; shift 2;;\n"
               "    --out-rgb) OUT_RGB=$2; shift 2;;\n"
               "    --out-alpha) OUT_ALPHA=$2; shift 2;;\n"
               "    *) shift;;\n"
               "  esac\n"
               "done\n"
               "cp \"$RGB\" \"$OUT_RGB\" && cp \"$ALPHA\" \"$OUT_ALPHA\"\n";
    }
    ::system(("chmod +x " + script).c_str());

    std::vector<ImageBuffer> frames;
    for (int t = 0; t < 3; ++t) frames.push_back(Texture(330 + t).render(64, 48));
    auto backend = st::make_subprocess_enhancer(script, dir.str());
    const auto out = st::stabilize_sequence(frames, *backend);
    REQUIRE(out.size() == frames.size());
    for (size_t t = 0; t < frames.size(); ++t)
        for (size_t i = 0; i < out[t].data.size(); ++i)
            CHECK(std::fabs(out[t].data[i] - frames[t].data[i]) < 1e-6);

    auto bad = st::make_subprocess_enhancer("false", dir.str());
    CHECK_THROWS_AS(st::stabilize_sequence(frames, *bad), st::BackendError);
}
