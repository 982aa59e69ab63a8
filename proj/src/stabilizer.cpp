// Copyright Contributors to the PolySplat Project
// SPDX-License-Identifier: Apache-2.0

#include "polysplat/stabilizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <random>

#include "polysplat/io.hpp"
#include "polysplat/metrics.hpp"

namespace polysplat::stabilizer {

namespace {

constexpr double kBinomial[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};

// ---- small grayscale pyramid utilities for the flow estimator ----

struct Gray {
    int w = 0, h = 0;
    std::vector<double> v;
};

inline int clampi(int i, int n) { return std::min(std::max(i, 0), n - 1); }

Gray luminance(const ImageBuffer& img) {
    const ImageBuffer disp = metrics::to_display(img);
    Gray g;
    g.w = img.width;
    g.h = img.height;
    g.v.resize(img.pixel_count());
    for (size_t i = 0; i < g.v.size(); ++i)
        g.v[i] = 0.2126 * disp.data[i * 4] + 0.7152 * disp.data[i * 4 + 1] +
                 0.0722 * disp.data[i * 4 + 2];
    return g;
}

Gray downsample_gray(const Gray& in) {
    Gray tmp;
    tmp.w = in.w;
    tmp.h = in.h;
    tmp.v.resize(in.v.size());
    for (int y = 0; y < in.h; ++y)
        for (int x = 0; x < in.w; ++x) {
            double acc = 0.0;
            for (int t = -2; t <= 2; ++t) acc += kBinomial[t + 2] * in.v[y * in.w + clampi(x + t, in.w)];
            tmp.v[y * in.w + x] = acc;
        }
    Gray fil;
    fil.w = in.w;
    fil.h = in.h;
    fil.v.resize(in.v.size());
    for (int y = 0; y < in.h; ++y)
        for (int x = 0; x < in.w; ++x) {
            double acc = 0.0;
            for (int t = -2; t <= 2; ++t) acc += kBinomial[t + 2] * tmp.v[clampi(y + t, in.h) * in.w + x];
            fil.v[y * in.w + x] = acc;
        }
    Gray out;
    out.w = (in.w + 1) / 2;
    out.h = (in.h + 1) / 2;
    out.v.resize(static_cast<size_t>(out.w) * out.h);
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x)
            out.v[y * out.w + x] = fil.v[std::min(2 * y, in.h - 1) * in.w + std::min(2 * x, in.w - 1)];
    return out;
}

void blur_field(std::vector<double>& v, int w, int h) {
    std::vector<double> tmp(v.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int t = -2; t <= 2; ++t) acc += kBinomial[t + 2] * v[y * w + clampi(x + t, w)];
            tmp[static_cast<size_t>(y) * w + x] = acc;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int t = -2; t <= 2; ++t) acc += kBinomial[t + 2] * tmp[clampi(y + t, h) * w + x];
            v[static_cast<size_t>(y) * w + x] = acc;
        }
}

double sample_bilinear(const Gray& g, double x, double y) {
    x = std::min(std::max(x, 0.0), static_cast<double>(g.w - 1));
    y = std::min(std::max(y, 0.0), static_cast<double>(g.h - 1));
    const int x0 = std::min(static_cast<int>(x), g.w - 2 >= 0 ? g.w - 2 : 0);
    const int y0 = std::min(static_cast<int>(y), g.h - 2 >= 0 ? g.h - 2 : 0);
    const double fx = x - x0, fy = y - y0;
    const int x1 = std::min(x0 + 1, g.w - 1), y1 = std::min(y0 + 1, g.h - 1);
    return (1 - fx) * (1 - fy) * g.v[y0 * g.w + x0] + fx * (1 - fy) * g.v[y0 * g.w + x1] +
           (1 - fx) * fy * g.v[y1 * g.w + x0] + fx * fy * g.v[y1 * g.w + x1];
}

}  // namespace

FlowField compute_flow(const ImageBuffer& curr_lq, const ImageBuffer& prev_lq) {
    if (!curr_lq.same_shape(prev_lq))
        throw std::invalid_argument("compute_flow: frame size mismatch");
    const int w = curr_lq.width, h = curr_lq.height;

    std::vector<Gray> curr_pyr{luminance(curr_lq)}, prev_pyr{luminance(prev_lq)};
    int levels = 1;
    while (levels < kPyramidLevels &&
           std::min(curr_pyr.back().w, curr_pyr.back().h) >= 16) {
        curr_pyr.push_back(downsample_gray(curr_pyr.back()));
        prev_pyr.push_back(downsample_gray(prev_pyr.back()));
        ++levels;
    }

    const int r = 2;  // 5x5 window
    std::vector<double> fx, fy;
    for (int lv = levels - 1; lv >= 0; --lv) {
        const Gray& c = curr_pyr[static_cast<size_t>(lv)];
        const Gray& p = prev_pyr[static_cast<size_t>(lv)];
        const size_t n = c.v.size();
        std::vector<double> nfx(n, 0.0), nfy(n, 0.0);
        if (!fx.empty()) {
            // upscale previous-level flow (values scale with resolution)
            const Gray& pc = curr_pyr[static_cast<size_t>(lv + 1)];
            const double sx = static_cast<double>(pc.w) / c.w;
            const double sy = static_cast<double>(pc.h) / c.h;
            Gray gx{pc.w, pc.h, fx}, gy{pc.w, pc.h, fy};
            for (int y = 0; y < c.h; ++y)
                for (int x = 0; x < c.w; ++x) {
                    nfx[y * c.w + x] = sample_bilinear(gx, x * sx, y * sy) / sx;
                    nfy[y * c.w + x] = sample_bilinear(gy, x * sx, y * sy) / sy;
                }
        }

        std::vector<double> warped(n), gx(n), gy(n);
        for (int iter = 0; iter < 6; ++iter) {
#pragma omp parallel for schedule(static)
            for (int y = 0; y < c.h; ++y)
                for (int x = 0; x < c.w; ++x) {
                    const size_t i = static_cast<size_t>(y) * c.w + x;
                    warped[i] = sample_bilinear(p, x + nfx[i], y + nfy[i]);
                }
#pragma omp parallel for schedule(static)
            for (int y = 0; y < c.h; ++y)
                for (int x = 0; x < c.w; ++x) {
                    const size_t i = static_cast<size_t>(y) * c.w + x;
                    gx[i] = 0.5 * (warped[static_cast<size_t>(y) * c.w + clampi(x + 1, c.w)] -
                                   warped[static_cast<size_t>(y) * c.w + clampi(x - 1, c.w)]);
                    gy[i] = 0.5 * (warped[static_cast<size_t>(clampi(y + 1, c.h)) * c.w + x] -
                                   warped[static_cast<size_t>(clampi(y - 1, c.h)) * c.w + x]);
                }
#pragma omp parallel for schedule(static)
            for (int y = 0; y < c.h; ++y)
                for (int x = 0; x < c.w; ++x) {
                    double a = 0, b = 0, d = 0, e1 = 0, e2 = 0;
                    for (int dy2 = -r; dy2 <= r; ++dy2)
                        for (int dx2 = -r; dx2 <= r; ++dx2) {
                            const size_t k = static_cast<size_t>(clampi(y + dy2, c.h)) * c.w +
                                             clampi(x + dx2, c.w);
                            const double res = warped[k] - c.v[k];
                            a += gx[k] * gx[k];
                            b += gx[k] * gy[k];
                            d += gy[k] * gy[k];
                            e1 += gx[k] * res;
                            e2 += gy[k] * res;
                        }
                    const double lam = 1e-3 * (a + d) + 1e-9;
                    a += lam;
                    d += lam;
                    const double det = a * d - b * b;
                    if (det < 1e-12) continue;
                    double du = -(d * e1 - b * e2) / det;
                    double dv = -(-b * e1 + a * e2) / det;
                    du = std::min(std::max(du, -2.0), 2.0);
                    dv = std::min(std::max(dv, -2.0), 2.0);
                    const size_t i = static_cast<size_t>(y) * c.w + x;
                    nfx[i] += du;
                    nfy[i] += dv;
                }
            // smooth the field to suppress aperture-problem noise
            blur_field(nfx, c.w, c.h);
            blur_field(nfy, c.w, c.h);
        }
        fx = std::move(nfx);
        fy = std::move(nfy);
    }

    FlowField flow(w, h);
    for (size_t i = 0; i < flow.dx.size(); ++i) {
        flow.dx[i] = static_cast<float>(fx[i]);
        flow.dy[i] = static_cast<float>(fy[i]);
    }
    return flow;
}

WarpResult warp(const ImageBuffer& prev, const FlowField& flow) {
    if (prev.width != flow.width || prev.height != flow.height)
        throw std::invalid_argument("warp: flow size mismatch");
    WarpResult res{ImageBuffer(prev.width, prev.height, prev.space),
                   std::vector<uint8_t>(prev.pixel_count(), 0)};
    const int w = prev.width, h = prev.height;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const size_t i = static_cast<size_t>(y) * w + x;
            const double sx = x + flow.dx[i];
            const double sy = y + flow.dy[i];
            if (sx < 0.0 || sy < 0.0 || sx > w - 1 || sy > h - 1) continue;  // zeros + flagged
            res.in_bounds[i] = 1;
            const int x0 = std::min(static_cast<int>(sx), w - 1);
            const int y0 = std::min(static_cast<int>(sy), h - 1);
            const int x1 = std::min(x0 + 1, w - 1);
            const int y1 = std::min(y0 + 1, h - 1);
            const double fx2 = sx - x0, fy2 = sy - y0;
            float* out = res.image.px(x, y);
            const float* p00 = prev.px(x0, y0);
            const float* p10 = prev.px(x1, y0);
            const float* p01 = prev.px(x0, y1);
            const float* p11 = prev.px(x1, y1);
            for (int ch = 0; ch < 4; ++ch)
                out[ch] = static_cast<float>((1 - fx2) * (1 - fy2) * p00[ch] +
                                             fx2 * (1 - fy2) * p10[ch] +
                                             (1 - fx2) * fy2 * p01[ch] + fx2 * fy2 * p11[ch]);
        }
    return res;
}

ValidityMask validity_mask(const ImageBuffer& curr_lq, const WarpResult& warped_prev_lq,
                           double tau) {
    if (!curr_lq.same_shape(warped_prev_lq.image))
        throw std::invalid_argument("validity_mask: size mismatch");
    const ImageBuffer a = metrics::to_display(curr_lq);
    const ImageBuffer b = metrics::to_display(warped_prev_lq.image);
    ValidityMask mask(curr_lq.width, curr_lq.height);
    for (size_t i = 0; i < mask.valid.size(); ++i) {
        if (!warped_prev_lq.in_bounds[i]) continue;
        const double diff = (std::fabs(a.data[i * 4] - b.data[i * 4]) +
                             std::fabs(a.data[i * 4 + 1] - b.data[i * 4 + 1]) +
                             std::fabs(a.data[i * 4 + 2] - b.data[i * 4 + 2])) /
                            3.0;
        mask.valid[i] = diff < tau ? 1 : 0;
    }
    return mask;
}

// ---- Laplacian pyramid (periodic boundaries, all channels, double) ----

namespace {

using Level = LaplacianPyramid::Level;

inline int wrap(int i, int n) {
    i %= n;
    return i < 0 ? i + n : i;
}

Level filter_x(const Level& in, bool zero_inserted_scale) {
    Level out{in.width, in.height, std::vector<double>(in.data.size())};
    const double scale = zero_inserted_scale ? 2.0 : 1.0;
    for (int y = 0; y < in.height; ++y)
        for (int x = 0; x < in.width; ++x)
            for (int c = 0; c < 4; ++c) {
                double acc = 0.0;
                for (int t = -2; t <= 2; ++t)
                    acc += kBinomial[t + 2] *
                           in.data[(static_cast<size_t>(y) * in.width + wrap(x + t, in.width)) * 4 + c];
                out.data[(static_cast<size_t>(y) * in.width + x) * 4 + c] = scale * acc;
            }
    return out;
}

Level filter_y(const Level& in, bool zero_inserted_scale) {
    Level out{in.width, in.height, std::vector<double>(in.data.size())};
    const double scale = zero_inserted_scale ? 2.0 : 1.0;
    for (int y = 0; y < in.height; ++y)
        for (int x = 0; x < in.width; ++x)
            for (int c = 0; c < 4; ++c) {
                double acc = 0.0;
                for (int t = -2; t <= 2; ++t)
                    acc += kBinomial[t + 2] *
                           in.data[(static_cast<size_t>(wrap(y + t, in.height)) * in.width + x) * 4 + c];
                out.data[(static_cast<size_t>(y) * in.width + x) * 4 + c] = scale * acc;
            }
    return out;
}

Level downsample(const Level& in) {
    const Level fil = filter_y(filter_x(in, false), false);
    Level out{in.width / 2, in.height / 2, {}};
    out.data.resize(static_cast<size_t>(out.width) * out.height * 4);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            for (int c = 0; c < 4; ++c)
                out.data[(static_cast<size_t>(y) * out.width + x) * 4 + c] =
                    fil.data[(static_cast<size_t>(2 * y) * in.width + 2 * x) * 4 + c];
    return out;
}

Level upsample(const Level& in) {
    Level z{in.width * 2, in.height * 2, {}};
    z.data.assign(static_cast<size_t>(z.width) * z.height * 4, 0.0);
    for (int y = 0; y < in.height; ++y)
        for (int x = 0; x < in.width; ++x)
            for (int c = 0; c < 4; ++c)
                z.data[(static_cast<size_t>(2 * y) * z.width + 2 * x) * 4 + c] =
                    in.data[(static_cast<size_t>(y) * in.width + x) * 4 + c];
    return filter_y(filter_x(z, true), true);
}

}  // namespace

LaplacianPyramid build_pyramid(const ImageBuffer& img, int levels) {
    if (levels < 2) throw std::invalid_argument("build_pyramid: need >= 2 levels");
    const int div = 1 << (levels - 1);
    if (img.width % div != 0 || img.height % div != 0)
        throw std::invalid_argument("build_pyramid: size not divisible by 2^(levels-1)");
    LaplacianPyramid pyr;
    pyr.base_width = img.width;
    pyr.base_height = img.height;
    pyr.space = img.space;
    Level cur{img.width, img.height, std::vector<double>(img.data.begin(), img.data.end())};
    for (int k = 0; k < levels - 1; ++k) {
        Level down = downsample(cur);
        Level up = upsample(down);
        Level band{cur.width, cur.height, std::vector<double>(cur.data.size())};
        for (size_t i = 0; i < cur.data.size(); ++i) band.data[i] = cur.data[i] - up.data[i];
        pyr.levels.push_back(std::move(band));
        cur = std::move(down);
    }
    pyr.levels.push_back(std::move(cur));
    return pyr;
}

ImageBuffer collapse(const LaplacianPyramid& pyr) {
    if (pyr.levels.empty()) throw std::invalid_argument("collapse: empty pyramid");
    Level rec = pyr.levels.back();
    for (size_t k = pyr.levels.size() - 1; k-- > 0;) {
        Level up = upsample(rec);
        const Level& band = pyr.levels[k];
        if (up.width != band.width || up.height != band.height)
            throw std::invalid_argument("collapse: inconsistent level sizes");
        for (size_t i = 0; i < up.data.size(); ++i) up.data[i] += band.data[i];
        rec = std::move(up);
    }
    ImageBuffer out(pyr.base_width, pyr.base_height, pyr.space);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = static_cast<float>(rec.data[i]);
    return out;
}

namespace {

ImageBuffer pad_reflect(const ImageBuffer& img, int pw, int ph) {
    ImageBuffer out(pw, ph, img.space);
    for (int y = 0; y < ph; ++y) {
        int sy = y < img.height ? y : 2 * img.height - 2 - y;
        sy = clampi(sy, img.height);
        for (int x = 0; x < pw; ++x) {
            int sx = x < img.width ? x : 2 * img.width - 2 - x;
            sx = clampi(sx, img.width);
            const float* src = img.px(sx, sy);
            float* dst = out.px(x, y);
            for (int c = 0; c < 4; ++c) dst[c] = src[c];
        }
    }
    return out;
}

}  // namespace

ImageBuffer low_freq_swap(const ImageBuffer& enhanced, const ImageBuffer& reference_lq) {
    if (!enhanced.same_shape(reference_lq))
        throw std::invalid_argument("low_freq_swap: size mismatch");
    // When the enhanced frame equals the reference the swap is mathematically
    // the identity; return it unchanged so that holds bitwise too.
    if (enhanced.data == reference_lq.data) return enhanced;
    const int div = 1 << (kPyramidLevels - 1);
    const int pw = (enhanced.width + div - 1) / div * div;
    const int ph = (enhanced.height + div - 1) / div * div;
    const bool padded = pw != enhanced.width || ph != enhanced.height;
    const ImageBuffer e = padded ? pad_reflect(enhanced, pw, ph) : enhanced;
    const ImageBuffer r = padded ? pad_reflect(reference_lq, pw, ph) : reference_lq;

    LaplacianPyramid pe = build_pyramid(e);
    const LaplacianPyramid pr = build_pyramid(r);
    pe.levels.back() = pr.levels.back();
    ImageBuffer out = collapse(pe);
    if (!padded) return out;
    ImageBuffer crop(enhanced.width, enhanced.height, enhanced.space);
    for (int y = 0; y < crop.height; ++y)
        for (int x = 0; x < crop.width; ++x) {
            const float* src = out.px(x, y);
            float* dst = crop.px(x, y);
            for (int c = 0; c < 4; ++c) dst[c] = src[c];
        }
    return crop;
}

// ---- enhancer backends ----

namespace {

class IdentityEnhancer final : public Enhancer {
  public:
    ImageBuffer enhance(const ImageBuffer& curr, const ImageBuffer&, const ValidityMask&) override {
        return curr;
    }
};

class UnsharpEnhancer final : public Enhancer {
  public:
    ImageBuffer enhance(const ImageBuffer& curr, const ImageBuffer&, const ValidityMask&) override {
        // gaussian blur, sigma = radius = 2
        constexpr int kR = 4;
        double kern[2 * kR + 1];
        double sum = 0.0;
        for (int i = -kR; i <= kR; ++i) {
            kern[i + kR] = std::exp(-0.5 * i * i / 4.0);
            sum += kern[i + kR];
        }
        for (auto& k : kern) k /= sum;
        const int w = curr.width, h = curr.height;
        ImageBuffer tmp = curr, blur = curr;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < 4; ++c) {
                    double acc = 0.0;
                    for (int t = -kR; t <= kR; ++t)
                        acc += kern[t + kR] * curr.px(clampi(x + t, w), y)[c];
                    tmp.px(x, y)[c] = static_cast<float>(acc);
                }
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < 4; ++c) {
                    double acc = 0.0;
                    for (int t = -kR; t <= kR; ++t)
                        acc += kern[t + kR] * tmp.px(x, clampi(y + t, h))[c];
                    blur.px(x, y)[c] = static_cast<float>(acc);
                }
        ImageBuffer out = curr;
        for (size_t i = 0; i < out.data.size(); ++i)
            out.data[i] = curr.data[i] + 0.5f * (curr.data[i] - blur.data[i]);
        return out;
    }
};

class FlickerEnhancer final : public Enhancer {
  public:
    explicit FlickerEnhancer(uint64_t seed) : rng_(seed) {}
    ImageBuffer enhance(const ImageBuffer& curr, const ImageBuffer&, const ValidityMask&) override {
        const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
        const float gain = static_cast<float>(0.9 + 0.2 * u);
        ImageBuffer out = curr;
        for (size_t i = 0; i < out.data.size(); i += 4)
            for (int c = 0; c < 3; ++c) out.data[i + c] *= gain;
        return out;
    }

  private:
    std::mt19937_64 rng_;
};

class SubprocessEnhancer final : public Enhancer {
  public:
    SubprocessEnhancer(std::string cmd, std::string dir)
        : cmd_(std::move(cmd)), dir_(std::move(dir)) {}

    ImageBuffer enhance(const ImageBuffer& curr, const ImageBuffer& warped,
                        const ValidityMask& mask) override {
        const std::string rgb = dir_ + "/in_rgb.pfm";
        const std::string alpha = dir_ + "/in_alpha.pfm";
        const std::string warped_base = dir_ + "/warped";
        const std::string mask_path = dir_ + "/mask.pfm";
        const std::string out_rgb = dir_ + "/out_rgb.pfm";
        const std::string out_alpha = dir_ + "/out_alpha.pfm";

        io::PfmImage rgb_img{curr.width, curr.height, 3, {}};
        rgb_img.data.resize(curr.pixel_count() * 3);
        io::PfmImage alpha_img{curr.width, curr.height, 1, {}};
        alpha_img.data.resize(curr.pixel_count());
        for (size_t i = 0; i < curr.pixel_count(); ++i) {
            for (int c = 0; c < 3; ++c) rgb_img.data[i * 3 + c] = curr.data[i * 4 + c];
            alpha_img.data[i] = curr.data[i * 4 + 3];
        }
        io::write_pfm(rgb, rgb_img);
        io::write_pfm(alpha, alpha_img);
        io::write_rgba_pair(warped_base, warped);
        io::PfmImage mask_img{mask.width, mask.height, 1, {}};
        mask_img.data.resize(mask.valid.size());
        for (size_t i = 0; i < mask.valid.size(); ++i)
            mask_img.data[i] = static_cast<float>(mask.valid[i]);
        io::write_pfm(mask_path, mask_img);

        const std::string invocation = cmd_ + " --rgb " + rgb + " --alpha " + alpha +
                                       " --warped " + warped_base + ".pfm --mask " + mask_path +
                                       " --out-rgb " + out_rgb + " --out-alpha " + out_alpha;
        const int rc = std::system(invocation.c_str());
        if (rc != 0)
            throw std::runtime_error("enhancer backend failed (exit " + std::to_string(rc) +
                                     "): " + cmd_);

        const io::PfmImage orgb = io::read_pfm(out_rgb);
        const io::PfmImage oalpha = io::read_pfm(out_alpha);
        if (orgb.width != curr.width || orgb.height != curr.height || orgb.channels != 3 ||
            oalpha.width != curr.width || oalpha.height != curr.height)
            throw std::runtime_error("enhancer backend produced wrong image size");
        ImageBuffer out(curr.width, curr.height, curr.space);
        for (size_t i = 0; i < out.pixel_count(); ++i) {
            for (int c = 0; c < 3; ++c) out.data[i * 4 + c] = orgb.data[i * 3 + c];
            out.data[i * 4 + 3] = oalpha.data[i];
        }
        return out;
    }

  private:
    std::string cmd_;
    std::string dir_;
};

}  // namespace

std::unique_ptr<Enhancer> make_identity_enhancer() { return std::make_unique<IdentityEnhancer>(); }
std::unique_ptr<Enhancer> make_unsharp_enhancer() { return std::make_unique<UnsharpEnhancer>(); }
std::unique_ptr<Enhancer> make_flicker_enhancer(uint64_t seed) {
    return std::make_unique<FlickerEnhancer>(seed);
}
std::unique_ptr<Enhancer> make_subprocess_enhancer(const std::string& command,
                                                   const std::string& work_dir) {
    return std::make_unique<SubprocessEnhancer>(command, work_dir);
}

std::vector<ImageBuffer> stabilize_sequence(const std::vector<ImageBuffer>& lq_frames,
                                            Enhancer& backend) {
    std::vector<ImageBuffer> out;
    out.reserve(lq_frames.size());
    for (size_t t = 0; t < lq_frames.size(); ++t) {
        const ImageBuffer& curr = lq_frames[t];
        try {
            ImageBuffer enhanced(0, 0, curr.space);
            if (t == 0) {
                const ImageBuffer zeros(curr.width, curr.height, curr.space);
                const ValidityMask zero_mask(curr.width, curr.height, 0);
                enhanced = backend.enhance(curr, zeros, zero_mask);
            } else {
                const FlowField flow = compute_flow(curr, lq_frames[t - 1]);
                const WarpResult warped_out = warp(out.back(), flow);
                const WarpResult warped_lq = warp(lq_frames[t - 1], flow);
                const ValidityMask mask = validity_mask(curr, warped_lq);
                enhanced = backend.enhance(curr, warped_out.image, mask);
            }
            if (!enhanced.same_shape(curr))
                throw std::runtime_error("backend changed the frame size");
            out.push_back(low_freq_swap(enhanced, curr));
        } catch (const BackendError&) {
            throw;
        } catch (const std::exception& e) {
            throw BackendError(e.what(), t);
        }
    }
    return out;
}

}  // namespace polysplat::stabilizer
