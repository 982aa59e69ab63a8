// Copyright Contributors to the PolySplat Project
// SPDX-License-Identifier: Apache-2.0

#include "polysplat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "polysplat/colorspace.hpp"

namespace polysplat::metrics {

namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

const std::vector<double>& gaussian_kernel() {
    static const std::vector<double> k = [] {
        std::vector<double> v(kWin);
        double sum = 0.0;
        for (int i = 0; i < kWin; ++i) {
            const double d = i - (kWin - 1) / 2.0;
            v[i] = std::exp(-0.5 * d * d / (kSigma * kSigma));
            sum += v[i];
        }
        for (auto& x : v) x /= sum;
        return v;
    }();
    return k;
}

inline int reflect(int i, int n) {
    // symmetric padding (abcba)
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
}

// Separable same-size Gaussian filter with symmetric padding.
void filter2(const std::vector<double>& in, int w, int h, std::vector<double>& out,
             std::vector<double>& tmp) {
    const auto& k = gaussian_kernel();
    const int r = kWin / 2;
    tmp.resize(in.size());
    out.resize(in.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int t = -r; t <= r; ++t) acc += k[t + r] * in[y * w + reflect(x + t, w)];
            tmp[y * w + x] = acc;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int t = -r; t <= r; ++t) acc += k[t + r] * tmp[reflect(y + t, h) * w + x];
            out[y * w + x] = acc;
        }
}

// Adjoint of filter2 (scatter with the same reflection mapping).
void filter2_adjoint(const std::vector<double>& in, int w, int h, std::vector<double>& out,
                     std::vector<double>& tmp) {
    const auto& k = gaussian_kernel();
    const int r = kWin / 2;
    tmp.assign(in.size(), 0.0);
    out.assign(in.size(), 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double v = in[y * w + x];
            for (int t = -r; t <= r; ++t) tmp[reflect(y + t, h) * w + x] += k[t + r] * v;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double v = tmp[y * w + x];
            for (int t = -r; t <= r; ++t) out[y * w + reflect(x + t, w)] += k[t + r] * v;
        }
}

void extract_channel(const ImageBuffer& img, int c, std::vector<double>& out) {
    out.resize(img.pixel_count());
    for (size_t i = 0; i < out.size(); ++i) out[i] = img.data[i * 4 + c];
}

void check_pair(const ImageBuffer& a, const ImageBuffer& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("metrics: image size mismatch");
    if (a.space != b.space) throw std::invalid_argument("metrics: color space mismatch");
}

double mse_rgb(const ImageBuffer& a, const ImageBuffer& b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.data.size(); i += 4)
        for (int c = 0; c < 3; ++c) {
            const double d = static_cast<double>(a.data[i + c]) - b.data[i + c];
            acc += d * d;
        }
    return acc / (3.0 * a.pixel_count());
}

double mse_to_db(double mse, double peak) {
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

}  // namespace

ImageBuffer to_display(const ImageBuffer& img) {
    ImageBuffer out = (img.space == ColorSpace::LinearHDR)
                          ? colorspace::convert_image(img, ColorSpace::UnboundedSRGB)
                          : img;
    for (size_t i = 0; i < out.data.size(); i += 4)
        for (int c = 0; c < 3; ++c) out.data[i + c] = std::clamp(out.data[i + c], 0.0f, 1.0f);
    return out;
}

double psnr(const ImageBuffer& a, const ImageBuffer& b, double peak) {
    check_pair(a, b);
    return mse_to_db(mse_rgb(to_display(a), to_display(b)), peak);
}

double ssim_raw(const ImageBuffer& a, const ImageBuffer& b) {
    check_pair(a, b);
    const int w = a.width, h = a.height;
    std::vector<double> x, y, xx, yy, xy, mx, my, mxx, myy, mxy, tmp;
    double total = 0.0;
    for (int c = 0; c < 3; ++c) {
        extract_channel(a, c, x);
        extract_channel(b, c, y);
        xx.resize(x.size());
        yy.resize(x.size());
        xy.resize(x.size());
        for (size_t i = 0; i < x.size(); ++i) {
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        filter2(x, w, h, mx, tmp);
        filter2(y, w, h, my, tmp);
        filter2(xx, w, h, mxx, tmp);
        filter2(yy, w, h, myy, tmp);
        filter2(xy, w, h, mxy, tmp);
        for (size_t i = 0; i < x.size(); ++i) {
            const double sx = mxx[i] - mx[i] * mx[i];
            const double sy = myy[i] - my[i] * my[i];
            const double sxy = mxy[i] - mx[i] * my[i];
            const double a1 = 2.0 * mx[i] * my[i] + kC1;
            const double a2 = 2.0 * sxy + kC2;
            const double b1 = mx[i] * mx[i] + my[i] * my[i] + kC1;
            const double b2 = sx + sy + kC2;
            total += (a1 * a2) / (b1 * b2);
        }
    }
    return total / (3.0 * a.pixel_count());
}

std::vector<float> ssim_raw_grad(const ImageBuffer& a, const ImageBuffer& b) {
    check_pair(a, b);
    const int w = a.width, h = a.height;
    const double inv_n = 1.0 / (3.0 * a.pixel_count());
    std::vector<float> grad(a.data.size(), 0.0f);
    std::vector<double> x, y, xx, xy, yy, mx, my, mxx, myy, mxy, tmp;
    std::vector<double> d_mu, d_sx, d_sxy, g1, g2, g3, scratch;
    for (int c = 0; c < 3; ++c) {
        extract_channel(a, c, x);
        extract_channel(b, c, y);
        xx.resize(x.size());
        yy.resize(x.size());
        xy.resize(x.size());
        for (size_t i = 0; i < x.size(); ++i) {
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        filter2(x, w, h, mx, tmp);
        filter2(y, w, h, my, tmp);
        filter2(xx, w, h, mxx, tmp);
        filter2(yy, w, h, myy, tmp);
        filter2(xy, w, h, mxy, tmp);
        d_mu.resize(x.size());
        d_sx.resize(x.size());
        d_sxy.resize(x.size());
        for (size_t i = 0; i < x.size(); ++i) {
            const double sx = mxx[i] - mx[i] * mx[i];
            const double sy = myy[i] - my[i] * my[i];
            const double sxy = mxy[i] - mx[i] * my[i];
            const double a1 = 2.0 * mx[i] * my[i] + kC1;
            const double a2 = 2.0 * sxy + kC2;
            const double b1 = mx[i] * mx[i] + my[i] * my[i] + kC1;
            const double b2 = sx + sy + kC2;
            const double denom = b1 * b2;
            const double d_a1 = a2 / denom;
            const double d_a2 = a1 / denom;
            const double d_b1 = -a1 * a2 / (b1 * denom);
            const double d_b2 = -a1 * a2 / (b2 * denom);
            // partials wrt the filtered moment maps
            const double dmap_dmx = 2.0 * my[i] * d_a1 + 2.0 * mx[i] * d_b1;
            const double dmap_dsx = d_b2;
            const double dmap_dsxy = 2.0 * d_a2;
            // sigma_x^2 = mxx - mx^2, sigma_xy = mxy - mx*my
            d_mu[i] = inv_n * (dmap_dmx - 2.0 * mx[i] * dmap_dsx - my[i] * dmap_dsxy);
            d_sx[i] = inv_n * dmap_dsx;    // weight for the mxx path
            d_sxy[i] = inv_n * dmap_dsxy;  // weight for the mxy path
        }
        filter2_adjoint(d_mu, w, h, g1, scratch);
        filter2_adjoint(d_sx, w, h, g2, scratch);
        filter2_adjoint(d_sxy, w, h, g3, scratch);
        for (size_t i = 0; i < x.size(); ++i)
            grad[i * 4 + c] = static_cast<float>(g1[i] + 2.0 * x[i] * g2[i] + y[i] * g3[i]);
    }
    return grad;
}

double ssim(const ImageBuffer& a, const ImageBuffer& b) {
    return ssim_raw(to_display(a), to_display(b));
}

double tpsnr(const std::vector<ImageBuffer>& seq_a, const std::vector<ImageBuffer>& seq_b,
             double peak) {
    if (seq_a.size() != seq_b.size()) throw std::invalid_argument("tpsnr: length mismatch");
    if (seq_a.size() < 2) throw std::invalid_argument("tpsnr: needs >= 2 frames");
    double acc = 0.0;
    for (size_t t = 1; t < seq_a.size(); ++t) {
        const ImageBuffer a0 = to_display(seq_a[t - 1]), a1 = to_display(seq_a[t]);
        const ImageBuffer b0 = to_display(seq_b[t - 1]), b1 = to_display(seq_b[t]);
        double mse = 0.0;
        for (size_t i = 0; i < a1.data.size(); i += 4)
            for (int c = 0; c < 3; ++c) {
                const double da = static_cast<double>(a1.data[i + c]) - a0.data[i + c];
                const double db = static_cast<double>(b1.data[i + c]) - b0.data[i + c];
                mse += (da - db) * (da - db);
            }
        mse /= 3.0 * a1.pixel_count();
        acc += mse_to_db(mse, peak);
    }
    return acc / static_cast<double>(seq_a.size() - 1);
}

MetricReport MetricReport::compute(const std::vector<ImageBuffer>& pred,
                                   const std::vector<ImageBuffer>& gt) {
    if (pred.size() != gt.size()) throw std::invalid_argument("MetricReport: length mismatch");
    MetricReport r;
    for (size_t i = 0; i < pred.size(); ++i) {
        r.psnr.push_back(metrics::psnr(pred[i], gt[i]));
        r.ssim.push_back(metrics::ssim(pred[i], gt[i]));
    }
    for (size_t t = 1; t < pred.size(); ++t)
        r.tpsnr.push_back(metrics::tpsnr({pred[t - 1], pred[t]}, {gt[t - 1], gt[t]}));
    auto mean = [](const std::vector<double>& v) {
        if (v.empty()) return 0.0;
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    r.psnr_mean = mean(r.psnr);
    r.ssim_mean = mean(r.ssim);
    r.tpsnr_mean = mean(r.tpsnr);
    return r;
}

void MetricReport::save_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write report: " + path);
    out << "frame,psnr,ssim,tpsnr\n";
    for (size_t i = 0; i < psnr.size(); ++i) {
        out << i << "," << psnr[i] << "," << ssim[i] << ",";
        if (i >= 1 && i - 1 < tpsnr.size()) out << tpsnr[i - 1];
        out << "\n";
    }
    out << "mean," << psnr_mean << "," << ssim_mean << "," << tpsnr_mean << "\n";
}

void MetricReport::save_json(const std::string& path) const {
    nlohmann::json j;
    j["psnr"] = psnr;
    j["ssim"] = ssim;
    j["tpsnr"] = tpsnr;
    j["psnr_mean"] = psnr_mean;
    j["ssim_mean"] = ssim_mean;
    j["tpsnr_mean"] = tpsnr_mean;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write report: " + path);
    out << j.dump(2) << "\n";
}

}  // namespace polysplat::metrics
