// Copyright Contributors to the PolySplat Project
// SPDX-License-Identifier: Apache-2.0

#include "polysplat/photometric.hpp"

#include <cmath>
#include <map>
#include <mutex>

namespace polysplat {

PhotometricGrid PhotometricGrid::identity(int camera_id, int n) {
    PhotometricGrid g;
    g.camera_id = camera_id;
    g.B = Eigen::MatrixXd::Zero(n, n);
    g.E = Eigen::MatrixXd::Ones(n, n);
    return g;
}

namespace {

// 1D trigonometric interpolation matrix (m x n): the composition
// DFT_n -> centered zero-padded embedding into an m-spectrum (Nyquist bin
// split across +-n/2) -> scale by m/n -> IDFT_m, written in closed form.
Eigen::MatrixXd interp_matrix(int n, int m) {
    Eigen::MatrixXd u(m, n);
    const double pi = std::acos(-1.0);
    for (int j = 0; j < m; ++j) {
        for (int i = 0; i < n; ++i) {
            const double delta = static_cast<double>(j) / m - static_cast<double>(i) / n;
            double acc = 1.0;
            for (int k = 1; k < n / 2; ++k) acc += 2.0 * std::cos(2.0 * pi * k * delta);
            acc += std::cos(pi * n * delta);  // split Nyquist bin
            u(j, i) = acc / n;
        }
    }
    return u;
}

const Eigen::MatrixXd& cached_interp(int n, int m) {
    static std::map<std::pair<int, int>, Eigen::MatrixXd> cache;
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find({n, m});
    if (it == cache.end()) it = cache.emplace(std::make_pair(n, m), interp_matrix(n, m)).first;
    return it->second;
}

}  // namespace

Eigen::MatrixXd fft_upsample(const Eigen::MatrixXd& grid, int out_w, int out_h) {
    const int n = static_cast<int>(grid.rows());
    if (grid.cols() != n) throw InvalidSizeError("fft_upsample: grid must be square");
    if (n % 2 != 0) throw InvalidSizeError("fft_upsample: grid size must be even");
    if (out_w < n || out_h < n) throw InvalidSizeError("fft_upsample: output smaller than grid");
    const Eigen::MatrixXd& uh = cached_interp(n, out_h);
    const Eigen::MatrixXd& uw = cached_interp(n, out_w);
    return uh * grid * uw.transpose();
}

Eigen::MatrixXd fft_upsample_adjoint(const Eigen::MatrixXd& upstream, int grid_size) {
    const int out_h = static_cast<int>(upstream.rows());
    const int out_w = static_cast<int>(upstream.cols());
    if (out_w < grid_size || out_h < grid_size)
        throw InvalidSizeError("fft_upsample_adjoint: map smaller than grid");
    const Eigen::MatrixXd& uh = cached_interp(grid_size, out_h);
    const Eigen::MatrixXd& uw = cached_interp(grid_size, out_w);
    return uh.transpose() * upstream * uw;
}

ImageBuffer apply(const ImageBuffer& img, const PhotometricGrid& grid) {
    const Eigen::MatrixXd b_up = fft_upsample(grid.B, img.width, img.height);
    const Eigen::MatrixXd e_up = fft_upsample(grid.E, img.width, img.height);
    return apply_with_maps(img, b_up, e_up);
}

ImageBuffer apply_with_maps(const ImageBuffer& img, const Eigen::MatrixXd& b_up,
                            const Eigen::MatrixXd& e_up) {
    if (img.space != ColorSpace::LinearHDR)
        throw std::invalid_argument("photometric::apply expects a LinearHDR image");
    if (b_up.rows() != img.height || b_up.cols() != img.width || e_up.rows() != img.height ||
        e_up.cols() != img.width)
        throw InvalidSizeError("photometric::apply: map/image size mismatch");
    ImageBuffer out = img;
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const double b = b_up(y, x), e = e_up(y, x);
            float* p = out.px(x, y);
            for (int c = 0; c < 3; ++c) p[c] = static_cast<float>((p[c] + b) * e);
        }
    }
    return out;
}

void apply_backward(const ImageBuffer& img, const Eigen::MatrixXd& b_up,
                    const Eigen::MatrixXd& e_up, const std::vector<float>& upstream,
                    std::vector<float>& d_img, Eigen::MatrixXd& d_b_up,
                    Eigen::MatrixXd& d_e_up) {
    d_img.assign(img.data.size(), 0.0f);
    d_b_up.setZero(img.height, img.width);
    d_e_up.setZero(img.height, img.width);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const size_t off = (static_cast<size_t>(y) * img.width + x) * 4;
            const double b = b_up(y, x), e = e_up(y, x);
            double db = 0.0, de = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double up = upstream[off + c];
                d_img[off + c] = static_cast<float>(up * e);
                db += up * e;
                de += up * (img.data[off + c] + b);
            }
            d_img[off + 3] = upstream[off + 3];  // alpha untouched by apply
            d_b_up(y, x) = db;
            d_e_up(y, x) = de;
        }
    }
}

double exposure_loss(const std::vector<PhotometricGrid>& grids) {
    double sum = 0.0;
    size_t n = 0;
    for (const auto& g : grids) {
        sum += (g.E.array() - 1.0).sum();
        n += static_cast<size_t>(g.E.size());
    }
    if (n == 0) return 0.0;
    const double mean_dev = sum / static_cast<double>(n);
    return mean_dev * mean_dev;
}

double black_loss(const std::vector<PhotometricGrid>& grids) {
    double sum = 0.0;
    size_t n = 0;
    for (const auto& g : grids) {
        sum += g.B.sum();
        n += static_cast<size_t>(g.B.size());
    }
    if (n == 0) return 0.0;
    return -sum / static_cast<double>(n);
}

std::vector<Eigen::MatrixXd> exposure_loss_grad(const std::vector<PhotometricGrid>& grids) {
    double sum = 0.0;
    size_t n = 0;
    for (const auto& g : grids) {
        sum += (g.E.array() - 1.0).sum();
        n += static_cast<size_t>(g.E.size());
    }
    std::vector<Eigen::MatrixXd> out;
    const double coeff = (n == 0) ? 0.0 : 2.0 * (sum / n) / static_cast<double>(n);
    for (const auto& g : grids)
        out.push_back(Eigen::MatrixXd::Constant(g.E.rows(), g.E.cols(), coeff));
    return out;
}

std::vector<Eigen::MatrixXd> black_loss_grad(const std::vector<PhotometricGrid>& grids) {
    size_t n = 0;
    for (const auto& g : grids) n += static_cast<size_t>(g.B.size());
    std::vector<Eigen::MatrixXd> out;
    const double coeff = (n == 0) ? 0.0 : -1.0 / static_cast<double>(n);
    for (const auto& g : grids)
        out.push_back(Eigen::MatrixXd::Constant(g.B.rows(), g.B.cols(), coeff));
    return out;
}

}  // namespace polysplat
