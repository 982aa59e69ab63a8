// Copyright Contributors to the PolySplat Project
// SPDX-License-Identifier: Apache-2.0

#include "polysplat/splatter.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "polysplat/colorspace.hpp"

namespace polysplat::splatter {

namespace {

// Real SH basis constants, 3DGS coefficient ordering.
constexpr double kC0 = 0.28209479177387814;
constexpr double kC1 = 0.4886025119029199;
constexpr double kC2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                           -1.0925484305920792, 0.5462742152960396};
constexpr double kC3[7] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
                           0.3731763325901154, -0.4570457994644658, 1.445305721320277,
                           -0.5900435899266435};

int sh_band_count(size_t sh_size) { return static_cast<int>(sh_size / 3); }

// Fills basis values and (optionally) their derivatives wrt dir components.
void sh_basis(const Eigen::Vector3d& dir, int n_bases, double* b, double (*db)[3] = nullptr) {
    const double x = dir.x(), y = dir.y(), z = dir.z();
    auto set = [&](int i, double v, double dx, double dy, double dz) {
        b[i] = v;
        if (db) {
            db[i][0] = dx;
            db[i][1] = dy;
            db[i][2] = dz;
        }
    };
    set(0, kC0, 0, 0, 0);
    if (n_bases <= 1) return;
    set(1, -kC1 * y, 0, -kC1, 0);
    set(2, kC1 * z, 0, 0, kC1);
    set(3, -kC1 * x, -kC1, 0, 0);
    if (n_bases <= 4) return;
    set(4, kC2[0] * x * y, kC2[0] * y, kC2[0] * x, 0);
    set(5, kC2[1] * y * z, 0, kC2[1] * z, kC2[1] * y);
    set(6, kC2[2] * (2 * z * z - x * x - y * y), -2 * kC2[2] * x, -2 * kC2[2] * y,
        4 * kC2[2] * z);
    set(7, kC2[3] * x * z, kC2[3] * z, 0, kC2[3] * x);
    set(8, kC2[4] * (x * x - y * y), 2 * kC2[4] * x, -2 * kC2[4] * y, 0);
    if (n_bases <= 9) return;
    set(9, kC3[0] * y * (3 * x * x - y * y), kC3[0] * 6 * x * y, kC3[0] * (3 * x * x - 3 * y * y),
        0);
    set(10, kC3[1] * x * y * z, kC3[1] * y * z, kC3[1] * x * z, kC3[1] * x * y);
    set(11, kC3[2] * y * (4 * z * z - x * x - y * y), -2 * kC3[2] * x * y,
        kC3[2] * (4 * z * z - x * x - 3 * y * y), 8 * kC3[2] * y * z);
    set(12, kC3[3] * z * (2 * z * z - 3 * x * x - 3 * y * y), -6 * kC3[3] * x * z,
        -6 * kC3[3] * y * z, kC3[3] * (6 * z * z - 3 * x * x - 3 * y * y));
    set(13, kC3[4] * x * (4 * z * z - x * x - y * y), kC3[4] * (4 * z * z - 3 * x * x - y * y),
        -2 * kC3[4] * x * y, 8 * kC3[4] * x * z);
    set(14, kC3[5] * z * (x * x - y * y), 2 * kC3[5] * x * z, -2 * kC3[5] * y * z,
        kC3[5] * (x * x - y * y));
    set(15, kC3[6] * x * (x * x - 3 * y * y), kC3[6] * (3 * x * x - 3 * y * y),
        -6 * kC3[6] * x * y, 0);
}

// Per-splat cached geometry shared by forward and backward.
struct PreSplat {
    bool valid = false;
    Eigen::Vector3d p_cam;
    Eigen::Vector2d uv;
    Eigen::Matrix2d cov2;    // before antialias
    Eigen::Matrix2d cov2aa;  // after antialias
    Eigen::Matrix2d conic;   // inverse of cov2aa
    double rho = 0.0;        // antialias opacity compensation
    double alpha_eff = 0.0;
    double depth = 0.0;
    Eigen::Vector3d dir;     // unit view direction at the splat mean
    double dist = 0.0;       // |mean - cam center|
    Eigen::Vector3d c_srgb;  // SH output
    Eigen::Vector3d c_lin;   // after inverse sRGB
    int tx0 = 0, tx1 = 0, ty0 = 0, ty1 = 0;  // tile range, half-open
};

struct Binning {
    std::vector<PreSplat> pre;
    std::vector<int> order;                    // splat indices sorted by (depth, index)
    std::vector<std::vector<int>> tile_lists;  // per tile, entries in depth order
    int tiles_x = 0, tiles_y = 0;
};

Binning preprocess_and_bin(const std::vector<GaussianSlice>& slices, const CameraFrame& cam,
                           bool srgb_colors) {
    Binning bin;
    bin.tiles_x = (cam.width + kTileSize - 1) / kTileSize;
    bin.tiles_y = (cam.height + kTileSize - 1) / kTileSize;
    bin.pre.resize(slices.size());

    const Eigen::Matrix3d rc = cam.rotation_matrix();
    const Eigen::Vector3d cam_center = cam.center();

#pragma omp parallel for schedule(static)
    for (long long ii = 0; ii < static_cast<long long>(slices.size()); ++ii) {
        const size_t i = static_cast<size_t>(ii);
        const GaussianSlice& s = slices[i];
        PreSplat& p = bin.pre[i];
        const Eigen::Vector3d pc = rc * s.mean + cam.translation;
        if (pc.z() <= kZNear) continue;
        p.p_cam = pc;
        p.depth = pc.z();
        p.uv = {cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy};

        const Eigen::Vector4d& q = s.rotation;
        const Eigen::Matrix3d r3 =
            Eigen::Quaterniond(q[0], q[1], q[2], q[3]).toRotationMatrix();
        const Eigen::Matrix3d m = r3 * s.scale.asDiagonal();
        const Eigen::Matrix3d cov3 = m * m.transpose();
        const Eigen::Matrix3d covc = rc * cov3 * rc.transpose();

        Eigen::Matrix<double, 2, 3> j = Eigen::Matrix<double, 2, 3>::Zero();
        const double z = pc.z();
        j(0, 0) = cam.fx / z;
        j(0, 2) = -cam.fx * pc.x() / (z * z);
        j(1, 1) = cam.fy / z;
        j(1, 2) = -cam.fy * pc.y() / (z * z);
        p.cov2 = j * covc * j.transpose();
        p.cov2aa = p.cov2 + kAntialiasSigma * kAntialiasSigma * Eigen::Matrix2d::Identity();

        const double det = p.cov2.determinant();
        const double det_aa = p.cov2aa.determinant();
        if (det <= 0.0 || det_aa <= 0.0) continue;
        p.rho = std::sqrt(det / det_aa);
        p.alpha_eff = s.opacity * p.rho;
        if (p.alpha_eff < kAlphaMin) continue;
        p.conic = p.cov2aa.inverse();

        p.dist = (s.mean - cam_center).norm();
        if (p.dist < 1e-12) continue;
        p.dir = (s.mean - cam_center) / p.dist;
        const int n_bases = sh_band_count(s.sh->size());
        double basis[16];
        sh_basis(p.dir, n_bases, basis);
        p.c_srgb.setZero();
        for (int k = 0; k < n_bases; ++k)
            for (int ch = 0; ch < 3; ++ch) p.c_srgb[ch] += (*s.sh)[3 * k + ch] * basis[k];
        for (int ch = 0; ch < 3; ++ch)
            p.c_lin[ch] = srgb_colors ? colorspace::srgb_inverse(p.c_srgb[ch]) : p.c_srgb[ch];

        // 3-sigma bounding box from the largest eigenvalue of the dilated covariance.
        const double mid = 0.5 * (p.cov2aa(0, 0) + p.cov2aa(1, 1));
        const double disc = std::sqrt(std::max(0.0, mid * mid - det_aa));
        const double radius = 3.0 * std::sqrt(std::max(mid + disc, 1e-12));
        const double x0 = p.uv.x() - radius, x1 = p.uv.x() + radius;
        const double y0 = p.uv.y() - radius, y1 = p.uv.y() + radius;
        if (x1 < 0 || y1 < 0 || x0 >= cam.width || y0 >= cam.height) continue;
        p.tx0 = std::clamp(static_cast<int>(std::floor(x0 / kTileSize)), 0, bin.tiles_x - 1);
        p.tx1 = std::clamp(static_cast<int>(std::floor(x1 / kTileSize)), 0, bin.tiles_x - 1) + 1;
        p.ty0 = std::clamp(static_cast<int>(std::floor(y0 / kTileSize)), 0, bin.tiles_y - 1);
        p.ty1 = std::clamp(static_cast<int>(std::floor(y1 / kTileSize)), 0, bin.tiles_y - 1) + 1;
        p.valid = true;
    }

    bin.order.reserve(slices.size());
    for (size_t i = 0; i < slices.size(); ++i)
        if (bin.pre[i].valid) bin.order.push_back(static_cast<int>(i));
    std::sort(bin.order.begin(), bin.order.end(), [&](int a, int b) {
        if (bin.pre[a].depth != bin.pre[b].depth) return bin.pre[a].depth < bin.pre[b].depth;
        return a < b;  // stable tie-break by primitive index
    });

    bin.tile_lists.resize(static_cast<size_t>(bin.tiles_x) * bin.tiles_y);
    for (int idx : bin.order) {
        const PreSplat& p = bin.pre[idx];
        for (int ty = p.ty0; ty < p.ty1; ++ty)
            for (int tx = p.tx0; tx < p.tx1; ++tx)
                bin.tile_lists[static_cast<size_t>(ty) * bin.tiles_x + tx].push_back(idx);
    }
    return bin;
}

// Footprint alpha at a pixel center; returns false when cut off.
inline bool splat_alpha(const PreSplat& p, double px, double py, double& alpha, double& gexp) {
    const double dx = px - p.uv.x();
    const double dy = py - p.uv.y();
    const double power = -0.5 * (p.conic(0, 0) * dx * dx + p.conic(1, 1) * dy * dy) -
                         p.conic(0, 1) * dx * dy;
    if (power < -kFootprintCutoff) return false;
    gexp = std::exp(std::min(power, 0.0));
    alpha = p.alpha_eff * gexp;
    if (alpha < kAlphaMin) return false;
    alpha = std::min(alpha, kAlphaMax);
    return true;
}

void dump_splats(const std::string& path, const Binning& bin) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write splat dump: " + path);
    out << "index,depth,u,v,cov_xx,cov_xy,cov_yy,opacity,r,g,b\n";
    for (int idx : bin.order) {
        const PreSplat& p = bin.pre[idx];
        out << idx << "," << p.depth << "," << p.uv.x() << "," << p.uv.y() << ","
            << p.cov2aa(0, 0) << "," << p.cov2aa(0, 1) << "," << p.cov2aa(1, 1) << ","
            << p.alpha_eff << "," << p.c_lin[0] << "," << p.c_lin[1] << "," << p.c_lin[2]
            << "\n";
    }
}

// dL/dq for the rotation matrix of a unit quaternion (w,x,y,z).
Eigen::Vector4d quat_rotation_grad(const Eigen::Vector4d& q, const Eigen::Matrix3d& g) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Eigen::Vector4d d;
    d[0] = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) +
                  x * g(2, 1));
    d[1] = 2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2) +
                  z * g(2, 0) + w * g(2, 1) - 2 * x * g(2, 2));
    d[2] = 2.0 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) -
                  w * g(2, 0) + z * g(2, 1) - 2 * y * g(2, 2));
    d[3] = 2.0 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1) +
                  y * g(1, 2) + x * g(2, 0) + y * g(2, 1));
    return d;
}

}  // namespace

Eigen::Vector3d evaluate_sh(const std::vector<double>& sh, const Eigen::Vector3d& dir) {
    const int n_bases = sh_band_count(sh.size());
    double basis[16];
    sh_basis(dir, n_bases, basis);
    Eigen::Vector3d out = Eigen::Vector3d::Zero();
    for (int k = 0; k < n_bases; ++k)
        for (int ch = 0; ch < 3; ++ch) out[ch] += sh[3 * k + ch] * basis[k];
    return out;
}

ShGrad evaluate_sh_grad(const std::vector<double>& sh, const Eigen::Vector3d& dir,
                        const Eigen::Vector3d& upstream_rgb) {
    const int n_bases = sh_band_count(sh.size());
    double basis[16];
    double dbasis[16][3];
    sh_basis(dir, n_bases, basis, dbasis);
    ShGrad g;
    g.d_sh.assign(sh.size(), 0.0);
    for (int k = 0; k < n_bases; ++k) {
        for (int ch = 0; ch < 3; ++ch) {
            g.d_sh[3 * k + ch] = upstream_rgb[ch] * basis[k];
            for (int a = 0; a < 3; ++a)
                g.d_dir[a] += upstream_rgb[ch] * sh[3 * k + ch] * dbasis[k][a];
        }
    }
    return g;
}

std::vector<double> rasterize_raw(const std::vector<GaussianSlice>& slices,
                                  const CameraFrame& cam, const Eigen::Vector3d& background,
                                  const std::string& debug_splat_csv, bool srgb_colors) {
    const int w = cam.width, h = cam.height;
    std::vector<double> img(static_cast<size_t>(w) * h * 4, 0.0);
    Binning bin = preprocess_and_bin(slices, cam, srgb_colors);
    if (!debug_splat_csv.empty()) dump_splats(debug_splat_csv, bin);

    const long long n_tiles = static_cast<long long>(bin.tile_lists.size());
#pragma omp parallel for schedule(dynamic)
    for (long long t = 0; t < n_tiles; ++t) {
        const auto& list = bin.tile_lists[static_cast<size_t>(t)];
        const int tx = static_cast<int>(t % bin.tiles_x);
        const int ty = static_cast<int>(t / bin.tiles_x);
        const int x_lo = tx * kTileSize, x_hi = std::min(x_lo + kTileSize, w);
        const int y_lo = ty * kTileSize, y_hi = std::min(y_lo + kTileSize, h);
        for (int y = y_lo; y < y_hi; ++y) {
            for (int x = x_lo; x < x_hi; ++x) {
                const double px = x + 0.5, py = y + 0.5;
                double T = 1.0;
                Eigen::Vector3d c = Eigen::Vector3d::Zero();
                for (int idx : list) {
                    const PreSplat& p = bin.pre[idx];
                    double alpha, gexp;
                    if (!splat_alpha(p, px, py, alpha, gexp)) continue;
                    c += T * alpha * p.c_lin;
                    T *= 1.0 - alpha;
                    if (T < kTransmittanceStop) break;
                }
                double* out = img.data() + (static_cast<size_t>(y) * w + x) * 4;
                out[0] = c[0] + T * background[0];
                out[1] = c[1] + T * background[1];
                out[2] = c[2] + T * background[2];
                out[3] = 1.0 - T;
            }
        }
    }
    return img;
}

ImageBuffer rasterize(const std::vector<GaussianSlice>& slices, const CameraFrame& cam,
                      const Eigen::Vector3d& background, const std::string& debug_splat_csv,
                      bool srgb_colors) {
    const std::vector<double> raw =
        rasterize_raw(slices, cam, background, debug_splat_csv, srgb_colors);
    ImageBuffer out(cam.width, cam.height, ColorSpace::LinearHDR);
    for (size_t i = 0; i < raw.size(); ++i) out.data[i] = static_cast<float>(raw[i]);
    return out;
}

RasterGrads rasterize_backward(const std::vector<GaussianSlice>& slices, const CameraFrame& cam,
                               const Eigen::Vector3d& background,
                               const std::vector<double>& upstream, bool srgb_colors) {
    const int w = cam.width, h = cam.height;
    if (upstream.size() != static_cast<size_t>(w) * h * 4)
        throw std::invalid_argument("rasterize_backward: upstream size mismatch");

    Binning bin = preprocess_and_bin(slices, cam, srgb_colors);

    // Per-tile partial gradients: 9 doubles per (tile, local splat) slot
    // (dmean2D, dconic a/b/c, dalpha_eff, dcolor).
    const size_t n_tiles = bin.tile_lists.size();
    std::vector<std::vector<double>> tile_grads(n_tiles);

    struct Contrib {
        int local;
        double alpha;
        double gexp;
        double T;  // transmittance at entry
        bool clamped;
    };

#pragma omp parallel for schedule(dynamic)
    for (long long t = 0; t < static_cast<long long>(n_tiles); ++t) {
        const auto& list = bin.tile_lists[static_cast<size_t>(t)];
        if (list.empty()) continue;
        auto& g = tile_grads[static_cast<size_t>(t)];
        g.assign(list.size() * 9, 0.0);
        std::vector<Contrib> contribs;
        const int tx = static_cast<int>(t % bin.tiles_x);
        const int ty = static_cast<int>(t / bin.tiles_x);
        const int x_lo = tx * kTileSize, x_hi = std::min(x_lo + kTileSize, w);
        const int y_lo = ty * kTileSize, y_hi = std::min(y_lo + kTileSize, h);
        for (int y = y_lo; y < y_hi; ++y) {
            for (int x = x_lo; x < x_hi; ++x) {
                const double px = x + 0.5, py = y + 0.5;
                contribs.clear();
                double T = 1.0;
                for (size_t li = 0; li < list.size(); ++li) {
                    const PreSplat& p = bin.pre[list[li]];
                    double alpha, gexp;
                    if (!splat_alpha(p, px, py, alpha, gexp)) continue;
                    const bool clamped = p.alpha_eff * gexp > kAlphaMax;
                    contribs.push_back({static_cast<int>(li), alpha, gexp, T, clamped});
                    T *= 1.0 - alpha;
                    if (T < kTransmittanceStop) break;
                }
                const double* up = upstream.data() + (static_cast<size_t>(y) * w + x) * 4;
                const Eigen::Vector3d g_rgb(up[0], up[1], up[2]);
                const double g_a = up[3];
                Eigen::Vector3d s_rgb = T * background;  // suffix incl. background term
                double s_a = 0.0;
                for (size_t k = contribs.size(); k-- > 0;) {
                    const Contrib& cb = contribs[k];
                    const PreSplat& p = bin.pre[list[cb.local]];
                    double* slot = g.data() + static_cast<size_t>(cb.local) * 9;
                    // color gradient
                    const double wgt = cb.T * cb.alpha;
                    slot[6] += g_rgb[0] * wgt;
                    slot[7] += g_rgb[1] * wgt;
                    slot[8] += g_rgb[2] * wgt;
                    // alpha gradient
                    const double one_m = 1.0 - cb.alpha;
                    double d_alpha =
                        g_rgb.dot(cb.T * p.c_lin - s_rgb / one_m) + g_a * (cb.T - s_a / one_m);
                    if (cb.clamped) d_alpha = 0.0;
                    // alpha = alpha_eff * exp(power)
                    slot[5] += d_alpha * cb.gexp;
                    const double d_power = d_alpha * cb.alpha;
                    const double dx = px - p.uv.x(), dy = py - p.uv.y();
                    // power = -0.5(a dx^2 + c dy^2) - b dx dy
                    slot[0] += d_power * (p.conic(0, 0) * dx + p.conic(0, 1) * dy);
                    slot[1] += d_power * (p.conic(1, 1) * dy + p.conic(0, 1) * dx);
                    slot[2] += d_power * (-0.5 * dx * dx);
                    slot[3] += d_power * (-dx * dy);
                    slot[4] += d_power * (-0.5 * dy * dy);
                    // update suffixes
                    s_rgb += wgt * p.c_lin;
                    s_a += wgt;
                }
            }
        }
    }

    // Deterministic reduction in fixed tile order.
    std::vector<std::array<double, 9>> acc(slices.size(), std::array<double, 9>{});
    for (size_t t = 0; t < n_tiles; ++t) {
        if (tile_grads[t].empty()) continue;
        const auto& list = bin.tile_lists[t];
        for (size_t li = 0; li < list.size(); ++li) {
            const double* slot = tile_grads[t].data() + li * 9;
            auto& a = acc[static_cast<size_t>(list[li])];
            for (int k = 0; k < 9; ++k) a[k] += slot[k];
        }
    }

    RasterGrads out;
    out.slices.assign(slices.size(), SliceGrad{});
    out.sh.resize(slices.size());
    for (size_t i = 0; i < slices.size(); ++i) out.sh[i].assign(slices[i].sh->size(), 0.0);

    const Eigen::Matrix3d rc = cam.rotation_matrix();
    const Eigen::Vector3d cam_center = cam.center();

#pragma omp parallel for schedule(static)
    for (long long ii = 0; ii < static_cast<long long>(slices.size()); ++ii) {
        const size_t i = static_cast<size_t>(ii);
        const PreSplat& p = bin.pre[i];
        if (!p.valid) continue;
        const auto& a = acc[i];
        const GaussianSlice& s = slices[i];
        SliceGrad& sg = out.slices[i];

        const Eigen::Vector2d d_uv(a[0], a[1]);
        Eigen::Matrix2d d_conic;
        d_conic << a[2], a[3] / 2.0, a[3] / 2.0, a[4];
        const double d_alpha_eff = a[5];
        const Eigen::Vector3d d_color(a[6], a[7], a[8]);

        // conic = inv(cov2aa)
        Eigen::Matrix2d d_cov2aa = -p.conic * d_conic * p.conic;
        // rho = sqrt(det(cov2)/det(cov2aa)); alpha_eff = opacity * rho
        sg.opacity = d_alpha_eff * p.rho;
        const double d_rho = d_alpha_eff * s.opacity;
        const Eigen::Matrix2d cov2_inv = p.cov2.inverse();
        Eigen::Matrix2d d_cov2 =
            d_cov2aa + 0.5 * d_rho * p.rho * (cov2_inv - p.conic);

        // cov2 = J covc J^T
        const Eigen::Vector4d& q = s.rotation;
        const Eigen::Matrix3d r3 =
            Eigen::Quaterniond(q[0], q[1], q[2], q[3]).toRotationMatrix();
        const Eigen::Matrix3d m = r3 * s.scale.asDiagonal();
        const Eigen::Matrix3d cov3 = m * m.transpose();
        const Eigen::Matrix3d covc = rc * cov3 * rc.transpose();
        const double z = p.p_cam.z();
        Eigen::Matrix<double, 2, 3> j = Eigen::Matrix<double, 2, 3>::Zero();
        j(0, 0) = cam.fx / z;
        j(0, 2) = -cam.fx * p.p_cam.x() / (z * z);
        j(1, 1) = cam.fy / z;
        j(1, 2) = -cam.fy * p.p_cam.y() / (z * z);

        const Eigen::Matrix3d d_covc = j.transpose() * d_cov2 * j;
        const Eigen::Matrix<double, 2, 3> d_j = 2.0 * d_cov2 * j * covc;

        // mean gradient through projection and through J
        Eigen::Vector3d d_pcam = Eigen::Vector3d::Zero();
        d_pcam.x() += d_uv.x() * cam.fx / z + d_j(0, 2) * (-cam.fx / (z * z));
        d_pcam.y() += d_uv.y() * cam.fy / z + d_j(1, 2) * (-cam.fy / (z * z));
        d_pcam.z() += -d_uv.x() * cam.fx * p.p_cam.x() / (z * z) -
                      d_uv.y() * cam.fy * p.p_cam.y() / (z * z) +
                      d_j(0, 0) * (-cam.fx / (z * z)) + d_j(1, 1) * (-cam.fy / (z * z)) +
                      d_j(0, 2) * (2.0 * cam.fx * p.p_cam.x() / (z * z * z)) +
                      d_j(1, 2) * (2.0 * cam.fy * p.p_cam.y() / (z * z * z));
        sg.mean = rc.transpose() * d_pcam;

        // covariance chain to rotation and scale
        const Eigen::Matrix3d d_cov3 = rc.transpose() * d_covc * rc;
        const Eigen::Matrix3d d_m = 2.0 * d_cov3 * m;
        const Eigen::Matrix3d rt_dm = r3.transpose() * d_m;
        sg.scale = Eigen::Vector3d(rt_dm(0, 0), rt_dm(1, 1), rt_dm(2, 2));
        const Eigen::Matrix3d d_r3 = d_m * s.scale.asDiagonal();
        sg.rotation = quat_rotation_grad(q, d_r3);

        // color chain: upstream -> inverse sRGB -> SH -> (sh coeffs, view dir)
        Eigen::Vector3d d_srgb;
        for (int ch = 0; ch < 3; ++ch)
            d_srgb[ch] = srgb_colors
                             ? d_color[ch] * colorspace::srgb_inverse_deriv(p.c_srgb[ch])
                             : d_color[ch];
        ShGrad shg = evaluate_sh_grad(*s.sh, p.dir, d_srgb);
        out.sh[i] = std::move(shg.d_sh);
        // dir = (mean - center)/dist
        sg.mean += (shg.d_dir - p.dir * p.dir.dot(shg.d_dir)) / p.dist;
    }
    return out;
}

}  // namespace polysplat::splatter
