// Copyright Contributors to the PolySplat Project
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <omp.h>
#include <random>

#include "doctest.h"
#include "polysplat/colorspace.hpp"
#include "polysplat/splatter.hpp"
#include "test_util.hpp"

using namespace polysplat;
namespace sp = polysplat::splatter;

namespace {

// Independent real SH basis oracle with constants recomputed from closed forms.
double sh_basis_oracle(int i, const Eigen::Vector3d& d) {
    const double x = d.x(), y = d.y(), z = d.z();
    const double c0 = 0.5 * std::sqrt(1.0 / M_PI);
    const double c1 = std::sqrt(3.0 / (4.0 * M_PI));
    const double c2a = 0.5 * std::sqrt(15.0 / M_PI);
    const double c2b = 0.25 * std::sqrt(5.0 / M_PI);
    const double c2c = 0.25 * std::sqrt(15.0 / M_PI);
    const double c3a = 0.25 * std::sqrt(35.0 / (2.0 * M_PI));
    const double c3b = 0.5 * std::sqrt(105.0 / M_PI);
    const double c3c = 0.25 * std::sqrt(21.0 / (2.0 * M_PI));
    const double c3d = 0.25 * std::sqrt(7.0 / M_PI);
    const double c3e = 0.25 * std::sqrt(105.0 / M_PI);
    switch (i) {
        case 0: return c0;
        case 1: return -c1 * y;
        case 2: return c1 * z;
        case 3: return -c1 * x;
        case 4: return c2a * x * y;
        case 5: return -c2a * y * z;
        case 6: return c2b * (2 * z * z - x * x - y * y);
        case 7: return -c2a * x * z;
        case 8: return c2c * (x * x - y * y);
        case 9: return -c3a * y * (3 * x * x - y * y);
        case 10: return c3b * x * y * z;
        case 11: return -c3c * y * (4 * z * z - x * x - y * y);
        case 12: return c3d * z * (2 * z * z - 3 * x * x - 3 * y * y);
        case 13: return -c3c * x * (4 * z * z - x * x - y * y);
        case 14: return c3e * z * (x * x - y * y);
        case 15: return -c3a * x * (x * x - 3 * y * y);
    }
    return 0.0;
}

CameraFrame axis_camera() {
    CameraFrame cam;
    cam.fx = cam.fy = 60.0;
    cam.cx = cam.cy = 31.5;  // optical axis lands on a pixel center
    cam.width = cam.height = 64;
    return cam;
}

// Slice collection with stable SH storage.
struct Scene {
    std::vector<std::vector<double>> shs;
    std::vector<GaussianSlice> slices;

    void add(const Eigen::Vector3d& mean, const Eigen::Vector4d& rot,
             const Eigen::Vector3d& scale, double opacity, std::vector<double> sh) {
        shs.push_back(std::move(sh));
        GaussianSlice s;
        s.mean = mean;
        s.rotation = rot.normalized();
        s.scale = scale;
        s.opacity = opacity;
        slices.push_back(s);
    }
    // pointers fixed up after all additions (vector may reallocate)
    const std::vector<GaussianSlice>& get() {
        for (size_t i = 0; i < slices.size(); ++i) slices[i].sh = &shs[i];
        return slices;
    }
};

Scene random_scene(int count, uint64_t seed, int sh_degree = 1) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Scene sc;
    const int bases = (sh_degree + 1) * (sh_degree + 1);
    for (int i = 0; i < count; ++i) {
        std::vector<double> sh(3 * bases);
        for (auto& c : sh) c = 0.3 * u(rng);
        sh[0] += 1.5;
        sh[1] += 1.5;
        sh[2] += 1.5;
        sc.add({0.5 * u(rng), 0.5 * u(rng), 2.0 + 0.5 * u(rng)},
               {1.0 + 0.2 * u(rng), 0.2 * u(rng), 0.2 * u(rng), 0.2 * u(rng)},
               {0.08 + 0.05 * std::fabs(u(rng)), 0.08 + 0.05 * std::fabs(u(rng)),
                0.08 + 0.05 * std::fabs(u(rng))},
               0.3 + 0.4 * std::fabs(u(rng)), std::move(sh));
    }
    return sc;
}

double l2_loss(const std::vector<double>& img, const std::vector<double>& target) {
    double acc = 0.0;
    for (size_t i = 0; i < img.size(); ++i) {
        const double d = img[i] - target[i];
        acc += d * d;
    }
    return acc;
}

}  // namespace

TEST_CASE("evaluate_sh: band 0 and isotropy") {
    const Eigen::Vector3d dir = Eigen::Vector3d(0.3, -0.2, 0.9).normalized();
    const Eigen::Vector3d c0 = sp::evaluate_sh({2.0, -1.0, 0.5}, dir);
    CHECK(c0.x() == doctest::Approx(2.0 * 0.2820948).epsilon(1e-6));
    CHECK(c0.y() == doctest::Approx(-1.0 * 0.2820948).epsilon(1e-6));
    CHECK(c0.z() == doctest::Approx(0.5 * 0.2820948).epsilon(1e-6));

    // degree 1 with only band 0 set: direction independent
    std::vector<double> sh(12, 0.0);
    sh[0] = 1.0;
    sh[1] = 2.0;
    sh[2] = 3.0;
    std::mt19937_64 rng(200);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const Eigen::Vector3d ref = sp::evaluate_sh(sh, Eigen::Vector3d::UnitZ());
    for (int i = 0; i < 20; ++i) {
        const Eigen::Vector3d d = Eigen::Vector3d(u(rng), u(rng), u(rng)).normalized();
        CHECK((sp::evaluate_sh(sh, d) - ref).norm() < 1e-12);
    }
}

TEST_CASE("evaluate_sh matches the tabulated basis oracle up to degree 3") {
    std::mt19937_64 rng(201);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> sh(3 * 16);
        for (auto& c : sh) c = u(rng);
        const Eigen::Vector3d d = Eigen::Vector3d(u(rng), u(rng), u(rng) + 1.5).normalized();
        Eigen::Vector3d expect = Eigen::Vector3d::Zero();
        for (int k = 0; k < 16; ++k)
            for (int ch = 0; ch < 3; ++ch) expect[ch] += sh[3 * k + ch] * sh_basis_oracle(k, d);
        CHECK((sp::evaluate_sh(sh, d) - expect).norm() < 1e-6);
    }
}

TEST_CASE("evaluate_sh_grad matches finite differences") {
    std::mt19937_64 rng(202);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> sh(3 * 9);
    for (auto& c : sh) c = u(rng);
    const Eigen::Vector3d dir = Eigen::Vector3d(0.2, 0.5, 1.0).normalized();
    const Eigen::Vector3d up(u(rng), u(rng), u(rng));
    const sp::ShGrad g = sp::evaluate_sh_grad(sh, dir, up);
    const double h = 1e-6;
    for (size_t i = 0; i < sh.size(); ++i) {
        auto shp = sh;
        shp[i] += h;
        auto shm = sh;
        shm[i] -= h;
        const double fd =
            up.dot(sp::evaluate_sh(shp, dir) - sp::evaluate_sh(shm, dir)) / (2 * h);
        CHECK(std::fabs(g.d_sh[i] - fd) < 1e-6);
    }
}

TEST_CASE("rasterize: empty scene is background with zero alpha") {
    const CameraFrame cam = axis_camera();
    const ImageBuffer black = sp::rasterize({}, cam, Eigen::Vector3d::Zero());
    CHECK(black.space == ColorSpace::LinearHDR);
    for (float v : black.data) CHECK(v == 0.0f);

    const ImageBuffer tinted = sp::rasterize({}, cam, {0.2, 0.3, 0.4});
    for (size_t i = 0; i < tinted.data.size(); i += 4) {
        CHECK(tinted.data[i + 0] == doctest::Approx(0.2).epsilon(1e-7));
        CHECK(tinted.data[i + 3] == 0.0f);
    }
}

TEST_CASE("rasterize: single on-axis splat closed form") {
    const CameraFrame cam = axis_camera();
    const double o = 0.7, s = 0.05, depth = 2.0;
    Scene sc;
    sc.add({0, 0, depth}, {1, 0, 0, 0}, {s, s, s}, o, {0.5 / 0.28209479177387814, 0.0, 0.0});

    const std::vector<double> img = sp::rasterize_raw(sc.get(), cam, Eigen::Vector3d::Zero());
    const double v = std::pow(cam.fx * s / depth, 2.0);  // isotropic screen variance
    const double rho = v / (v + sp::kAntialiasSigma * sp::kAntialiasSigma);
    const double alpha = o * rho;
    const size_t center = (31 * 64 + 31) * 4;
    CHECK(std::fabs(img[center + 3] - alpha) < 1e-5);
    const double c_lin = colorspace::srgb_inverse(0.5);
    CHECK(std::fabs(img[center + 0] - alpha * c_lin) < 1e-5);
    CHECK(std::fabs(img[center + 1]) < 1e-12);
}

TEST_CASE("rasterize: co-located splats composite front to back") {
    const CameraFrame cam = axis_camera();
    const double s = 0.05, depth = 2.0;
    const double v = std::pow(cam.fx * s / depth, 2.0);
    const double rho = v / (v + 0.09);
    Scene sc;
    sc.add({0, 0, depth}, {1, 0, 0, 0}, {s, s, s}, 0.5, {1.0, 1.0, 1.0});
    sc.add({0, 0, depth}, {1, 0, 0, 0}, {s, s, s}, 0.3, {1.0, 1.0, 1.0});
    const std::vector<double> img = sp::rasterize_raw(sc.get(), cam, Eigen::Vector3d::Zero());
    const double a1 = 0.5 * rho, a2 = 0.3 * rho;
    const size_t center = (31 * 64 + 31) * 4;
    CHECK(std::fabs(img[center + 3] - (1.0 - (1.0 - a1) * (1.0 - a2))) < 1e-5);
}

TEST_CASE("rasterize: deterministic across thread counts") {
    Scene sc = random_scene(40, 203);
    const CameraFrame cam = axis_camera();
    const int saved = omp_get_max_threads();
    omp_set_num_threads(1);
    const std::vector<double> img1 = sp::rasterize_raw(sc.get(), cam, {0.1, 0.1, 0.1});
    omp_set_num_threads(4);
    const std::vector<double> img4 = sp::rasterize_raw(sc.get(), cam, {0.1, 0.1, 0.1});
    const auto g1 = sp::rasterize_backward(sc.get(), cam, {0.1, 0.1, 0.1},
                                           std::vector<double>(img1.size(), 0.01));
    omp_set_num_threads(2);
    const auto g2 = sp::rasterize_backward(sc.get(), cam, {0.1, 0.1, 0.1},
                                           std::vector<double>(img1.size(), 0.01));
    omp_set_num_threads(saved);
    CHECK(img1 == img4);
    for (size_t i = 0; i < g1.slices.size(); ++i) {
        CHECK(g1.slices[i].mean == g2.slices[i].mean);
        CHECK(g1.slices[i].rotation == g2.slices[i].rotation);
        CHECK(g1.slices[i].scale == g2.slices[i].scale);
        CHECK(g1.slices[i].opacity == g2.slices[i].opacity);
        CHECK(g1.sh[i] == g2.sh[i]);
    }
}

TEST_CASE("rasterize: translation equivariance via principal point") {
    Scene sc = random_scene(25, 204);
    CameraFrame cam = axis_camera();
    const std::vector<double> img1 = sp::rasterize_raw(sc.get(), cam, Eigen::Vector3d::Zero());
    cam.cx += 1.0;
    const std::vector<double> img2 = sp::rasterize_raw(sc.get(), cam, Eigen::Vector3d::Zero());
    for (int y = 2; y < 62; ++y)
        for (int x = 2; x < 61; ++x)
            for (int c = 0; c < 4; ++c)
                CHECK(std::fabs(img2[(y * 64 + x + 1) * 4 + c] - img1[(y * 64 + x) * 4 + c]) <
                      1e-5);
}

TEST_CASE("rasterize: raising one opacity never lowers output alpha") {
    Scene sc = random_scene(15, 205);
    const CameraFrame cam = axis_camera();
    const std::vector<double> before = sp::rasterize_raw(sc.get(), cam, Eigen::Vector3d::Zero());
    sc.slices[7].opacity = std::min(1.0, sc.slices[7].opacity + 0.3);
    const std::vector<double> after = sp::rasterize_raw(sc.get(), cam, Eigen::Vector3d::Zero());
    for (size_t i = 3; i < before.size(); i += 4) CHECK(after[i] >= before[i] - 1e-12);
}

TEST_CASE("rasterize_backward: zero upstream gives zero gradients") {
    Scene sc = random_scene(10, 206);
    const CameraFrame cam = axis_camera();
    const auto g = sp::rasterize_backward(sc.get(), cam, Eigen::Vector3d::Zero(),
                                          std::vector<double>(64 * 64 * 4, 0.0));
    for (size_t i = 0; i < g.slices.size(); ++i) {
        CHECK(g.slices[i].mean.norm() == 0.0);
        CHECK(g.slices[i].rotation.norm() == 0.0);
        CHECK(g.slices[i].scale.norm() == 0.0);
        CHECK(g.slices[i].opacity == 0.0);
        for (double v : g.sh[i]) CHECK(v == 0.0);
    }
}

TEST_CASE("rasterize_backward: occluded splat receives no gradient") {
    Scene sc;
    for (int i = 0; i < 6; ++i)  // wide opaque stack drives transmittance below the stop
        sc.add({0, 0, 1.5 + 0.01 * i}, {1, 0, 0, 0}, {0.6, 0.6, 0.6}, 0.999, {1.0, 1.0, 1.0});
    sc.add({0, 0, 3.0}, {1, 0, 0, 0}, {0.15, 0.15, 0.15}, 0.8, {1.0, 1.0, 1.0});
    const CameraFrame cam = axis_camera();
    std::vector<double> upstream(64 * 64 * 4, 0.5);
    const auto g = sp::rasterize_backward(sc.get(), cam, Eigen::Vector3d::Zero(), upstream);
    const SliceGrad& rear = g.slices.back();
    CHECK(rear.mean.norm() < 1e-6);
    CHECK(rear.scale.norm() < 1e-6);
    CHECK(std::fabs(rear.opacity) < 1e-6);
}

TEST_CASE("rasterize_backward matches finite differences") {
    Scene sc = random_scene(4, 207, 1);
    CameraFrame cam = axis_camera();
    cam.width = cam.height = 48;
    cam.cx = cam.cy = 23.5;

    Scene target_sc = random_scene(4, 208, 1);
    const std::vector<double> target =
        sp::rasterize_raw(target_sc.get(), cam, Eigen::Vector3d::Zero());

    auto loss_of = [&](Scene& s) {
        return l2_loss(sp::rasterize_raw(s.get(), cam, Eigen::Vector3d::Zero()), target);
    };

    const std::vector<double> img = sp::rasterize_raw(sc.get(), cam, Eigen::Vector3d::Zero());
    std::vector<double> upstream(img.size());
    for (size_t i = 0; i < img.size(); ++i) upstream[i] = 2.0 * (img[i] - target[i]);
    const auto g = sp::rasterize_backward(sc.get(), cam, Eigen::Vector3d::Zero(), upstream);

    auto rel_check = [&](double analytic, double fd1, double fd2) {
        const double scale = std::max({std::fabs(fd1), std::fabs(analytic), 1e-3});
        // the rasterizer's hard footprint cutoffs make the loss piecewise smooth;
        // skip points where finite differences themselves are unstable
        if (std::fabs(fd1 - fd2) > 1e-3 * scale) return;
        CHECK(std::fabs(analytic - fd1) <= 1e-3 * scale);
    };
    auto fd_scalar = [&](double* field, double h) {
        const double orig = *field;
        *field = orig + h;
        const double fp = loss_of(sc);
        *field = orig - h;
        const double fm = loss_of(sc);
        *field = orig;
        return (fp - fm) / (2 * h);
    };

    for (size_t i = 0; i < sc.slices.size(); ++i) {
        for (int k = 0; k < 3; ++k)
            rel_check(g.slices[i].mean[k], fd_scalar(&sc.slices[i].mean[k], 1e-5),
                      fd_scalar(&sc.slices[i].mean[k], 5e-6));
        for (int k = 0; k < 3; ++k)
            rel_check(g.slices[i].scale[k], fd_scalar(&sc.slices[i].scale[k], 1e-5),
                      fd_scalar(&sc.slices[i].scale[k], 5e-6));
        rel_check(g.slices[i].opacity, fd_scalar(&sc.slices[i].opacity, 1e-5),
                  fd_scalar(&sc.slices[i].opacity, 5e-6));
        for (size_t k = 0; k < sc.shs[i].size(); ++k)
            rel_check(g.sh[i][k], fd_scalar(&sc.shs[i][k], 1e-4),
                      fd_scalar(&sc.shs[i][k], 5e-5));

        // rotation: compare tangent-projected gradient against a normalized
        // perturbation (the backward reports gradients at the unit quaternion)
        const Eigen::Vector4d q = sc.slices[i].rotation;
        const Eigen::Vector4d proj =
            g.slices[i].rotation - q * q.dot(g.slices[i].rotation);
        auto fd_rot = [&](int k, double h) {
            Eigen::Vector4d qp = q, qm = q;
            qp[k] += h;
            qm[k] -= h;
            sc.slices[i].rotation = qp.normalized();
            const double fp = loss_of(sc);
            sc.slices[i].rotation = qm.normalized();
            const double fm = loss_of(sc);
            sc.slices[i].rotation = q;
            return (fp - fm) / (2 * h);
        };
        for (int k = 0; k < 4; ++k) rel_check(proj[k], fd_rot(k, 1e-5), fd_rot(k, 5e-6));
    }
}
