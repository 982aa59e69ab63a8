// Copyright Contributors to the PolySplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace polysplat {

/// Polynomial degrees of the time-dependent attributes (n_mu, n_q, n_s, n_o).
struct PolyDegrees {
    uint8_t n_mu = 2;
    uint8_t n_q = 1;
    uint8_t n_s = 0;
    uint8_t n_o = 2;

    bool operator==(const PolyDegrees&) const = default;
};

/// One 4D primitive: polynomial coefficients for mean/rotation/scale plus a
/// Gaussian opacity envelope around a temporal center t0. Spherical harmonics
/// are time-constant and stored in the unbounded-sRGB domain.
struct PolyGaussian {
    std::vector<Eigen::Vector3d> mu_coeffs;  // (n_mu+1) entries, world units / time^i
    std::vector<Eigen::Vector4d> q_coeffs;   // (n_q+1) entries, (w,x,y,z)
    std::vector<Eigen::Vector3d> s_coeffs;   // (n_s+1) entries, log-scale / time^i
    double o0 = 0.0;                         // base opacity in [0,1]
    std::vector<double> lambdas;             // n_o entries, >= 0, units time^(-2i)
    double t0 = 0.0;                         // temporal center
    std::vector<double> sh;                  // 3*(L+1)^2 coefficients, unbounded sRGB

    PolyDegrees degrees() const;
    int sh_degree() const;
};

/// The 3D Gaussian obtained by evaluating a primitive at a fixed time.
struct GaussianSlice {
    Eigen::Vector3d mean;
    Eigen::Vector4d rotation;  // unit quaternion (w,x,y,z)
    Eigen::Vector3d scale;     // strictly positive
    double opacity = 0.0;      // <= o0
    const std::vector<double>* sh = nullptr;  // borrowed from the primitive
};

/// Gradients with respect to a primitive's trainable fields. Lambda gradients
/// are with respect to the lambda values themselves (any exp parameterization
/// is the optimizer's concern). SH gradients pass through unchanged and are
/// not duplicated here.
struct PolyGaussianGrad {
    std::vector<Eigen::Vector3d> mu_coeffs;
    std::vector<Eigen::Vector4d> q_coeffs;
    std::vector<Eigen::Vector3d> s_coeffs;
    double o0 = 0.0;
    std::vector<double> lambdas;
};

/// Upstream gradient of a GaussianSlice (rotation gradient is with respect to
/// the normalized quaternion).
struct SliceGrad {
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    Eigen::Vector4d rotation = Eigen::Vector4d::Zero();
    Eigen::Vector3d scale = Eigen::Vector3d::Zero();
    double opacity = 0.0;
};

struct DegenerateRotationError : std::runtime_error {
    explicit DegenerateRotationError(size_t index);
    size_t index;
};

/// Evaluates the polynomial attributes at time t.
/// mean = sum mu_i (t-t0)^i; rotation = normalize(sum q_i (t-t0)^i);
/// scale = exp(sum s_i (t-t0)^i); opacity = o0 * exp(-0.5 sum lambda_i (t-t0)^(2i)).
GaussianSlice evaluate(const PolyGaussian& g, double t);

/// Elementwise evaluate; output order equals input order. A degenerate rotation
/// reports the offending index.
std::vector<GaussianSlice> evaluate_batch(const std::vector<PolyGaussian>& gs, double t);

/// Chain-rule gradients through evaluate (t0 held fixed).
PolyGaussianGrad evaluate_grad(const PolyGaussian& g, double t, const SliceGrad& upstream);

}  // namespace polysplat
