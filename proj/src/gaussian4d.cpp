// Copyright Contributors to the PolySplat Project
// SPDX-License-Identifier: Apache-2.0

#include "polysplat/gaussian4d.hpp"

#include <cmath>
#include <string>

namespace polysplat {

namespace {
constexpr double kMinQuatNorm = 1e-12;
}

PolyDegrees PolyGaussian::degrees() const {
    PolyDegrees d;
    d.n_mu = static_cast<uint8_t>(mu_coeffs.size() - 1);
    d.n_q = static_cast<uint8_t>(q_coeffs.size() - 1);
    d.n_s = static_cast<uint8_t>(s_coeffs.size() - 1);
    d.n_o = static_cast<uint8_t>(lambdas.size());
    return d;
}

int PolyGaussian::sh_degree() const {
    int n = static_cast<int>(sh.size()) / 3;
    int l = 0;
    while ((l + 1) * (l + 1) < n) ++l;
    return l;
}

DegenerateRotationError::DegenerateRotationError(size_t idx)
    : std::runtime_error("degenerate rotation: quaternion norm below 1e-12 at index " +
                         std::to_string(idx)),
      index(idx) {}

GaussianSlice evaluate(const PolyGaussian& g, double t) {
    const double tau = t - g.t0;

    GaussianSlice s;
    s.mean.setZero();
    double p = 1.0;
    for (const auto& mu : g.mu_coeffs) {
        s.mean += mu * p;
        p *= tau;
    }

    Eigen::Vector4d q_raw = Eigen::Vector4d::Zero();
    p = 1.0;
    for (const auto& q : g.q_coeffs) {
        q_raw += q * p;
        p *= tau;
    }
    const double qn = q_raw.norm();
    if (qn < kMinQuatNorm) throw DegenerateRotationError(0);
    s.rotation = q_raw / qn;

    Eigen::Vector3d log_s = Eigen::Vector3d::Zero();
    p = 1.0;
    for (const auto& sc : g.s_coeffs) {
        log_s += sc * p;
        p *= tau;
    }
    s.scale = log_s.array().exp();

    double expo = 0.0;
    const double tau2 = tau * tau;
    p = tau2;
    for (double lam : g.lambdas) {
        expo += lam * p;
        p *= tau2;
    }
    s.opacity = g.o0 * std::exp(-0.5 * expo);
    s.sh = &g.sh;
    return s;
}

std::vector<GaussianSlice> evaluate_batch(const std::vector<PolyGaussian>& gs, double t) {
    std::vector<GaussianSlice> out;
    out.reserve(gs.size());
    for (size_t i = 0; i < gs.size(); ++i) {
        try {
            out.push_back(evaluate(gs[i], t));
        } catch (DegenerateRotationError&) {
            throw DegenerateRotationError(i);
        }
    }
    return out;
}

PolyGaussianGrad evaluate_grad(const PolyGaussian& g, double t, const SliceGrad& up) {
    const double tau = t - g.t0;
    PolyGaussianGrad grad;

    grad.mu_coeffs.resize(g.mu_coeffs.size());
    double p = 1.0;
    for (size_t i = 0; i < g.mu_coeffs.size(); ++i) {
        grad.mu_coeffs[i] = up.mean * p;
        p *= tau;
    }

    // Rotation: backprop through q / |q|.
    Eigen::Vector4d q_raw = Eigen::Vector4d::Zero();
    p = 1.0;
    for (const auto& q : g.q_coeffs) {
        q_raw += q * p;
        p *= tau;
    }
    const double qn = q_raw.norm();
    if (qn < kMinQuatNorm) throw DegenerateRotationError(0);
    const Eigen::Vector4d q_unit = q_raw / qn;
    const Eigen::Vector4d d_qraw = (up.rotation - q_unit * q_unit.dot(up.rotation)) / qn;
    grad.q_coeffs.resize(g.q_coeffs.size());
    p = 1.0;
    for (size_t i = 0; i < g.q_coeffs.size(); ++i) {
        grad.q_coeffs[i] = d_qraw * p;
        p *= tau;
    }

    // Scale: d exp(log_s)/d s_i = scale * tau^i.
    Eigen::Vector3d log_s = Eigen::Vector3d::Zero();
    p = 1.0;
    for (const auto& sc : g.s_coeffs) {
        log_s += sc * p;
        p *= tau;
    }
    const Eigen::Vector3d scale = log_s.array().exp();
    const Eigen::Vector3d d_logs = up.scale.cwiseProduct(scale);
    grad.s_coeffs.resize(g.s_coeffs.size());
    p = 1.0;
    for (size_t i = 0; i < g.s_coeffs.size(); ++i) {
        grad.s_coeffs[i] = d_logs * p;
        p *= tau;
    }

    double expo = 0.0;
    const double tau2 = tau * tau;
    p = tau2;
    std::vector<double> pow_tau2(g.lambdas.size());
    for (size_t i = 0; i < g.lambdas.size(); ++i) {
        pow_tau2[i] = p;
        expo += g.lambdas[i] * p;
        p *= tau2;
    }
    const double env = std::exp(-0.5 * expo);
    grad.o0 = up.opacity * env;
    grad.lambdas.resize(g.lambdas.size());
    for (size_t i = 0; i < g.lambdas.size(); ++i)
        grad.lambdas[i] = up.opacity * g.o0 * env * (-0.5 * pow_tau2[i]);

    return grad;
}

}  // namespace polysplat
