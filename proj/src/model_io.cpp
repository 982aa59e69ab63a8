// Copyright Contributors to the PolySplat Project
// SPDX-License-Identifier: Apache-2.0

#include "polysplat/model_io.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

namespace polysplat {

namespace {

constexpr char kMagic[4] = {'P', '4', 'G', 'S'};

template <typename T>
void put(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::ifstream& in) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw std::runtime_error("truncated model container");
    return v;
}

void put_f32(std::ofstream& out, double v) { put(out, static_cast<float>(v)); }

}  // namespace

void save_model(const std::string& path, const ModelContainer& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write model: " + path);
    out.write(kMagic, 4);
    put<uint32_t>(out, kModelVersion);
    put<uint64_t>(out, model.gaussians.size());
    put(out, model.degrees.n_mu);
    put(out, model.degrees.n_q);
    put(out, model.degrees.n_s);
    put(out, model.degrees.n_o);
    put(out, model.sh_degree);
    put(out, model.t_min);
    put(out, model.t_max);

    const int sh_dim = 3 * (model.sh_degree + 1) * (model.sh_degree + 1);
    for (const auto& g : model.gaussians) {
        if (g.degrees() != model.degrees || static_cast<int>(g.sh.size()) != sh_dim)
            throw std::runtime_error("model container: inconsistent gaussian layout");
        for (const auto& mu : g.mu_coeffs)
            for (int k = 0; k < 3; ++k) put_f32(out, mu[k]);
        for (const auto& q : g.q_coeffs)
            for (int k = 0; k < 4; ++k) put_f32(out, q[k]);
        for (const auto& s : g.s_coeffs)
            for (int k = 0; k < 3; ++k) put_f32(out, s[k]);
        put_f32(out, g.o0);
        for (double l : g.lambdas) put_f32(out, l);
        put_f32(out, g.t0);
        for (double c : g.sh) put_f32(out, c);
    }

    std::vector<PhotometricGrid> grids = model.grids;
    std::sort(grids.begin(), grids.end(),
              [](const auto& a, const auto& b) { return a.camera_id < b.camera_id; });
    put<uint32_t>(out, static_cast<uint32_t>(grids.size()));
    for (const auto& grid : grids) {
        if (grid.B.rows() != kPhotometricGridSize || grid.B.cols() != kPhotometricGridSize)
            throw std::runtime_error("model container: grid must be 32x32");
        put<uint32_t>(out, static_cast<uint32_t>(grid.camera_id));
        for (int y = 0; y < kPhotometricGridSize; ++y)
            for (int x = 0; x < kPhotometricGridSize; ++x) put_f32(out, grid.B(y, x));
        for (int y = 0; y < kPhotometricGridSize; ++y)
            for (int x = 0; x < kPhotometricGridSize; ++x) put_f32(out, grid.E(y, x));
    }
}

ModelContainer load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open model: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("not a P4GS model container: " + path);
    const uint32_t version = get<uint32_t>(in);
    if (version != kModelVersion)
        throw std::runtime_error("unsupported model version " + std::to_string(version));

    ModelContainer model;
    const uint64_t count = get<uint64_t>(in);
    model.degrees.n_mu = get<uint8_t>(in);
    model.degrees.n_q = get<uint8_t>(in);
    model.degrees.n_s = get<uint8_t>(in);
    model.degrees.n_o = get<uint8_t>(in);
    model.sh_degree = get<uint8_t>(in);
    model.t_min = get<float>(in);
    model.t_max = get<float>(in);

    const int sh_dim = 3 * (model.sh_degree + 1) * (model.sh_degree + 1);
    model.gaussians.resize(count);
    for (auto& g : model.gaussians) {
        g.mu_coeffs.resize(model.degrees.n_mu + 1);
        for (auto& mu : g.mu_coeffs)
            for (int k = 0; k < 3; ++k) mu[k] = get<float>(in);
        g.q_coeffs.resize(model.degrees.n_q + 1);
        for (auto& q : g.q_coeffs)
            for (int k = 0; k < 4; ++k) q[k] = get<float>(in);
        g.s_coeffs.resize(model.degrees.n_s + 1);
        for (auto& s : g.s_coeffs)
            for (int k = 0; k < 3; ++k) s[k] = get<float>(in);
        g.o0 = get<float>(in);
        g.lambdas.resize(model.degrees.n_o);
        for (auto& l : g.lambdas) l = get<float>(in);
        g.t0 = get<float>(in);
        g.sh.resize(sh_dim);
        for (auto& c : g.sh) c = get<float>(in);
    }

    const uint32_t n_grids = get<uint32_t>(in);
    model.grids.resize(n_grids);
    for (auto& grid : model.grids) {
        grid.camera_id = static_cast<int>(get<uint32_t>(in));
        grid.B.resize(kPhotometricGridSize, kPhotometricGridSize);
        grid.E.resize(kPhotometricGridSize, kPhotometricGridSize);
        for (int y = 0; y < kPhotometricGridSize; ++y)
            for (int x = 0; x < kPhotometricGridSize; ++x) grid.B(y, x) = get<float>(in);
        for (int y = 0; y < kPhotometricGridSize; ++y)
            for (int x = 0; x < kPhotometricGridSize; ++x) grid.E(y, x) = get<float>(in);
    }
    return model;
}

}  // namespace polysplat
