// Copyright Contributors to the PolySplat Project
// SPDX-License-Identifier: Apache-2.0

#include "polysplat/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <unordered_map>

#include "polysplat/colorspace.hpp"
#include "polysplat/metrics.hpp"
#include "polysplat/splatter.hpp"

namespace polysplat::trainer {

namespace {

constexpr double kShC0 = 0.28209479177387814;
constexpr double kDeadOpacity = 0.005;
constexpr double kInitOpacity = 0.1;
constexpr double kInitLambda = 1e-4;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

// Deterministic uniform double in [0,1).
inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace

void adam_update(std::vector<double>& w, const std::vector<double>& g, AdamState& state,
                 double lr, double clip) {
    if (g.size() != w.size()) throw std::invalid_argument("adam_update: size mismatch");
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-15;
    state.m.resize(w.size(), 0.0);
    state.v.resize(w.size(), 0.0);
    ++state.t;
    double norm2 = 0.0;
    for (double x : g) norm2 += x * x;
    const double norm = std::sqrt(norm2);
    const double gscale = (clip > 0.0 && norm > clip) ? clip / norm : 1.0;
    const double c1 = 1.0 - std::pow(b1, state.t);
    const double c2 = 1.0 - std::pow(b2, state.t);
    for (size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i] * gscale;
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * gi;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * gi * gi;
        w[i] -= lr * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + eps);
    }
}

namespace {

// L1 + SSIM mix on whatever space the buffers carry; the public recon_loss
// enforces the tone-mapped tag, the linear ablation reuses the math as-is.
LossGrad recon_loss_untagged(const ImageBuffer& pred, const ImageBuffer& gt, double ssim_weight) {
    if (!pred.same_shape(gt)) throw std::invalid_argument("recon_loss: size mismatch");

    LossGrad out;
    out.grad.assign(pred.data.size(), 0.0f);
    const double n = 3.0 * pred.pixel_count();
    double l1 = 0.0;
    for (size_t i = 0; i < pred.pixel_count(); ++i)
        for (int c = 0; c < 3; ++c) {
            const double d = static_cast<double>(pred.data[i * 4 + c]) - gt.data[i * 4 + c];
            l1 += std::fabs(d);
            out.grad[i * 4 + c] =
                static_cast<float>((1.0 - ssim_weight) * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) / n);
        }
    l1 /= n;
    out.value = (1.0 - ssim_weight) * l1;

    if (ssim_weight > 0.0) {
        const double s = metrics::ssim_raw(pred, gt);
        out.value += ssim_weight * (1.0 - s);
        const std::vector<float> sg = metrics::ssim_raw_grad(pred, gt);
        for (size_t i = 0; i < out.grad.size(); ++i)
            out.grad[i] -= static_cast<float>(ssim_weight) * sg[i];
    }
    return out;
}

}  // namespace

LossGrad recon_loss(const ImageBuffer& pred, const ImageBuffer& gt, double ssim_weight) {
    if (pred.space != ColorSpace::UnboundedSRGB || gt.space != ColorSpace::UnboundedSRGB)
        throw std::invalid_argument("recon_loss: images must be unbounded sRGB");
    return recon_loss_untagged(pred, gt, ssim_weight);
}

double total_loss(double recon, double exposure, double black, const TrainConfig& cfg) {
    return recon + cfg.lambda_e * exposure + cfg.lambda_b * black;
}

std::vector<double> third_neighbor_distances(const std::vector<Eigen::Vector3d>& points) {
    const size_t n = points.size();
    if (n < 4) throw std::invalid_argument("third_neighbor_distances: need at least 4 points");

    Eigen::Vector3d lo = points[0], hi = points[0];
    for (const auto& p : points) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const Eigen::Vector3d span = (hi - lo).cwiseMax(1e-9);
    const double cell = std::max(std::cbrt(span.prod() / static_cast<double>(n)), 1e-9);

    auto cell_of = [&](const Eigen::Vector3d& p) {
        return Eigen::Vector3i{static_cast<int>((p.x() - lo.x()) / cell),
                               static_cast<int>((p.y() - lo.y()) / cell),
                               static_cast<int>((p.z() - lo.z()) / cell)};
    };
    auto key_of = [](const Eigen::Vector3i& c) {
        return (static_cast<uint64_t>(static_cast<uint32_t>(c.x())) << 42) ^
               (static_cast<uint64_t>(static_cast<uint32_t>(c.y())) << 21) ^
               static_cast<uint64_t>(static_cast<uint32_t>(c.z()));
    };
    std::unordered_map<uint64_t, std::vector<int>> grid;
    for (size_t i = 0; i < n; ++i) grid[key_of(cell_of(points[i]))].push_back(static_cast<int>(i));

    const int max_ring =
        static_cast<int>(std::ceil(span.maxCoeff() / cell)) + 1;
    std::vector<double> out(n);

#pragma omp parallel for schedule(dynamic, 64)
    for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
        const size_t i = static_cast<size_t>(ii);
        const Eigen::Vector3i c0 = cell_of(points[i]);
        double best[3] = {std::numeric_limits<double>::infinity(),
                          std::numeric_limits<double>::infinity(),
                          std::numeric_limits<double>::infinity()};
        auto consider = [&](int j) {
            if (static_cast<size_t>(j) == i) return;
            const double d = (points[static_cast<size_t>(j)] - points[i]).norm();
            if (d < best[0]) {
                best[2] = best[1];
                best[1] = best[0];
                best[0] = d;
            } else if (d < best[1]) {
                best[2] = best[1];
                best[1] = d;
            } else if (d < best[2]) {
                best[2] = d;
            }
        };
        for (int ring = 0; ring <= max_ring; ++ring) {
            for (int dz = -ring; dz <= ring; ++dz)
                for (int dy = -ring; dy <= ring; ++dy)
                    for (int dx = -ring; dx <= ring; ++dx) {
                        if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
                        const auto it = grid.find(key_of(c0 + Eigen::Vector3i{dx, dy, dz}));
                        if (it == grid.end()) continue;
                        for (int j : it->second) consider(j);
                    }
            // unexplored cells lie at least ring full cell widths away
            if (std::isfinite(best[2]) && best[2] <= ring * cell) break;
        }
        out[i] = best[2];
    }
    return out;
}

std::vector<PolyGaussian> init_from_points(const io::PointCloud& cloud, double t_center,
                                           int budget, const PolyDegrees& degrees,
                                           int sh_degree, uint64_t seed) {
    const size_t n = cloud.positions.size();
    if (n == 0) throw std::invalid_argument("init_from_points: empty point cloud");
    if (budget <= 0) throw std::invalid_argument("init_from_points: budget must be positive");

    std::vector<size_t> pick(n);
    std::iota(pick.begin(), pick.end(), size_t{0});
    if (n > static_cast<size_t>(budget)) {
        std::mt19937_64 rng(seed);
        std::shuffle(pick.begin(), pick.end(), rng);
        pick.resize(static_cast<size_t>(budget));
        std::sort(pick.begin(), pick.end());
    }

    std::vector<Eigen::Vector3d> positions(pick.size());
    for (size_t k = 0; k < pick.size(); ++k) positions[k] = cloud.positions[pick[k]];
    std::vector<double> nn3;
    if (positions.size() >= 4) nn3 = third_neighbor_distances(positions);

    const int sh_dim = 3 * (sh_degree + 1) * (sh_degree + 1);
    const bool has_colors = cloud.colors.size() == n;
    std::vector<PolyGaussian> out(pick.size());
    for (size_t k = 0; k < pick.size(); ++k) {
        PolyGaussian& g = out[k];
        g.mu_coeffs.assign(degrees.n_mu + 1, Eigen::Vector3d::Zero());
        g.mu_coeffs[0] = positions[k];
        g.q_coeffs.assign(degrees.n_q + 1, Eigen::Vector4d::Zero());
        g.q_coeffs[0] = Eigen::Vector4d(1, 0, 0, 0);
        const double scale = nn3.empty() ? 0.1 : std::max(nn3[k], 1e-6);
        g.s_coeffs.assign(degrees.n_s + 1, Eigen::Vector3d::Zero());
        g.s_coeffs[0].setConstant(std::log(scale));
        g.o0 = kInitOpacity;
        g.lambdas.assign(degrees.n_o, kInitLambda);
        g.t0 = t_center;
        g.sh.assign(sh_dim, 0.0);
        if (has_colors)
            for (int c = 0; c < 3; ++c) g.sh[c] = cloud.colors[pick[k]][c] / kShC0;
    }
    return out;
}

PruneStats prune_relocate(Segment& segment, std::mt19937_64& rng) {
    PruneStats stats;
    auto& gs = segment.gaussians;
    for (size_t i = 0; i < gs.size(); ++i) {
        if (gs[i].o0 >= kDeadOpacity) continue;
        double total = 0.0;
        for (size_t j = 0; j < gs.size(); ++j)
            if (gs[j].o0 >= kDeadOpacity) total += gs[j].o0;
        if (total <= 0.0) break;
        const double u = uniform01(rng) * total;
        size_t donor = gs.size();
        double acc = 0.0;
        for (size_t j = 0; j < gs.size(); ++j) {
            if (gs[j].o0 < kDeadOpacity) continue;
            acc += gs[j].o0;
            if (u < acc) {
                donor = j;
                break;
            }
        }
        if (donor == gs.size()) continue;  // numeric edge, skip
        const double o_new = 1.0 - std::sqrt(1.0 - gs[donor].o0);
        gs[i] = gs[donor];
        gs[i].o0 = o_new;
        gs[donor].o0 = o_new;
        stats.relocated.push_back(i);
        stats.donors.push_back(donor);
    }
    return stats;
}

// ---- flat parameter storage with adaptive-moment updates ----

namespace {

struct Group {
    std::vector<double> w, g, m, v;

    void init(size_t size) {
        w.assign(size, 0.0);
        g.assign(size, 0.0);
        m.assign(size, 0.0);
        v.assign(size, 0.0);
    }
};

void adam_step(Group& grp, double lr, int t, double clip) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-15;
    double norm2 = 0.0;
    for (double x : grp.g) norm2 += x * x;
    const double norm = std::sqrt(norm2);
    const double gscale = (clip > 0.0 && norm > clip) ? clip / norm : 1.0;
    const double c1 = 1.0 - std::pow(b1, t);
    const double c2 = 1.0 - std::pow(b2, t);
    for (size_t i = 0; i < grp.w.size(); ++i) {
        const double g = grp.g[i] * gscale;
        grp.m[i] = b1 * grp.m[i] + (1.0 - b1) * g;
        grp.v[i] = b2 * grp.v[i] + (1.0 - b2) * g * g;
        grp.w[i] -= lr * (grp.m[i] / c1) / (std::sqrt(grp.v[i] / c2) + eps);
    }
}

struct ParamBank {
    PolyDegrees degrees;
    int sh_dim = 0;
    size_t count = 0;
    std::vector<Group> mu;  // one group per polynomial order
    Group q, s, o_logit, log_lambda, sh;
    Group grid_b, grid_loge;  // all cameras concatenated
    std::vector<int> grid_ids;

    void from_model(const std::vector<PolyGaussian>& gs, const std::vector<PhotometricGrid>& grids) {
        count = gs.size();
        degrees = gs.empty() ? PolyDegrees{} : gs[0].degrees();
        sh_dim = gs.empty() ? 0 : static_cast<int>(gs[0].sh.size());
        mu.assign(degrees.n_mu + 1, Group{});
        for (auto& grp : mu) grp.init(count * 3);
        q.init(count * 4 * (degrees.n_q + 1));
        s.init(count * 3 * (degrees.n_s + 1));
        o_logit.init(count);
        log_lambda.init(count * degrees.n_o);
        sh.init(count * static_cast<size_t>(sh_dim));
        for (size_t i = 0; i < count; ++i) write_gaussian(i, gs[i]);

        grid_ids.clear();
        grid_b.init(grids.size() * kPhotometricGridSize * kPhotometricGridSize);
        grid_loge.init(grids.size() * kPhotometricGridSize * kPhotometricGridSize);
        for (size_t gi = 0; gi < grids.size(); ++gi) {
            grid_ids.push_back(grids[gi].camera_id);
            const size_t base = gi * kPhotometricGridSize * kPhotometricGridSize;
            for (int y = 0; y < kPhotometricGridSize; ++y)
                for (int x = 0; x < kPhotometricGridSize; ++x) {
                    grid_b.w[base + y * kPhotometricGridSize + x] = grids[gi].B(y, x);
                    grid_loge.w[base + y * kPhotometricGridSize + x] = std::log(grids[gi].E(y, x));
                }
        }
    }

    void write_gaussian(size_t i, const PolyGaussian& g) {
        for (int o = 0; o <= degrees.n_mu; ++o)
            for (int k = 0; k < 3; ++k) mu[o].w[i * 3 + k] = g.mu_coeffs[o][k];
        for (int o = 0; o <= degrees.n_q; ++o)
            for (int k = 0; k < 4; ++k) q.w[(i * (degrees.n_q + 1) + o) * 4 + k] = g.q_coeffs[o][k];
        for (int o = 0; o <= degrees.n_s; ++o)
            for (int k = 0; k < 3; ++k) s.w[(i * (degrees.n_s + 1) + o) * 3 + k] = g.s_coeffs[o][k];
        o_logit.w[i] = logit(std::clamp(g.o0, 1e-6, 1.0 - 1e-6));
        for (int o = 0; o < degrees.n_o; ++o)
            log_lambda.w[i * degrees.n_o + o] = std::log(std::max(g.lambdas[o], 1e-12));
        for (int k = 0; k < sh_dim; ++k) sh.w[i * sh_dim + k] = g.sh[k];
    }

    void read_gaussian(size_t i, PolyGaussian& g) const {
        for (int o = 0; o <= degrees.n_mu; ++o)
            for (int k = 0; k < 3; ++k) g.mu_coeffs[o][k] = mu[o].w[i * 3 + k];
        for (int o = 0; o <= degrees.n_q; ++o)
            for (int k = 0; k < 4; ++k) g.q_coeffs[o][k] = q.w[(i * (degrees.n_q + 1) + o) * 4 + k];
        for (int o = 0; o <= degrees.n_s; ++o)
            for (int k = 0; k < 3; ++k) g.s_coeffs[o][k] = s.w[(i * (degrees.n_s + 1) + o) * 3 + k];
        g.o0 = sigmoid(o_logit.w[i]);
        for (int o = 0; o < degrees.n_o; ++o)
            g.lambdas[o] = std::exp(log_lambda.w[i * degrees.n_o + o]);
        for (int k = 0; k < sh_dim; ++k) g.sh[k] = sh.w[i * sh_dim + k];
    }

    void read_grids(std::vector<PhotometricGrid>& grids) const {
        grids.resize(grid_ids.size());
        for (size_t gi = 0; gi < grid_ids.size(); ++gi) {
            grids[gi].camera_id = grid_ids[gi];
            grids[gi].B.resize(kPhotometricGridSize, kPhotometricGridSize);
            grids[gi].E.resize(kPhotometricGridSize, kPhotometricGridSize);
            const size_t base = gi * kPhotometricGridSize * kPhotometricGridSize;
            for (int y = 0; y < kPhotometricGridSize; ++y)
                for (int x = 0; x < kPhotometricGridSize; ++x) {
                    grids[gi].B(y, x) = grid_b.w[base + y * kPhotometricGridSize + x];
                    grids[gi].E(y, x) = std::exp(grid_loge.w[base + y * kPhotometricGridSize + x]);
                }
        }
    }

    void zero_grads() {
        for (auto& grp : mu) std::fill(grp.g.begin(), grp.g.end(), 0.0);
        std::fill(q.g.begin(), q.g.end(), 0.0);
        std::fill(s.g.begin(), s.g.end(), 0.0);
        std::fill(o_logit.g.begin(), o_logit.g.end(), 0.0);
        std::fill(log_lambda.g.begin(), log_lambda.g.end(), 0.0);
        std::fill(sh.g.begin(), sh.g.end(), 0.0);
        std::fill(grid_b.g.begin(), grid_b.g.end(), 0.0);
        std::fill(grid_loge.g.begin(), grid_loge.g.end(), 0.0);
    }

    void reset_moments(size_t i) {
        auto zero_range = [](Group& grp, size_t a, size_t len) {
            std::fill(grp.m.begin() + a, grp.m.begin() + a + len, 0.0);
            std::fill(grp.v.begin() + a, grp.v.begin() + a + len, 0.0);
        };
        for (auto& grp : mu) zero_range(grp, i * 3, 3);
        zero_range(q, i * 4 * (degrees.n_q + 1), 4 * (degrees.n_q + 1));
        zero_range(s, i * 3 * (degrees.n_s + 1), 3 * (degrees.n_s + 1));
        zero_range(o_logit, i, 1);
        zero_range(log_lambda, i * degrees.n_o, degrees.n_o);
        zero_range(sh, i * static_cast<size_t>(sh_dim), static_cast<size_t>(sh_dim));
    }
};

double eval_psnr_mean(const std::vector<PolyGaussian>& gaussians,
                      const std::vector<TrainView>& eval_views, const Eigen::Vector3d& bg,
                      bool linear_colors) {
    if (eval_views.empty()) return std::numeric_limits<double>::quiet_NaN();
    double sum = 0.0;
    for (const auto& view : eval_views) {
        const auto slices = evaluate_batch(gaussians, view.cam.frame);
        const ImageBuffer lin = splatter::rasterize(slices, view.cam, bg, {}, !linear_colors);
        ImageBuffer pred(lin.width, lin.height, ColorSpace::UnboundedSRGB);
        for (size_t i = 0; i < lin.pixel_count(); ++i) {
            for (int c = 0; c < 3; ++c)
                pred.data[i * 4 + c] =
                    static_cast<float>(colorspace::srgb_forward(lin.data[i * 4 + c]));
            pred.data[i * 4 + 3] = lin.data[i * 4 + 3];
        }
        sum += metrics::psnr(pred, view.image);
    }
    return sum / static_cast<double>(eval_views.size());
}

}  // namespace

TrainResult train_segment(const std::vector<TrainView>& train_views,
                          const std::vector<TrainView>& eval_views,
                          std::vector<PolyGaussian> init, const TrainConfig& cfg,
                          const std::string& log_csv) {
    if (train_views.empty()) throw std::invalid_argument("train_segment: no training views");
    if (init.empty()) throw std::invalid_argument("train_segment: empty initialization");

    TrainResult result;
    result.segment.budget = cfg.budget;
    result.segment.t_a = train_views[0].cam.frame;
    result.segment.t_b = train_views[0].cam.frame;
    std::vector<int> camera_ids;
    for (const auto& v : train_views) {
        result.segment.t_a = std::min(result.segment.t_a, static_cast<double>(v.cam.frame));
        result.segment.t_b = std::max(result.segment.t_b, static_cast<double>(v.cam.frame));
        if (std::find(camera_ids.begin(), camera_ids.end(), v.cam.camera_id) == camera_ids.end())
            camera_ids.push_back(v.cam.camera_id);
    }
    std::sort(camera_ids.begin(), camera_ids.end());

    std::vector<PhotometricGrid> grids;
    for (int id : camera_ids) grids.push_back(PhotometricGrid::identity(id));

    ParamBank bank;
    bank.from_model(init, grids);
    std::vector<PolyGaussian> gaussians = init;

    if (cfg.iterations == 0) {
        result.segment.gaussians = std::move(init);
        result.segment.grids = std::move(grids);
        result.eval_psnr =
            eval_psnr_mean(result.segment.gaussians, eval_views, cfg.background, cfg.linear_colors);
        return result;
    }

    std::ofstream log;
    if (!log_csv.empty()) {
        log.open(log_csv);
        if (!log) throw std::runtime_error("cannot write training log: " + log_csv);
        log << "iteration,loss,recon,exposure,black,eval_psnr\n";
    }

    std::mt19937_64 rng(cfg.seed);
    std::vector<size_t> perm(train_views.size());
    std::iota(perm.begin(), perm.end(), size_t{0});

    const int w_img = train_views[0].cam.width, h_img = train_views[0].cam.height;
    const bool srgb_colors = !cfg.linear_colors;
    double loss_value = 0.0;

    for (int it = 0; it < cfg.iterations; ++it) {
        if (it % static_cast<int>(perm.size()) == 0) std::shuffle(perm.begin(), perm.end(), rng);
        const TrainView& view = train_views[perm[static_cast<size_t>(it) % perm.size()]];
        const double t = view.cam.frame;

        for (size_t i = 0; i < bank.count; ++i) bank.read_gaussian(i, gaussians[i]);
        if (cfg.optimize_grids) bank.read_grids(grids);

        const auto slices = evaluate_batch(gaussians, t);
        const std::vector<double> raw =
            splatter::rasterize_raw(slices, view.cam, cfg.background, {}, srgb_colors);
        ImageBuffer render(w_img, h_img, ColorSpace::LinearHDR);
        for (size_t i = 0; i < raw.size(); ++i) render.data[i] = static_cast<float>(raw[i]);

        const size_t grid_idx = static_cast<size_t>(
            std::find(camera_ids.begin(), camera_ids.end(), view.cam.camera_id) -
            camera_ids.begin());
        Eigen::MatrixXd b_up, e_up;
        ImageBuffer adjusted = render;
        if (cfg.optimize_grids) {
            b_up = fft_upsample(grids[grid_idx].B, w_img, h_img);
            e_up = fft_upsample(grids[grid_idx].E, w_img, h_img);
            adjusted = apply_with_maps(render, b_up, e_up);
        }

        // The full pipeline fits in the tone-mapped space; the linear_colors
        // ablation moves the whole training color space (storage, compositing,
        // and the reconstruction loss) to linear instead.
        ImageBuffer pred(w_img, h_img,
                         srgb_colors ? ColorSpace::UnboundedSRGB : ColorSpace::LinearHDR);
        if (srgb_colors) {
            for (size_t i = 0; i < pred.pixel_count(); ++i) {
                for (int c = 0; c < 3; ++c)
                    pred.data[i * 4 + c] =
                        static_cast<float>(colorspace::srgb_forward(adjusted.data[i * 4 + c]));
                pred.data[i * 4 + 3] = adjusted.data[i * 4 + 3];
            }
        } else {
            pred.data = adjusted.data;
        }
        ImageBuffer target_lin(0, 0, ColorSpace::LinearHDR);
        if (!srgb_colors) {
            target_lin = ImageBuffer(w_img, h_img, ColorSpace::LinearHDR);
            for (size_t i = 0; i < target_lin.pixel_count(); ++i) {
                for (int c = 0; c < 3; ++c)
                    target_lin.data[i * 4 + c] =
                        static_cast<float>(colorspace::srgb_inverse(view.image.data[i * 4 + c]));
                target_lin.data[i * 4 + 3] = view.image.data[i * 4 + 3];
            }
        }
        const ImageBuffer& target = srgb_colors ? view.image : target_lin;

        const LossGrad lg = recon_loss_untagged(pred, target, cfg.ssim_weight);
        const double l_e = cfg.optimize_grids ? exposure_loss(grids) : 0.0;
        const double l_b = cfg.optimize_grids ? black_loss(grids) : 0.0;
        loss_value = total_loss(lg.value, l_e, l_b, cfg);
        if (!std::isfinite(loss_value))
            throw DivergenceError("loss diverged at iteration " + std::to_string(it));

        // backward through the display transfer (identity in the linear ablation)
        std::vector<float> d_adjusted(lg.grad.size(), 0.0f);
        for (size_t i = 0; i < pred.pixel_count(); ++i)
            for (int c = 0; c < 3; ++c)
                d_adjusted[i * 4 + c] = static_cast<float>(
                    srgb_colors ? lg.grad[i * 4 + c] *
                                      colorspace::srgb_forward_deriv(adjusted.data[i * 4 + c])
                                : lg.grad[i * 4 + c]);

        bank.zero_grads();

        std::vector<float> d_render;
        if (cfg.optimize_grids) {
            Eigen::MatrixXd d_b_up, d_e_up;
            apply_backward(render, b_up, e_up, d_adjusted, d_render, d_b_up, d_e_up);
            const Eigen::MatrixXd d_b = fft_upsample_adjoint(d_b_up, kPhotometricGridSize);
            const Eigen::MatrixXd d_e = fft_upsample_adjoint(d_e_up, kPhotometricGridSize);
            const auto reg_e = exposure_loss_grad(grids);
            const auto reg_b = black_loss_grad(grids);
            for (size_t gi = 0; gi < grids.size(); ++gi) {
                const size_t base = gi * kPhotometricGridSize * kPhotometricGridSize;
                for (int y = 0; y < kPhotometricGridSize; ++y)
                    for (int x = 0; x < kPhotometricGridSize; ++x) {
                        double db = cfg.lambda_b * reg_b[gi](y, x);
                        double de = cfg.lambda_e * reg_e[gi](y, x);
                        if (gi == grid_idx) {
                            db += d_b(y, x);
                            de += d_e(y, x);
                        }
                        bank.grid_b.g[base + y * kPhotometricGridSize + x] += db;
                        bank.grid_loge.g[base + y * kPhotometricGridSize + x] +=
                            de * grids[gi].E(y, x);
                    }
            }
        } else {
            d_render = d_adjusted;
        }

        std::vector<double> upstream(d_render.size());
        for (size_t i = 0; i < upstream.size(); ++i) upstream[i] = d_render[i];
        const splatter::RasterGrads rg =
            splatter::rasterize_backward(slices, view.cam, cfg.background, upstream, srgb_colors);

        const PolyDegrees& deg = bank.degrees;
        for (size_t i = 0; i < bank.count; ++i) {
            const PolyGaussianGrad pg = evaluate_grad(gaussians[i], t, rg.slices[i]);
            for (int o = 0; o <= deg.n_mu; ++o)
                for (int k = 0; k < 3; ++k) bank.mu[o].g[i * 3 + k] += pg.mu_coeffs[o][k];
            for (int o = 0; o <= deg.n_q; ++o)
                for (int k = 0; k < 4; ++k)
                    bank.q.g[(i * (deg.n_q + 1) + o) * 4 + k] += pg.q_coeffs[o][k];
            for (int o = 0; o <= deg.n_s; ++o)
                for (int k = 0; k < 3; ++k)
                    bank.s.g[(i * (deg.n_s + 1) + o) * 3 + k] += pg.s_coeffs[o][k];
            bank.o_logit.g[i] += pg.o0 * gaussians[i].o0 * (1.0 - gaussians[i].o0);
            for (int o = 0; o < deg.n_o; ++o)
                bank.log_lambda.g[i * deg.n_o + o] += pg.lambdas[o] * gaussians[i].lambdas[o];
            for (int k = 0; k < bank.sh_dim; ++k) bank.sh.g[i * bank.sh_dim + k] += rg.sh[i][k];
        }

        const int step = it + 1;
        // position learning rate decays exponentially to 1% over the run
        const double mean_decay =
            std::exp(std::log(0.01) * static_cast<double>(it) / cfg.iterations);
        for (int o = 0; o <= deg.n_mu; ++o)
            adam_step(bank.mu[o], cfg.lr_mean * cfg.scene_extent * std::pow(0.1, o) * mean_decay,
                      step, cfg.grad_clip);
        adam_step(bank.q, cfg.lr_rotation, step, cfg.grad_clip);
        adam_step(bank.s, cfg.lr_log_scale, step, cfg.grad_clip);
        adam_step(bank.o_logit, cfg.lr_opacity, step, cfg.grad_clip);
        adam_step(bank.log_lambda, cfg.lr_opacity, step, cfg.grad_clip);
        adam_step(bank.sh, cfg.lr_sh, step, cfg.grad_clip);
        if (cfg.optimize_grids) {
            adam_step(bank.grid_b, cfg.lr_grids, step, cfg.grad_clip);
            adam_step(bank.grid_loge, cfg.lr_grids, step, cfg.grad_clip);
        }

        if (cfg.densify_interval > 0 && step % cfg.densify_interval == 0 &&
            step < cfg.iterations) {
            for (size_t i = 0; i < bank.count; ++i) bank.read_gaussian(i, gaussians[i]);
            Segment tmp;
            tmp.gaussians = gaussians;
            const PruneStats stats = prune_relocate(tmp, rng);
            for (size_t k = 0; k < stats.relocated.size(); ++k) {
                bank.write_gaussian(stats.relocated[k], tmp.gaussians[stats.relocated[k]]);
                bank.reset_moments(stats.relocated[k]);
                bank.o_logit.w[stats.donors[k]] =
                    logit(std::clamp(tmp.gaussians[stats.donors[k]].o0, 1e-6, 1.0 - 1e-6));
            }
            gaussians = std::move(tmp.gaussians);
        }

        const bool do_eval = !eval_views.empty() && cfg.eval_interval > 0 &&
                             (step % cfg.eval_interval == 0 || step == cfg.iterations);
        double psnr_now = std::numeric_limits<double>::quiet_NaN();
        if (do_eval) {
            for (size_t i = 0; i < bank.count; ++i) bank.read_gaussian(i, gaussians[i]);
            psnr_now = eval_psnr_mean(gaussians, eval_views, cfg.background, cfg.linear_colors);
        }
        if (log) {
            log << step << "," << loss_value << "," << lg.value << "," << l_e << "," << l_b << ",";
            if (std::isfinite(psnr_now)) log << psnr_now;
            log << "\n";
        }
    }

    for (size_t i = 0; i < bank.count; ++i) bank.read_gaussian(i, gaussians[i]);
    bank.read_grids(grids);
    result.segment.gaussians = std::move(gaussians);
    result.segment.grids = std::move(grids);
    result.final_loss = loss_value;
    result.eval_psnr = eval_psnr_mean(result.segment.gaussians, eval_views, cfg.background,
                                      cfg.linear_colors);
    return result;
}

std::vector<ImageBuffer> render_path(const std::vector<PolyGaussian>& gaussians,
                                     const std::vector<CameraFrame>& path,
                                     const Eigen::Vector3d& background, bool linear_colors) {
    std::vector<ImageBuffer> out;
    out.reserve(path.size());
    for (const auto& cam : path) {
        const auto slices = evaluate_batch(gaussians, cam.frame);
        const ImageBuffer lin = splatter::rasterize(slices, cam, background, {}, !linear_colors);
        ImageBuffer img(lin.width, lin.height, ColorSpace::UnboundedSRGB);
        for (size_t i = 0; i < lin.pixel_count(); ++i) {
            for (int c = 0; c < 3; ++c)
                img.data[i * 4 + c] =
                    static_cast<float>(colorspace::srgb_forward(lin.data[i * 4 + c]));
            img.data[i * 4 + 3] = lin.data[i * 4 + 3];
        }
        out.push_back(std::move(img));
    }
    return out;
}

}  // namespace polysplat::trainer
