// Copyright Contributors to the PolySplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <random>
#include <string>
#include <vector>

#include "polysplat/camera.hpp"
#include "polysplat/gaussian4d.hpp"
#include "polysplat/image.hpp"
#include "polysplat/io.hpp"
#include "polysplat/photometric.hpp"

namespace polysplat::trainer {

struct DivergenceError : std::runtime_error {
    explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

/// One contiguous frame range trained as an independent model.
struct Segment {
    double t_a = 0.0, t_b = 0.0;
    int budget = 0;
    std::vector<PolyGaussian> gaussians;
    std::vector<PhotometricGrid> grids;  // one per training camera, ids ascending
};

struct TrainConfig {
    double lambda_e = 10.0;
    double lambda_b = 0.05;
    double ssim_weight = 0.2;
    int iterations = 5000;
    int budget = 1000;
    int densify_interval = 500;
    uint64_t seed = 0;

    bool optimize_grids = true;
    bool linear_colors = false;  // ablation: train (store, composite, fit) in linear color
    double scene_extent = 1.0;   // scales the position learning rate

    double lr_mean = 1.6e-4;     // x scene_extent; higher polynomial orders x0.1 per order
    double lr_rotation = 1e-3;
    double lr_log_scale = 5e-3;
    double lr_opacity = 5e-2;    // opacity logit and log-lambda
    double lr_sh = 2.5e-3;
    double lr_grids = 1e-3;
    double grad_clip = 10.0;     // L2 norm cap per attribute group

    Eigen::Vector3d background = Eigen::Vector3d::Zero();
    int eval_interval = 500;     // held-out PSNR logging cadence (0 disables)
};

/// One ground-truth observation: a camera at a frame plus its image
/// (UnboundedSRGB). cam.frame is the time coordinate.
struct TrainView {
    CameraFrame cam;
    ImageBuffer image;
};

/// Adaptive-moment optimizer state for one flat parameter vector.
struct AdamState {
    std::vector<double> m, v;
    int t = 0;
};

/// One optimizer step (beta 0.9/0.999, eps 1e-15, bias corrected); clip > 0
/// caps the gradient L2 norm before the moment update.
void adam_update(std::vector<double>& w, const std::vector<double>& g, AdamState& state,
                 double lr, double clip = 0.0);

struct LossGrad {
    double value = 0.0;
    std::vector<float> grad;  // dL/dpred, RGBA layout with zero alpha slots
};

/// (1-w) L1 + w (1 - SSIM) over RGB, both images in unbounded sRGB.
LossGrad recon_loss(const ImageBuffer& pred, const ImageBuffer& gt, double ssim_weight);

/// L_recon + lambda_e L_exposure + lambda_b L_black.
double total_loss(double recon, double exposure, double black, const TrainConfig& cfg);

/// Distance to the 3rd nearest neighbor for every point (grid accelerated).
std::vector<double> third_neighbor_distances(const std::vector<Eigen::Vector3d>& points);

/// Seeds primitives from a dense point cloud at the segment-center frame:
/// static polynomials, identity rotation, isotropic 3rd-neighbor scale,
/// o0 = 0.1, long-lifespan opacity envelope, SH band 0 from the point color.
std::vector<PolyGaussian> init_from_points(const io::PointCloud& cloud, double t_center,
                                           int budget, const PolyDegrees& degrees,
                                           int sh_degree, uint64_t seed);

struct PruneStats {
    std::vector<size_t> relocated;  // indices teleported to a donor
    std::vector<size_t> donors;     // matching donor per relocation
};

/// Budget-conserving relocation: primitives with peak opacity below 0.005 are
/// teleported onto a donor drawn proportional to opacity; the donor opacity is
/// split as o_new = 1 - sqrt(1 - o_old) on both.
PruneStats prune_relocate(Segment& segment, std::mt19937_64& rng);

struct TrainResult {
    Segment segment;
    double final_loss = 0.0;
    double eval_psnr = 0.0;  // NaN when no eval views given
};

/// Full optimization loop over uniformly permuted (camera, frame) views.
/// eval_views are held out, compared without photometric adjustment (clean
/// ground truth). Deterministic under cfg.seed. Throws DivergenceError on NaN.
TrainResult train_segment(const std::vector<TrainView>& train_views,
                          const std::vector<TrainView>& eval_views,
                          std::vector<PolyGaussian> init, const TrainConfig& cfg,
                          const std::string& log_csv = {});

/// Renders a model along a camera path (identity photometric), unbounded sRGB
/// output, one image per path entry.
std::vector<ImageBuffer> render_path(const std::vector<PolyGaussian>& gaussians,
                                     const std::vector<CameraFrame>& path,
                                     const Eigen::Vector3d& background,
                                     bool linear_colors = false);

}  // namespace polysplat::trainer
