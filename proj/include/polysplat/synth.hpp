// Copyright Contributors to the PolySplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "polysplat/camera.hpp"
#include "polysplat/model_io.hpp"
#include "polysplat/trainer.hpp"

namespace polysplat::synth {

/// Parameters of a procedurally generated ground-truth scene: a cloud of
/// moving Gaussians observed by a ring of inward-looking cameras, optionally
/// corrupted by per-camera exposure gain and an additive glare ramp.
struct SyntheticSceneSpec {
    int gaussian_count = 200;
    int motion_order = 2;  // polynomial degree of the mean trajectory
    int cameras = 8;
    double ring_radius = 2.5;
    int frames = 8;
    int width = 256, height = 256;
    double gain_min = 1.0, gain_max = 1.0;  // per-camera exposure corruption
    double glare_amplitude = 0.0;           // additive ramp peak, linear units
    int points_per_frame = 4000;
    uint64_t seed = 0;
};

/// On-disk layout of a generated (or captured) scene.
struct SceneManifest {
    std::string root;
    int width = 0, height = 0, frames = 0;
    std::vector<int> camera_ids;
    std::vector<int> eval_camera_ids;
    std::string image_dir, clean_dir, points_dir, camera_path, gt_model;
    bool corrupted = false;
    uint64_t seed = 0;
};

/// Samples the ground-truth model (gaussians plus per-camera corruption grids).
ModelContainer make_scene_model(const SyntheticSceneSpec& spec);

/// Camera ring for the spec; one CameraFrame per (camera, frame), camera-major.
std::vector<CameraFrame> make_camera_ring(const SyntheticSceneSpec& spec);

/// Writes the full scene: manifest.json, cameras.json, model_gt.p4gs,
/// clean/ and images/ frame pairs, and per-frame point clouds.
SceneManifest generate_scene(const SyntheticSceneSpec& spec, const std::string& out_dir);

SceneManifest load_manifest(const std::string& scene_dir);

/// Base path (without extension) of one frame image.
std::string frame_base(const SceneManifest& m, int camera_id, int frame, bool clean);

/// Loads views for the given cameras; clean selects the uncorrupted directory.
std::vector<trainer::TrainView> load_views(const SceneManifest& m,
                                           const std::vector<int>& camera_ids, bool clean);

struct SceneTraining {
    trainer::TrainResult result;
    std::vector<CameraFrame> path;  // full camera path of the scene
};

/// Trains a segment on a scene directory: non-eval cameras against the
/// (possibly corrupted) images, eval cameras held out against clean ground
/// truth, initialization from the center-frame point cloud.
SceneTraining train_on_scene(const SceneManifest& m, trainer::TrainConfig cfg,
                             const std::string& log_csv = {});

}  // namespace polysplat::synth
