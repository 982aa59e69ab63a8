// Copyright Contributors to the PolySplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace polysplat {

/// Near-plane culling distance used by project() and the rasterizer.
constexpr double kZNear = 0.01;

/// Pinhole camera at one timestamp. Rotation maps world to camera coordinates;
/// translation is expressed in the camera frame (p_cam = R p_world + t).
struct CameraFrame {
    int camera_id = 0;
    int frame = 0;
    double fx = 0, fy = 0;
    double cx = 0, cy = 0;
    Eigen::Vector4d rotation{1, 0, 0, 0};  // unit quaternion (w,x,y,z), world->camera
    Eigen::Vector3d translation{0, 0, 0};
    int width = 0, height = 0;

    Eigen::Matrix3d rotation_matrix() const;
    /// Camera center in world coordinates (-R^T t).
    Eigen::Vector3d center() const;
};

struct BehindCameraError : std::runtime_error {
    BehindCameraError() : std::runtime_error("point behind camera near plane") {}
};

/// World point -> (pixel, depth). Throws BehindCameraError when z <= z_near.
std::pair<Eigen::Vector2d, double> project(const CameraFrame& cam, const Eigen::Vector3d& p);

enum class FocalBasis { Polynomial, CubicSpline };

/// Smooth per-camera focal-length trajectory fitted by least squares, used to
/// regularize per-frame focal estimates of zooming cameras.
struct FocalTrajectory {
    int camera_id = 0;
    FocalBasis basis = FocalBasis::CubicSpline;
    int degree = 3;               // polynomial degree, when basis == Polynomial
    int knots = 0;                // control-point count, when basis == CubicSpline
    double frame_min = 0, frame_max = 0;
    std::vector<double> coefficients;

    double operator()(double frame) const;
};

struct FocalBasisConfig {
    FocalBasis basis = FocalBasis::CubicSpline;
    int degree = 3;           // Polynomial only
    int frames_per_knot = 12; // CubicSpline only
};

struct IllPosedError : std::runtime_error {
    explicit IllPosedError(const std::string& what) : std::runtime_error(what) {}
};

struct FocalFit {
    FocalTrajectory trajectory;
    std::vector<double> residuals;  // per sample, focal - trajectory(frame)
};

/// Least-squares fit of a smooth function to (frame, focal) samples.
/// Throws IllPosedError when the system is rank deficient.
FocalFit fit_focal_trajectory(const std::vector<std::pair<double, double>>& samples,
                              const FocalBasisConfig& config, int camera_id = 0);

/// Mean squared deviation between per-frame focal estimates and the trajectory.
double focal_regularizer(const FocalTrajectory& traj,
                         const std::vector<std::pair<double, double>>& per_frame_focals);

/// Camera-path JSON (array of per-frame records) round trip.
std::vector<CameraFrame> load_camera_path(const std::string& path);
void save_camera_path(const std::string& path, const std::vector<CameraFrame>& cams);

}  // namespace polysplat
