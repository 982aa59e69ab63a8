// Copyright Contributors to the PolySplat Project
// SPDX-License-Identifier: Apache-2.0

#include "polysplat/camera.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace polysplat {

Eigen::Matrix3d CameraFrame::rotation_matrix() const {
    Eigen::Quaterniond q(rotation[0], rotation[1], rotation[2], rotation[3]);
    return q.normalized().toRotationMatrix();
}

Eigen::Vector3d CameraFrame::center() const {
    return -(rotation_matrix().transpose() * translation);
}

std::pair<Eigen::Vector2d, double> project(const CameraFrame& cam, const Eigen::Vector3d& p) {
    const Eigen::Vector3d pc = cam.rotation_matrix() * p + cam.translation;
    if (pc.z() <= kZNear) throw BehindCameraError();
    Eigen::Vector2d uv(cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy);
    return {uv, pc.z()};
}

namespace {

// Uniform cubic B-spline blending weights at local parameter t in [0,1].
void bspline_weights(double t, double w[4]) {
    const double t2 = t * t, t3 = t2 * t;
    w[0] = (1 - 3 * t + 3 * t2 - t3) / 6.0;
    w[1] = (4 - 6 * t2 + 3 * t3) / 6.0;
    w[2] = (1 + 3 * t + 3 * t2 - 3 * t3) / 6.0;
    w[3] = t3 / 6.0;
}

int spline_segments(const FocalTrajectory& traj) { return traj.knots - 3; }

// Row of the design matrix for one frame sample.
void basis_row(const FocalTrajectory& traj, double frame, Eigen::RowVectorXd& row) {
    row.setZero(traj.basis == FocalBasis::Polynomial ? traj.degree + 1 : traj.knots);
    if (traj.basis == FocalBasis::Polynomial) {
        // Frames mapped to [-1,1] for conditioning.
        const double span = std::max(traj.frame_max - traj.frame_min, 1e-12);
        const double u = 2.0 * (frame - traj.frame_min) / span - 1.0;
        double p = 1.0;
        for (int i = 0; i <= traj.degree; ++i) {
            row[i] = p;
            p *= u;
        }
    } else {
        const int segs = spline_segments(traj);
        const double span = std::max(traj.frame_max - traj.frame_min, 1e-12);
        double u = (frame - traj.frame_min) / span * segs;
        int seg = std::min(std::max(static_cast<int>(std::floor(u)), 0), segs - 1);
        double w[4];
        bspline_weights(u - seg, w);
        for (int j = 0; j < 4; ++j) row[seg + j] = w[j];
    }
}

}  // namespace

double FocalTrajectory::operator()(double frame) const {
    Eigen::RowVectorXd row;
    basis_row(*this, frame, row);
    double v = 0.0;
    for (Eigen::Index i = 0; i < row.size(); ++i) v += row[i] * coefficients[i];
    return v;
}

FocalFit fit_focal_trajectory(const std::vector<std::pair<double, double>>& samples,
                              const FocalBasisConfig& config, int camera_id) {
    if (samples.empty()) throw IllPosedError("no focal samples");

    FocalTrajectory traj;
    traj.camera_id = camera_id;
    traj.basis = config.basis;
    traj.degree = config.degree;
    traj.frame_min = samples.front().first;
    traj.frame_max = samples.front().first;
    for (const auto& [f, _] : samples) {
        traj.frame_min = std::min(traj.frame_min, f);
        traj.frame_max = std::max(traj.frame_max, f);
    }
    int dof;
    if (config.basis == FocalBasis::Polynomial) {
        dof = config.degree + 1;
    } else {
        const double span = std::max(traj.frame_max - traj.frame_min, 1.0);
        const int segs = std::max(1, static_cast<int>(std::lround(span / config.frames_per_knot)));
        traj.knots = segs + 3;
        dof = traj.knots;
    }
    if (static_cast<int>(samples.size()) < dof)
        throw IllPosedError("fewer samples than degrees of freedom");

    Eigen::MatrixXd A(samples.size(), dof);
    Eigen::VectorXd b(samples.size());
    Eigen::RowVectorXd row(dof);
    traj.coefficients.assign(dof, 0.0);
    for (size_t i = 0; i < samples.size(); ++i) {
        basis_row(traj, samples[i].first, row);
        A.row(static_cast<Eigen::Index>(i)) = row;
        b[static_cast<Eigen::Index>(i)] = samples[i].second;
    }

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
    qr.setThreshold(1e-10);
    if (qr.rank() < dof) throw IllPosedError("rank-deficient focal fit");
    Eigen::VectorXd c = qr.solve(b);
    for (int i = 0; i < dof; ++i) traj.coefficients[i] = c[i];

    FocalFit fit;
    fit.trajectory = traj;
    Eigen::VectorXd r = b - A * c;
    fit.residuals.assign(r.data(), r.data() + r.size());
    return fit;
}

double focal_regularizer(const FocalTrajectory& traj,
                         const std::vector<std::pair<double, double>>& per_frame_focals) {
    if (per_frame_focals.empty()) return 0.0;
    double acc = 0.0;
    for (const auto& [frame, focal] : per_frame_focals) {
        const double d = focal - traj(frame);
        acc += d * d;
    }
    return acc / static_cast<double>(per_frame_focals.size());
}

std::vector<CameraFrame> load_camera_path(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open camera path: " + path);
    nlohmann::json j;
    in >> j;
    std::vector<CameraFrame> cams;
    for (const auto& rec : j) {
        CameraFrame c;
        c.camera_id = rec.at("camera_id").get<int>();
        c.frame = rec.at("frame").get<int>();
        c.fx = rec.at("fx").get<double>();
        c.fy = rec.at("fy").get<double>();
        c.cx = rec.at("cx").get<double>();
        c.cy = rec.at("cy").get<double>();
        c.rotation = {rec.at("qw").get<double>(), rec.at("qx").get<double>(),
                      rec.at("qy").get<double>(), rec.at("qz").get<double>()};
        c.translation = {rec.at("tx").get<double>(), rec.at("ty").get<double>(),
                         rec.at("tz").get<double>()};
        c.width = rec.at("width").get<int>();
        c.height = rec.at("height").get<int>();
        cams.push_back(c);
    }
    return cams;
}

void save_camera_path(const std::string& path, const std::vector<CameraFrame>& cams) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& c : cams) {
        j.push_back({{"camera_id", c.camera_id},
                     {"frame", c.frame},
                     {"fx", c.fx},
                     {"fy", c.fy},
                     {"cx", c.cx},
                     {"cy", c.cy},
                     {"qw", c.rotation[0]},
                     {"qx", c.rotation[1]},
                     {"qy", c.rotation[2]},
                     {"qz", c.rotation[3]},
                     {"tx", c.translation[0]},
                     {"ty", c.translation[1]},
                     {"tz", c.translation[2]},
                     {"width", c.width},
                     {"height", c.height}});
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write camera path: " + path);
    out << j.dump(2) << "\n";
}

}  // namespace polysplat
