// Copyright Contributors to the PolySplat Project
// SPDX-License-Identifier: Apache-2.0

#include "polysplat/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "json.hpp"

#include "polysplat/colorspace.hpp"
#include "polysplat/io.hpp"
#include "polysplat/splatter.hpp"

namespace polysplat::synth {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr double kShC0 = 0.28209479177387814;

inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

// Box-Muller; avoids implementation-defined std::normal_distribution output.
inline double normal(std::mt19937_64& rng) {
    const double u1 = std::max(uniform01(rng), 1e-300);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::string camdir(int camera_id) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "cam%03d", camera_id);
    return buf;
}

std::string framefile(int frame) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "frame%03d", frame);
    return buf;
}

ImageBuffer to_unbounded_srgb(const ImageBuffer& linear) {
    ImageBuffer out(linear.width, linear.height, ColorSpace::UnboundedSRGB);
    for (size_t i = 0; i < linear.pixel_count(); ++i) {
        for (int c = 0; c < 3; ++c)
            out.data[i * 4 + c] =
                static_cast<float>(colorspace::srgb_forward(linear.data[i * 4 + c]));
        out.data[i * 4 + 3] = linear.data[i * 4 + 3];
    }
    return out;
}

}  // namespace

ModelContainer make_scene_model(const SyntheticSceneSpec& spec) {
    if (spec.gaussian_count <= 0) throw std::invalid_argument("synth: gaussian count must be > 0");
    std::mt19937_64 rng(spec.seed);

    ModelContainer model;
    model.degrees.n_mu = static_cast<uint8_t>(spec.motion_order);
    model.degrees.n_q = 1;
    model.degrees.n_s = 0;
    model.degrees.n_o = 2;
    model.sh_degree = 1;
    model.t_min = 0.0f;
    model.t_max = static_cast<float>(spec.frames - 1);
    const double t_center = 0.5 * (spec.frames - 1);

    model.gaussians.resize(static_cast<size_t>(spec.gaussian_count));
    for (auto& g : model.gaussians) {
        // position uniform in a ball of radius 0.8
        Eigen::Vector3d p;
        do {
            p = {uniform(rng, -0.8, 0.8), uniform(rng, -0.8, 0.8), uniform(rng, -0.8, 0.8)};
        } while (p.norm() > 0.8);
        g.mu_coeffs.assign(model.degrees.n_mu + 1, Eigen::Vector3d::Zero());
        g.mu_coeffs[0] = p;
        double amp = 0.04;  // per-frame drift, shrinking per order
        for (int o = 1; o <= model.degrees.n_mu; ++o) {
            for (int k = 0; k < 3; ++k) g.mu_coeffs[o][k] = uniform(rng, -amp, amp);
            amp *= 0.2;
        }
        Eigen::Vector4d q{normal(rng), normal(rng), normal(rng), normal(rng)};
        g.q_coeffs.assign(2, Eigen::Vector4d::Zero());
        g.q_coeffs[0] = q.normalized();
        for (int k = 0; k < 4; ++k) g.q_coeffs[1][k] = uniform(rng, -0.02, 0.02);
        g.s_coeffs.assign(1, Eigen::Vector3d::Zero());
        for (int k = 0; k < 3; ++k) g.s_coeffs[0][k] = uniform(rng, std::log(0.02), std::log(0.05));
        g.o0 = uniform(rng, 0.5, 0.95);
        g.lambdas = {uniform(rng, 1e-4, 2e-3), uniform(rng, 1e-6, 1e-5)};
        g.t0 = t_center + uniform(rng, -1.0, 1.0);
        g.sh.assign(3 * 4, 0.0);
        for (int c = 0; c < 3; ++c) g.sh[c] = uniform(rng, 0.2, 0.9) / kShC0;
        for (int k = 3; k < 12; ++k) g.sh[k] = uniform(rng, -0.15, 0.15);
    }

    for (int cam = 0; cam < spec.cameras; ++cam) {
        PhotometricGrid grid = PhotometricGrid::identity(cam);
        const double gain = uniform(rng, spec.gain_min, spec.gain_max);
        grid.E.setConstant(gain);
        if (spec.glare_amplitude > 0.0) {
            const double phi = uniform(rng, 0.0, 2.0 * M_PI);
            for (int y = 0; y < kPhotometricGridSize; ++y)
                for (int x = 0; x < kPhotometricGridSize; ++x) {
                    const double u = (x + 0.5) / kPhotometricGridSize - 0.5;
                    const double v = (y + 0.5) / kPhotometricGridSize - 0.5;
                    const double ramp = 0.5 + u * std::cos(phi) + v * std::sin(phi);
                    grid.B(y, x) = spec.glare_amplitude * ramp;
                }
        }
        model.grids.push_back(std::move(grid));
    }
    return model;
}

std::vector<CameraFrame> make_camera_ring(const SyntheticSceneSpec& spec) {
    std::vector<CameraFrame> out;
    for (int i = 0; i < spec.cameras; ++i) {
        const double theta = 2.0 * M_PI * i / spec.cameras;
        const Eigen::Vector3d pos{spec.ring_radius * std::cos(theta),
                                  spec.ring_radius * std::sin(theta), 0.6};
        const Eigen::Vector3d fwd = (-pos).normalized();
        const Eigen::Vector3d up{0, 0, 1};
        const Eigen::Vector3d x_cam = fwd.cross(up).normalized();
        const Eigen::Vector3d y_cam = fwd.cross(x_cam);
        Eigen::Matrix3d r;  // rows: camera axes in world coordinates
        r.row(0) = x_cam;
        r.row(1) = y_cam;
        r.row(2) = fwd;
        Eigen::Quaterniond q(r);
        q.normalize();
        if (q.w() < 0) q.coeffs() = -q.coeffs();

        CameraFrame cam;
        cam.camera_id = i;
        cam.fx = cam.fy = 0.75 * spec.width;
        cam.cx = 0.5 * spec.width;
        cam.cy = 0.5 * spec.height;
        cam.rotation = {q.w(), q.x(), q.y(), q.z()};
        cam.translation = -(r * pos);
        cam.width = spec.width;
        cam.height = spec.height;
        for (int f = 0; f < spec.frames; ++f) {
            cam.frame = f;
            out.push_back(cam);
        }
    }
    return out;
}

SceneManifest generate_scene(const SyntheticSceneSpec& spec, const std::string& out_dir) {
    if (spec.frames < 1 || spec.cameras < 1) throw std::invalid_argument("synth: empty scene");
    fs::create_directories(out_dir);
    const bool corrupted =
        spec.glare_amplitude > 0.0 || spec.gain_min != 1.0 || spec.gain_max != 1.0;

    SceneManifest m;
    m.root = out_dir;
    m.width = spec.width;
    m.height = spec.height;
    m.frames = spec.frames;
    for (int i = 0; i < spec.cameras; ++i) m.camera_ids.push_back(i);
    m.eval_camera_ids = {spec.cameras - 1};
    m.image_dir = "images";
    m.clean_dir = "clean";
    m.points_dir = "points";
    m.camera_path = "cameras.json";
    m.gt_model = "model_gt.p4gs";
    m.corrupted = corrupted;
    m.seed = spec.seed;

    const ModelContainer built = make_scene_model(spec);
    save_model(out_dir + "/" + m.gt_model, built);
    // round-trip so renders match a later re-render of the stored f32 model
    const ModelContainer model = load_model(out_dir + "/" + m.gt_model);

    const std::vector<CameraFrame> path = make_camera_ring(spec);
    save_camera_path(out_dir + "/" + m.camera_path, path);

    // per-camera corruption maps at full resolution
    std::vector<Eigen::MatrixXd> b_up(model.grids.size()), e_up(model.grids.size());
    for (size_t gi = 0; gi < model.grids.size(); ++gi) {
        b_up[gi] = fft_upsample(model.grids[gi].B, spec.width, spec.height);
        e_up[gi] = fft_upsample(model.grids[gi].E, spec.width, spec.height);
    }

    for (const auto& cam : path) {
        const auto slices = evaluate_batch(model.gaussians, cam.frame);
        const ImageBuffer linear =
            splatter::rasterize(slices, cam, Eigen::Vector3d::Zero());
        const ImageBuffer clean = to_unbounded_srgb(linear);

        const std::string cd = camdir(cam.camera_id);
        const std::string ff = framefile(cam.frame);
        fs::create_directories(out_dir + "/" + m.clean_dir + "/" + cd);
        fs::create_directories(out_dir + "/" + m.image_dir + "/" + cd);
        io::write_rgba_pair(out_dir + "/" + m.clean_dir + "/" + cd + "/" + ff, clean);

        if (corrupted) {
            const size_t gi = static_cast<size_t>(cam.camera_id);
            const ImageBuffer adjusted = apply_with_maps(linear, b_up[gi], e_up[gi]);
            io::write_rgba_pair(out_dir + "/" + m.image_dir + "/" + cd + "/" + ff,
                                to_unbounded_srgb(adjusted));
        } else {
            io::write_rgba_pair(out_dir + "/" + m.image_dir + "/" + cd + "/" + ff, clean);
        }
    }

    // dense per-frame point clouds sampled on the ground-truth primitives
    fs::create_directories(out_dir + "/" + m.points_dir);
    std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ull);
    for (int f = 0; f < spec.frames; ++f) {
        const auto slices = evaluate_batch(model.gaussians, f);
        io::PointCloud cloud;
        cloud.positions.reserve(static_cast<size_t>(spec.points_per_frame));
        cloud.colors.reserve(static_cast<size_t>(spec.points_per_frame));
        for (int p = 0; p < spec.points_per_frame; ++p) {
            const size_t j = std::min(static_cast<size_t>(uniform01(rng) * slices.size()),
                                      slices.size() - 1);
            Eigen::Vector3d pos = slices[j].mean;
            for (int k = 0; k < 3; ++k) pos[k] += 0.005 * normal(rng);
            cloud.positions.push_back(pos);
            Eigen::Vector3d color;
            for (int c = 0; c < 3; ++c)
                color[c] = std::clamp(model.gaussians[j].sh[c] * kShC0, 0.0, 1.0);
            cloud.colors.push_back(color);
        }
        io::write_ply(out_dir + "/" + m.points_dir + "/" + framefile(f) + ".ply", cloud);
    }

    json j;
    j["width"] = m.width;
    j["height"] = m.height;
    j["frames"] = m.frames;
    j["camera_ids"] = m.camera_ids;
    j["eval_camera_ids"] = m.eval_camera_ids;
    j["image_dir"] = m.image_dir;
    j["clean_dir"] = m.clean_dir;
    j["points_dir"] = m.points_dir;
    j["camera_path"] = m.camera_path;
    j["gt_model"] = m.gt_model;
    j["corrupted"] = m.corrupted;
    j["seed"] = m.seed;
    std::ofstream out(out_dir + "/manifest.json");
    if (!out) throw std::runtime_error("cannot write manifest: " + out_dir);
    out << j.dump(2) << "\n";
    return m;
}

SceneManifest load_manifest(const std::string& scene_dir) {
    std::ifstream in(scene_dir + "/manifest.json");
    if (!in) throw std::runtime_error("cannot open manifest: " + scene_dir + "/manifest.json");
    json j;
    in >> j;
    SceneManifest m;
    m.root = scene_dir;
    m.width = j.at("width").get<int>();
    m.height = j.at("height").get<int>();
    m.frames = j.at("frames").get<int>();
    m.camera_ids = j.at("camera_ids").get<std::vector<int>>();
    m.eval_camera_ids = j.at("eval_camera_ids").get<std::vector<int>>();
    m.image_dir = j.at("image_dir").get<std::string>();
    m.clean_dir = j.at("clean_dir").get<std::string>();
    m.points_dir = j.at("points_dir").get<std::string>();
    m.camera_path = j.at("camera_path").get<std::string>();
    m.gt_model = j.at("gt_model").get<std::string>();
    m.corrupted = j.at("corrupted").get<bool>();
    m.seed = j.at("seed").get<uint64_t>();
    return m;
}

std::string frame_base(const SceneManifest& m, int camera_id, int frame, bool clean) {
    return m.root + "/" + (clean ? m.clean_dir : m.image_dir) + "/" + camdir(camera_id) + "/" +
           framefile(frame);
}

std::vector<trainer::TrainView> load_views(const SceneManifest& m,
                                           const std::vector<int>& camera_ids, bool clean) {
    const std::vector<CameraFrame> path = load_camera_path(m.root + "/" + m.camera_path);
    std::vector<trainer::TrainView> views;
    for (const auto& cam : path) {
        if (std::find(camera_ids.begin(), camera_ids.end(), cam.camera_id) == camera_ids.end())
            continue;
        trainer::TrainView v;
        v.cam = cam;
        v.image = io::read_rgba_pair(frame_base(m, cam.camera_id, cam.frame, clean),
                                     ColorSpace::UnboundedSRGB);
        views.push_back(std::move(v));
    }
    return views;
}

SceneTraining train_on_scene(const SceneManifest& m, trainer::TrainConfig cfg,
                             const std::string& log_csv) {
    std::vector<int> train_ids;
    for (int id : m.camera_ids)
        if (std::find(m.eval_camera_ids.begin(), m.eval_camera_ids.end(), id) ==
            m.eval_camera_ids.end())
            train_ids.push_back(id);
    if (train_ids.size() < 2) throw std::runtime_error("need at least 2 training cameras");

    const auto train_views = load_views(m, train_ids, false);
    const auto eval_views = load_views(m, m.eval_camera_ids, true);

    const io::PointCloud cloud =
        io::read_ply(m.root + "/" + m.points_dir + "/" + framefile(m.frames / 2) + ".ply");
    Eigen::Vector3d lo = cloud.positions.at(0), hi = cloud.positions.at(0);
    for (const auto& p : cloud.positions) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    cfg.scene_extent = std::max((hi - lo).norm() * 0.5, 1e-6);

    auto init = trainer::init_from_points(cloud, 0.5 * (m.frames - 1), cfg.budget, PolyDegrees{},
                                          1, cfg.seed);
    SceneTraining out;
    out.result = trainer::train_segment(train_views, eval_views, std::move(init), cfg, log_csv);
    out.path = load_camera_path(m.root + "/" + m.camera_path);
    return out;
}

}  // namespace polysplat::synth
