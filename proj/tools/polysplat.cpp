// Copyright Contributors to the PolySplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: synth, train, render, pairgen, stabilize, eval.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "polysplat/io.hpp"
#include "polysplat/metrics.hpp"
#include "polysplat/model_io.hpp"
#include "polysplat/stabilizer.hpp"
#include "polysplat/synth.hpp"
#include "polysplat/trainer.hpp"

namespace fs = std::filesystem;
using namespace polysplat;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitDiverged = 4;

io::Config load_config(const std::string& path) {
    if (path.empty()) return io::Config::parse_string("");
    return io::Config::parse_file(path);
}

std::string frame_name(int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "frame%04d", i);
    return buf;
}

synth::SyntheticSceneSpec spec_from_config(const io::Config& cfg, uint64_t seed) {
    synth::SyntheticSceneSpec spec;
    spec.gaussian_count = static_cast<int>(cfg.get_int("synth.gaussians", spec.gaussian_count));
    spec.motion_order = static_cast<int>(cfg.get_int("synth.motion_order", spec.motion_order));
    spec.cameras = static_cast<int>(cfg.get_int("synth.cameras", spec.cameras));
    spec.ring_radius = cfg.get_double("synth.ring_radius", spec.ring_radius);
    spec.frames = static_cast<int>(cfg.get_int("synth.frames", spec.frames));
    spec.width = static_cast<int>(cfg.get_int("synth.width", spec.width));
    spec.height = static_cast<int>(cfg.get_int("synth.height", spec.height));
    spec.gain_min = cfg.get_double("synth.gain_min", spec.gain_min);
    spec.gain_max = cfg.get_double("synth.gain_max", spec.gain_max);
    spec.glare_amplitude = cfg.get_double("synth.glare_amplitude", spec.glare_amplitude);
    spec.points_per_frame =
        static_cast<int>(cfg.get_int("synth.points_per_frame", spec.points_per_frame));
    spec.seed = seed;
    return spec;
}

trainer::TrainConfig train_config(const io::Config& cfg, uint64_t seed) {
    trainer::TrainConfig tc;
    tc.iterations = static_cast<int>(cfg.get_int("train.iterations", tc.iterations));
    tc.budget = static_cast<int>(cfg.get_int("train.budget", tc.budget));
    tc.densify_interval =
        static_cast<int>(cfg.get_int("train.densify_interval", tc.densify_interval));
    tc.ssim_weight = cfg.get_double("train.ssim_weight", tc.ssim_weight);
    tc.lambda_e = cfg.get_double("train.lambda_e", tc.lambda_e);
    tc.lambda_b = cfg.get_double("train.lambda_b", tc.lambda_b);
    tc.optimize_grids = cfg.get_bool("train.optimize_grids", tc.optimize_grids);
    tc.linear_colors = cfg.get_bool("train.linear_colors", tc.linear_colors);
    tc.eval_interval = static_cast<int>(cfg.get_int("train.eval_interval", tc.eval_interval));
    tc.seed = seed;
    return tc;
}

void save_segment_model(const std::string& path, const trainer::Segment& seg) {
    ModelContainer model;
    if (!seg.gaussians.empty()) {
        model.degrees = seg.gaussians[0].degrees();
        model.sh_degree = static_cast<uint8_t>(seg.gaussians[0].sh_degree());
    }
    model.t_min = static_cast<float>(seg.t_a);
    model.t_max = static_cast<float>(seg.t_b);
    model.gaussians = seg.gaussians;
    model.grids = seg.grids;
    save_model(path, model);
}

void render_to_dir(const ModelContainer& model, const std::vector<CameraFrame>& path,
                   const std::string& out_dir) {
    fs::create_directories(out_dir);
    io::DirLock lock(out_dir);
    const auto frames =
        trainer::render_path(model.gaussians, path, Eigen::Vector3d::Zero());
    for (size_t i = 0; i < frames.size(); ++i)
        io::write_rgba_pair(out_dir + "/" + frame_name(static_cast<int>(i)), frames[i]);
}

int run(int argc, char** argv) {
    CLI::App app{"polysplat: dynamic Gaussian splat reconstruction pipeline"};
    app.require_subcommand(1);

    std::string config_path, out_dir, scene_dir, model_path, cameras_path, in_dir;
    std::string backend_name = "identity", backend_cmd;
    uint64_t seed = 0;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "TOML configuration file");
        cmd->add_option("--seed", seed, "random seed");
        cmd->add_option("--out", out_dir, "output directory")->required();
    };

    CLI::App* c_synth = app.add_subcommand("synth", "generate a synthetic scene");
    add_common(c_synth);

    CLI::App* c_train = app.add_subcommand("train", "optimize a model against a scene");
    add_common(c_train);
    c_train->add_option("--scene", scene_dir, "scene directory")->required();

    CLI::App* c_render = app.add_subcommand("render", "render a model along a camera path");
    add_common(c_render);
    c_render->add_option("--model", model_path, "model container")->required();
    c_render->add_option("--cameras", cameras_path, "camera path JSON")->required();

    CLI::App* c_pairgen = app.add_subcommand("pairgen", "train and render an LQ/HQ pair");
    add_common(c_pairgen);
    c_pairgen->add_option("--scene", scene_dir, "scene directory")->required();

    CLI::App* c_stab = app.add_subcommand("stabilize", "temporally stabilize a frame sequence");
    add_common(c_stab);
    c_stab->add_option("--in", in_dir, "input frame directory")->required();
    c_stab->add_option("--backend", backend_name, "identity|unsharp|flicker|subprocess");
    c_stab->add_option("--cmd", backend_cmd, "subprocess backend command");

    CLI::App* c_eval = app.add_subcommand("eval", "evaluate a model against a scene");
    add_common(c_eval);
    c_eval->add_option("--scene", scene_dir, "scene directory")->required();
    c_eval->add_option("--model", model_path, "model container")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << app.help() << "\n";
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }

    try {
        const io::Config cfg = load_config(config_path);

        if (c_synth->parsed()) {
            fs::create_directories(out_dir);
            io::DirLock lock(out_dir);
            const auto m = synth::generate_scene(spec_from_config(cfg, seed), out_dir);
            std::cout << "scene written to " << m.root << "\n";
        } else if (c_train->parsed()) {
            fs::create_directories(out_dir);
            io::DirLock lock(out_dir);
            const auto m = synth::load_manifest(scene_dir);
            const auto st = synth::train_on_scene(m, train_config(cfg, seed), out_dir + "/log.csv");
            save_segment_model(out_dir + "/model.p4gs", st.result.segment);
            std::cout << "final loss " << st.result.final_loss << ", eval psnr "
                      << st.result.eval_psnr << " dB\n";
        } else if (c_render->parsed()) {
            const ModelContainer model = load_model(model_path);
            const auto path = load_camera_path(cameras_path);
            render_to_dir(model, path, out_dir);
            std::cout << path.size() << " frames written\n";
        } else if (c_pairgen->parsed()) {
            fs::create_directories(out_dir);
            io::DirLock lock(out_dir);
            const auto m = synth::load_manifest(scene_dir);
            trainer::TrainConfig tc = train_config(cfg, seed);

            const int lq_min = static_cast<int>(cfg.get_int("pairgen.lq_budget_min", 500));
            const int lq_max = static_cast<int>(cfg.get_int("pairgen.lq_budget_max", 2000));
            const int hq_budget = static_cast<int>(cfg.get_int("pairgen.hq_budget", 20000));
            if (lq_min <= 0 || lq_max < lq_min)
                throw std::invalid_argument("bad LQ budget range");
            std::mt19937_64 rng(seed);
            const int lq_budget =
                lq_min + static_cast<int>(rng() % static_cast<uint64_t>(lq_max - lq_min + 1));

            trainer::TrainConfig lq_cfg = tc;
            lq_cfg.budget = lq_budget;
            const auto lq = synth::train_on_scene(m, lq_cfg, out_dir + "/lq_log.csv");
            trainer::TrainConfig hq_cfg = tc;
            hq_cfg.budget = hq_budget;
            const auto hq = synth::train_on_scene(m, hq_cfg, out_dir + "/hq_log.csv");

            save_segment_model(out_dir + "/model_lq.p4gs", lq.result.segment);
            save_segment_model(out_dir + "/model_hq.p4gs", hq.result.segment);
            const auto lq_frames = trainer::render_path(lq.result.segment.gaussians, lq.path,
                                                        Eigen::Vector3d::Zero());
            const auto hq_frames = trainer::render_path(hq.result.segment.gaussians, hq.path,
                                                        Eigen::Vector3d::Zero());
            fs::create_directories(out_dir + "/lq");
            fs::create_directories(out_dir + "/hq");
            for (size_t i = 0; i < lq_frames.size(); ++i) {
                io::write_rgba_pair(out_dir + "/lq/" + frame_name(static_cast<int>(i)),
                                    lq_frames[i]);
                io::write_rgba_pair(out_dir + "/hq/" + frame_name(static_cast<int>(i)),
                                    hq_frames[i]);
            }
            std::cout << "lq budget " << lq_budget << " psnr " << lq.result.eval_psnr
                      << " dB, hq budget " << hq_budget << " psnr " << hq.result.eval_psnr
                      << " dB\n";
        } else if (c_stab->parsed()) {
            std::vector<ImageBuffer> frames;
            for (int i = 0;; ++i) {
                const std::string base = in_dir + "/" + frame_name(i);
                if (!fs::exists(base + ".pfm")) break;
                frames.push_back(io::read_rgba_pair(base, ColorSpace::UnboundedSRGB));
            }
            if (frames.empty()) throw std::runtime_error("no frames found in " + in_dir);
            fs::create_directories(out_dir);
            io::DirLock lock(out_dir);

            std::unique_ptr<stabilizer::Enhancer> backend;
            if (backend_name == "identity") {
                backend = stabilizer::make_identity_enhancer();
            } else if (backend_name == "unsharp") {
                backend = stabilizer::make_unsharp_enhancer();
            } else if (backend_name == "flicker") {
                backend = stabilizer::make_flicker_enhancer(seed);
            } else if (backend_name == "subprocess") {
                if (backend_cmd.empty())
                    throw std::invalid_argument("subprocess backend needs --cmd");
                backend = stabilizer::make_subprocess_enhancer(backend_cmd, out_dir);
            } else {
                throw std::invalid_argument("unknown backend: " + backend_name);
            }
            const auto out_frames = stabilizer::stabilize_sequence(frames, *backend);
            for (size_t i = 0; i < out_frames.size(); ++i)
                io::write_rgba_pair(out_dir + "/" + frame_name(static_cast<int>(i)),
                                    out_frames[i]);
            std::cout << out_frames.size() << " frames stabilized\n";
        } else if (c_eval->parsed()) {
            const auto m = synth::load_manifest(scene_dir);
            const ModelContainer model = load_model(model_path);
            const auto path = load_camera_path(m.root + "/" + m.camera_path);
            const auto pred =
                trainer::render_path(model.gaussians, path, Eigen::Vector3d::Zero());
            std::vector<ImageBuffer> gt;
            for (const auto& cam : path)
                gt.push_back(io::read_rgba_pair(
                    synth::frame_base(m, cam.camera_id, cam.frame, true),
                    ColorSpace::UnboundedSRGB));
            const auto report = metrics::MetricReport::compute(pred, gt);
            fs::create_directories(out_dir);
            report.save_csv(out_dir + "/report.csv");
            report.save_json(out_dir + "/report.json");
            std::cout << "psnr " << report.psnr_mean << " dB, ssim " << report.ssim_mean
                      << ", tpsnr " << report.tpsnr_mean << " dB\n";
        }
    } catch (const trainer::DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDiverged;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
