// Copyright Contributors to the PolySplat Project
// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

#include "doctest.h"
#include "polysplat/camera.hpp"
#include "polysplat/io.hpp"
#include "polysplat/model_io.hpp"
#include "test_util.hpp"

using namespace polysplat;

namespace {

const std::string kCli = POLYSPLAT_CLI_PATH;

int run_cli(const std::string& args, const std::string& log) {
    const int status = std::system((kCli + " " + args + " > " + log + " 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_tiny_synth_config(const std::string& path) {
    std::ofstream(path) << "[synth]\n"
                           "gaussians = 20\n"
                           "cameras = 3\n"
                           "frames = 2\n"
                           "width = 32\n"
                           "height = 32\n"
                           "points_per_frame = 200\n";
}

}  // namespace

TEST_CASE("cli: unknown flag exits 2 with usage text") {
    testutil::TempDir dir("cliflag");
    const std::string log = dir.str() + "/log.txt";
    CHECK(run_cli("synth --does-not-exist --out " + dir.str() + "/out", log) == 2);
    const std::string text = slurp(log);
    CHECK(text.find("--out") != std::string::npos);  // usage text was printed

    CHECK(run_cli("", log) == 2);  // missing subcommand
}

TEST_CASE("cli: synth is deterministic under a fixed seed") {
    testutil::TempDir dir("clisynth");
    const std::string cfg = dir.str() + "/cfg.toml";
    write_tiny_synth_config(cfg);
    const std::string log = dir.str() + "/log.txt";
    REQUIRE(run_cli("synth --config " + cfg + " --seed 5 --out " + dir.str() + "/a", log) == 0);
    REQUIRE(run_cli("synth --config " + cfg + " --seed 5 --out " + dir.str() + "/b", log) == 0);

    for (const std::string rel :
         {"manifest.json", "cameras.json", "model_gt.p4gs", "images/cam000/frame000.pfm",
          "images/cam002/frame001.pfm", "points/frame000.ply"}) {
        const std::string a = slurp(dir.str() + "/a/" + rel);
        REQUIRE(!a.empty());
        CHECK(a == slurp(dir.str() + "/b/" + rel));
    }
}

TEST_CASE("cli: stabilize with the identity backend reproduces the input") {
    testutil::TempDir dir("clistab");
    const std::string in_dir = dir.str() + "/in";
    std::filesystem::create_directories(in_dir);
    for (int t = 0; t < 3; ++t) {
        char base[32];
        std::snprintf(base, sizeof base, "/frame%04d", t);
        io::write_rgba_pair(in_dir + base,
                            testutil::random_image(48, 32, ColorSpace::UnboundedSRGB, 600 + t));
    }
    const std::string log = dir.str() + "/log.txt";
    REQUIRE(run_cli("stabilize --backend identity --in " + in_dir + " --out " + dir.str() +
                        "/out",
                    log) == 0);
    for (int t = 0; t < 3; ++t) {
        char base[32];
        std::snprintf(base, sizeof base, "/frame%04d", t);
        CHECK(slurp(dir.str() + "/out" + base + ".pfm") == slurp(in_dir + base + ".pfm"));
        CHECK(slurp(dir.str() + "/out" + base + "_alpha.pfm") ==
              slurp(in_dir + base + "_alpha.pfm"));
    }
}

TEST_CASE("cli: render of an empty camera path succeeds with zero frames") {
    testutil::TempDir dir("clirender");
    ModelContainer model;
    model.degrees = PolyDegrees{};
    model.sh_degree = 0;
    save_model(dir.str() + "/m.p4gs", model);
    save_camera_path(dir.str() + "/cams.json", {});
    const std::string log = dir.str() + "/log.txt";
    CHECK(run_cli("render --model " + dir.str() + "/m.p4gs --cameras " + dir.str() +
                      "/cams.json --out " + dir.str() + "/out",
                  log) == 0);
    CHECK(!std::filesystem::exists(dir.str() + "/out/frame0000.pfm"));

    // missing model file is a data error
    CHECK(run_cli("render --model " + dir.str() + "/nope.p4gs --cameras " + dir.str() +
                      "/cams.json --out " + dir.str() + "/out2",
                  log) == 3);
}
