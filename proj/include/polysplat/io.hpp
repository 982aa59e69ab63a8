// Copyright Contributors to the PolySplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "polysplat/image.hpp"

namespace polysplat::io {

struct ParseError : std::runtime_error {
    ParseError(const std::string& what, size_t byte_offset);
    size_t byte_offset;
};

// ---- PFM (portable float map, little-endian, scale -1.0) ----

struct PfmImage {
    int width = 0, height = 0, channels = 1;  // 1 (Pf) or 3 (PF)
    std::vector<float> data;                  // row-major, top-down
};

PfmImage read_pfm(const std::string& path);
void write_pfm(const std::string& path, const PfmImage& img);

/// RGBA pair convention: RGB in `<base>.pfm`, alpha in `<base>_alpha.pfm`.
void write_rgba_pair(const std::string& base_path, const ImageBuffer& img);
ImageBuffer read_rgba_pair(const std::string& base_path, ColorSpace space);

// ---- PLY point clouds (x y z r g b; ascii or binary_little_endian) ----

struct PointCloud {
    std::vector<Eigen::Vector3d> positions;
    std::vector<Eigen::Vector3d> colors;  // sRGB in [0,1]
};

PointCloud read_ply(const std::string& path);
void write_ply(const std::string& path, const PointCloud& cloud, bool binary = true);

// ---- Minimal TOML subset: [section], key = value, #-comments.
//      Values: numbers, booleans, "strings", [arrays of numbers]. ----

class Config {
  public:
    static Config parse_file(const std::string& path);
    static Config parse_string(const std::string& text);

    bool has(const std::string& key) const;  // dotted: "section.key"
    double get_double(const std::string& key, double fallback) const;
    long long get_int(const std::string& key, long long fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    std::vector<double> get_array(const std::string& key) const;  // empty when absent

  private:
    struct Value {
        enum class Kind { Number, Bool, String, Array } kind;
        double num = 0.0;
        bool boolean = false;
        std::string str;
        std::vector<double> array;
    };
    std::map<std::string, Value> values_;
};

/// RAII lock file guarding an output directory against concurrent commands.
class DirLock {
  public:
    explicit DirLock(const std::string& dir);
    ~DirLock();
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

  private:
    std::string path_;
};

}  // namespace polysplat::io
