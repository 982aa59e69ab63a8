// Copyright Contributors to the PolySplat Project
// SPDX-License-Identifier: Apache-2.0

#include "polysplat/io.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace polysplat::io {

ParseError::ParseError(const std::string& what, size_t off)
    : std::runtime_error(what + " (byte offset " + std::to_string(off) + ")"),
      byte_offset(off) {}

// ---- PFM ----
// Layout: "PF\n" or "Pf\n", "<width> <height>\n", "-1.0\n" (negative scale =
// little endian), then height scanlines of width*channels f32, bottom row
// first.

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Reads one whitespace-terminated token starting at off; advances off past the
// single terminating whitespace byte.
std::string pfm_token(const std::string& buf, size_t& off) {
    size_t start = off;
    while (off < buf.size() && !std::isspace(static_cast<unsigned char>(buf[off]))) ++off;
    if (off == start || off >= buf.size()) throw ParseError("malformed PFM header", start);
    std::string tok = buf.substr(start, off - start);
    ++off;  // consume terminator
    return tok;
}

}  // namespace

PfmImage read_pfm(const std::string& path) {
    const std::string buf = read_file(path);
    size_t off = 0;
    const std::string magic = pfm_token(buf, off);
    PfmImage img;
    if (magic == "PF")
        img.channels = 3;
    else if (magic == "Pf")
        img.channels = 1;
    else
        throw ParseError("bad PFM magic '" + magic + "'", 0);
    try {
        size_t woff = off;
        img.width = std::stoi(pfm_token(buf, off));
        size_t hoff = off;
        img.height = std::stoi(pfm_token(buf, off));
        if (img.width <= 0 || img.height <= 0) throw ParseError("bad PFM dimensions", woff);
        (void)hoff;
    } catch (const std::invalid_argument&) {
        throw ParseError("non-numeric PFM dimensions", off);
    }
    const size_t soff = off;
    double scale;
    try {
        scale = std::stod(pfm_token(buf, off));
    } catch (const std::invalid_argument&) {
        throw ParseError("non-numeric PFM scale", soff);
    }
    if (scale >= 0) throw ParseError("big-endian PFM not supported", soff);

    const size_t n = static_cast<size_t>(img.width) * img.height * img.channels;
    if (buf.size() - off < n * 4) throw ParseError("truncated PFM payload", buf.size());
    img.data.resize(n);
    const size_t row = static_cast<size_t>(img.width) * img.channels;
    for (int y = 0; y < img.height; ++y) {
        // file rows run bottom-to-top
        const char* src = buf.data() + off + static_cast<size_t>(img.height - 1 - y) * row * 4;
        std::memcpy(img.data.data() + static_cast<size_t>(y) * row, src, row * 4);
    }
    return img;
}

void write_pfm(const std::string& path, const PfmImage& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write: " + path);
    out << (img.channels == 3 ? "PF" : "Pf") << "\n"
        << img.width << " " << img.height << "\n"
        << "-1.0" << "\n";
    const size_t row = static_cast<size_t>(img.width) * img.channels;
    for (int y = img.height - 1; y >= 0; --y)
        out.write(reinterpret_cast<const char*>(img.data.data() + static_cast<size_t>(y) * row),
                  static_cast<std::streamsize>(row * 4));
}

void write_rgba_pair(const std::string& base_path, const ImageBuffer& img) {
    PfmImage rgb;
    rgb.width = img.width;
    rgb.height = img.height;
    rgb.channels = 3;
    rgb.data.resize(img.pixel_count() * 3);
    PfmImage alpha;
    alpha.width = img.width;
    alpha.height = img.height;
    alpha.channels = 1;
    alpha.data.resize(img.pixel_count());
    for (size_t i = 0; i < img.pixel_count(); ++i) {
        rgb.data[i * 3 + 0] = img.data[i * 4 + 0];
        rgb.data[i * 3 + 1] = img.data[i * 4 + 1];
        rgb.data[i * 3 + 2] = img.data[i * 4 + 2];
        alpha.data[i] = img.data[i * 4 + 3];
    }
    write_pfm(base_path + ".pfm", rgb);
    write_pfm(base_path + "_alpha.pfm", alpha);
}

ImageBuffer read_rgba_pair(const std::string& base_path, ColorSpace space) {
    const PfmImage rgb = read_pfm(base_path + ".pfm");
    if (rgb.channels != 3) throw std::runtime_error("expected color PFM: " + base_path);
    const PfmImage alpha = read_pfm(base_path + "_alpha.pfm");
    if (alpha.channels != 1 || alpha.width != rgb.width || alpha.height != rgb.height)
        throw std::runtime_error("alpha PFM mismatch: " + base_path);
    ImageBuffer img(rgb.width, rgb.height, space);
    for (size_t i = 0; i < img.pixel_count(); ++i) {
        img.data[i * 4 + 0] = rgb.data[i * 3 + 0];
        img.data[i * 4 + 1] = rgb.data[i * 3 + 1];
        img.data[i * 4 + 2] = rgb.data[i * 3 + 2];
        img.data[i * 4 + 3] = alpha.data[i];
    }
    return img;
}

// ---- PLY ----

PointCloud read_ply(const std::string& path) {
    const std::string buf = read_file(path);
    size_t off = 0;
    auto next_line = [&]() {
        size_t end = buf.find('\n', off);
        if (end == std::string::npos) throw ParseError("unterminated PLY header", off);
        std::string line = buf.substr(off, end - off);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        off = end + 1;
        return line;
    };

    if (next_line() != "ply") throw ParseError("bad PLY magic", 0);
    bool binary = false;
    size_t count = 0;
    struct Prop {
        std::string name;
        std::string type;
    };
    std::vector<Prop> props;
    bool in_vertex = false;
    for (;;) {
        const size_t line_off = off;
        std::istringstream ls(next_line());
        std::string word;
        ls >> word;
        if (word == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt == "binary_little_endian")
                binary = true;
            else if (fmt != "ascii")
                throw ParseError("unsupported PLY format " + fmt, line_off);
        } else if (word == "element") {
            std::string what;
            ls >> what;
            in_vertex = (what == "vertex");
            if (in_vertex) ls >> count;
        } else if (word == "property" && in_vertex) {
            Prop p;
            ls >> p.type >> p.name;
            props.push_back(p);
        } else if (word == "end_header") {
            break;
        } else if (word == "comment" || word == "property" || word == "obj_info") {
            // skip
        } else if (word.empty()) {
            throw ParseError("empty PLY header line", line_off);
        }
    }

    int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1;
    for (size_t i = 0; i < props.size(); ++i) {
        const std::string& n = props[i].name;
        if (n == "x") ix = static_cast<int>(i);
        if (n == "y") iy = static_cast<int>(i);
        if (n == "z") iz = static_cast<int>(i);
        if (n == "red" || n == "r") ir = static_cast<int>(i);
        if (n == "green" || n == "g") ig = static_cast<int>(i);
        if (n == "blue" || n == "b") ib = static_cast<int>(i);
    }
    if (ix < 0 || iy < 0 || iz < 0) throw ParseError("PLY missing x/y/z", 0);

    auto prop_size = [](const std::string& t) -> size_t {
        if (t == "float" || t == "float32" || t == "int" || t == "int32" || t == "uint" ||
            t == "uint32")
            return 4;
        if (t == "double" || t == "float64") return 8;
        if (t == "uchar" || t == "uint8" || t == "char" || t == "int8") return 1;
        if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
        throw std::runtime_error("unsupported PLY property type: " + t);
    };

    PointCloud cloud;
    cloud.positions.reserve(count);
    const bool has_color = ir >= 0 && ig >= 0 && ib >= 0;
    if (has_color) cloud.colors.reserve(count);

    auto color_scale = [&](int pi) {
        const std::string& t = props[static_cast<size_t>(pi)].type;
        return (t == "uchar" || t == "uint8") ? 1.0 / 255.0 : 1.0;
    };

    if (!binary) {
        std::istringstream body(buf.substr(off));
        std::vector<double> vals(props.size());
        for (size_t v = 0; v < count; ++v) {
            for (auto& x : vals)
                if (!(body >> x)) throw ParseError("truncated PLY body", buf.size());
            cloud.positions.emplace_back(vals[ix], vals[iy], vals[iz]);
            if (has_color)
                cloud.colors.emplace_back(vals[ir] * color_scale(ir), vals[ig] * color_scale(ig),
                                          vals[ib] * color_scale(ib));
        }
    } else {
        std::vector<size_t> offsets(props.size());
        size_t stride = 0;
        for (size_t i = 0; i < props.size(); ++i) {
            offsets[i] = stride;
            stride += prop_size(props[i].type);
        }
        if (buf.size() - off < count * stride) throw ParseError("truncated PLY body", buf.size());
        auto read_val = [&](const char* rec, int pi) -> double {
            const std::string& t = props[static_cast<size_t>(pi)].type;
            const char* p = rec + offsets[static_cast<size_t>(pi)];
            if (t == "float" || t == "float32") {
                float f;
                std::memcpy(&f, p, 4);
                return f;
            }
            if (t == "double" || t == "float64") {
                double d;
                std::memcpy(&d, p, 8);
                return d;
            }
            if (t == "uchar" || t == "uint8")
                return static_cast<double>(*reinterpret_cast<const unsigned char*>(p));
            throw std::runtime_error("unsupported PLY value type: " + t);
        };
        for (size_t v = 0; v < count; ++v) {
            const char* rec = buf.data() + off + v * stride;
            cloud.positions.emplace_back(read_val(rec, ix), read_val(rec, iy), read_val(rec, iz));
            if (has_color)
                cloud.colors.emplace_back(read_val(rec, ir) * color_scale(ir),
                                          read_val(rec, ig) * color_scale(ig),
                                          read_val(rec, ib) * color_scale(ib));
        }
    }
    return cloud;
}

void write_ply(const std::string& path, const PointCloud& cloud, bool binary) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write: " + path);
    out << "ply\nformat " << (binary ? "binary_little_endian" : "ascii") << " 1.0\n"
        << "element vertex " << cloud.positions.size() << "\n"
        << "property float x\nproperty float y\nproperty float z\n"
        << "property float red\nproperty float green\nproperty float blue\n"
        << "end_header\n";
    out.precision(9);  // round-trips f32 exactly in ascii mode
    for (size_t i = 0; i < cloud.positions.size(); ++i) {
        const Eigen::Vector3d& p = cloud.positions[i];
        const Eigen::Vector3d c =
            i < cloud.colors.size() ? cloud.colors[i] : Eigen::Vector3d(0.5, 0.5, 0.5);
        float rec[6] = {static_cast<float>(p.x()), static_cast<float>(p.y()),
                        static_cast<float>(p.z()), static_cast<float>(c.x()),
                        static_cast<float>(c.y()), static_cast<float>(c.z())};
        if (binary) {
            out.write(reinterpret_cast<const char*>(rec), sizeof rec);
        } else {
            out << rec[0] << " " << rec[1] << " " << rec[2] << " " << rec[3] << " " << rec[4]
                << " " << rec[5] << "\n";
        }
    }
}

// ---- TOML subset ----

Config Config::parse_file(const std::string& path) { return parse_string(read_file(path)); }

Config Config::parse_string(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line, section;
    auto trim = [](std::string s) {
        const char* ws = " \t\r";
        s.erase(0, s.find_first_not_of(ws));
        s.erase(s.find_last_not_of(ws) + 1);
        return s;
    };
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        // strip comments outside strings
        bool in_str = false;
        for (size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') in_str = !in_str;
            if (line[i] == '#' && !in_str) {
                line.resize(i);
                break;
            }
        }
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw std::runtime_error("config: bad section at line " + std::to_string(lineno));
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config: expected key = value at line " +
                                     std::to_string(lineno));
        const std::string key =
            (section.empty() ? "" : section + ".") + trim(line.substr(0, eq));
        const std::string raw = trim(line.substr(eq + 1));
        if (raw.empty())
            throw std::runtime_error("config: missing value at line " + std::to_string(lineno));
        Value v;
        if (raw.front() == '"') {
            if (raw.size() < 2 || raw.back() != '"')
                throw std::runtime_error("config: unterminated string at line " +
                                         std::to_string(lineno));
            v.kind = Value::Kind::String;
            v.str = raw.substr(1, raw.size() - 2);
        } else if (raw == "true" || raw == "false") {
            v.kind = Value::Kind::Bool;
            v.boolean = (raw == "true");
        } else if (raw.front() == '[') {
            if (raw.back() != ']')
                throw std::runtime_error("config: unterminated array at line " +
                                         std::to_string(lineno));
            v.kind = Value::Kind::Array;
            std::string body = raw.substr(1, raw.size() - 2);
            std::replace(body.begin(), body.end(), ',', ' ');
            std::istringstream as(body);
            double x;
            while (as >> x) v.array.push_back(x);
        } else {
            v.kind = Value::Kind::Number;
            try {
                size_t pos = 0;
                v.num = std::stod(raw, &pos);
                if (pos != raw.size()) throw std::invalid_argument(raw);
            } catch (const std::exception&) {
                throw std::runtime_error("config: bad value '" + raw + "' at line " +
                                         std::to_string(lineno));
            }
        }
        cfg.values_[key] = std::move(v);
    }
    return cfg;
}

bool Config::has(const std::string& key) const { return values_.count(key) > 0; }

double Config::get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second.kind != Value::Kind::Number)
        throw std::runtime_error("config: " + key + " is not a number");
    return it->second.num;
}

long long Config::get_int(const std::string& key, long long fallback) const {
    return static_cast<long long>(get_double(key, static_cast<double>(fallback)));
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second.kind != Value::Kind::Bool)
        throw std::runtime_error("config: " + key + " is not a boolean");
    return it->second.boolean;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second.kind != Value::Kind::String)
        throw std::runtime_error("config: " + key + " is not a string");
    return it->second.str;
}

std::vector<double> Config::get_array(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return {};
    if (it->second.kind != Value::Kind::Array)
        throw std::runtime_error("config: " + key + " is not an array");
    return it->second.array;
}

DirLock::DirLock(const std::string& dir) : path_(dir + "/.polysplat.lock") {
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f)
        throw std::runtime_error("output directory is locked by another command: " + dir);
    std::fclose(f);
}

DirLock::~DirLock() { std::remove(path_.c_str()); }

}  // namespace polysplat::io
