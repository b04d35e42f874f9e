// SPDX-License-Identifier: Apache-2.0
#include "atmv/video_io.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "atmv/errors.hpp"

namespace atmv {

namespace {

using json = nlohmann::ordered_json;

std::string frame_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%04d.pgm", index);
    return buf;
}

// Whitespace and '#' comments between header tokens, per the PGM grammar.
int pgm_header_int(std::ifstream& in, const std::string& path) {
    int c = in.get();
    while (c != EOF && (std::isspace(c) || c == '#')) {
        if (c == '#')
            while (c != EOF && c != '\n') c = in.get();
        c = in.get();
    }
    if (c == EOF || !std::isdigit(c)) throw IoError("pgm: malformed header in " + path);
    int value = 0;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        if (value > 1 << 20) throw IoError("pgm: header value out of range in " + path);
        c = in.get();
    }
    if (c == EOF) throw IoError("pgm: truncated header in " + path);
    return value;
}

}  // namespace

void write_pgm(const std::string& path, const Tensor& frame) {
    if (!frame.defined() || frame.rank() != 3 || frame.dim(0) != 1)
        throw ShapeError("pgm: frame must be [1,H,W]");
    const int h = frame.dim(1), w = frame.dim(2);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("pgm: cannot open for writing: " + path);
    out << "P5\n" << w << " " << h << "\n255\n";
    auto d = frame.data();
    std::vector<unsigned char> row(static_cast<std::size_t>(w));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double v = std::lround(double(d[std::size_t(y) * w + x]) * 255.0);
            row[std::size_t(x)] = (unsigned char)(v < 0 ? 0 : v > 255 ? 255 : v);
        }
        out.write(reinterpret_cast<const char*>(row.data()), w);
    }
    if (!out.good()) throw IoError("pgm: write failed: " + path);
}

Tensor read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("pgm: cannot open: " + path);
    char magic[2] = {0, 0};
    in.read(magic, 2);
    if (!in.good() || magic[0] != 'P' || magic[1] != '5')
        throw IoError("pgm: not a binary PGM: " + path, 0);
    const int w = pgm_header_int(in, path);
    const int h = pgm_header_int(in, path);
    const int maxval = pgm_header_int(in, path);
    if (w < 1 || h < 1) throw IoError("pgm: bad extents in " + path);
    if (maxval != 255) throw IoError("pgm: unsupported maxval in " + path);
    // pgm_header_int consumed the single whitespace byte after the maxval.
    std::vector<unsigned char> bytes(std::size_t(h) * std::size_t(w));
    in.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size()));
    if (std::size_t(in.gcount()) != bytes.size())
        throw IoError("pgm: truncated pixel data in " + path);
    std::vector<real> values(bytes.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) values[i] = real(bytes[i] / 255.0);
    return Tensor::from_data({1, h, w}, std::move(values));
}

namespace {

json scene_to_json(const SceneSpec& s) {
    return json{{"shape_class", s.shape_class == ShapeClass::square ? "square" : "disc"},
                {"x0", s.x0},
                {"y0", s.y0},
                {"vx", s.vx},
                {"vy", s.vy},
                {"radius", s.radius},
                {"intensity", s.intensity}};
}

SceneSpec scene_from_json(const json& j) {
    SceneSpec s;
    const std::string cls = j.at("shape_class").get<std::string>();
    if (cls == "square")
        s.shape_class = ShapeClass::square;
    else if (cls == "disc")
        s.shape_class = ShapeClass::disc;
    else
        throw IoError("manifest: unknown shape_class \"" + cls + "\"");
    s.x0 = j.at("x0").get<double>();
    s.y0 = j.at("y0").get<double>();
    s.vx = j.at("vx").get<double>();
    s.vy = j.at("vy").get<double>();
    s.radius = j.at("radius").get<double>();
    s.intensity = j.at("intensity").get<double>();
    return s;
}

}  // namespace

std::string manifest_to_json(const VideoManifest& m) {
    json j{{"frame_count", m.frame_count},
           {"height", m.height},
           {"width", m.width},
           {"seed", m.seed},
           {"generator", m.generator},
           {"scene", m.scene ? scene_to_json(*m.scene) : json(nullptr)}};
    return j.dump(2) + "\n";
}

VideoManifest manifest_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
        VideoManifest m;
        m.frame_count = j.at("frame_count").get<int>();
        m.height = j.at("height").get<int>();
        m.width = j.at("width").get<int>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.generator = j.at("generator").get<std::string>();
        if (j.contains("scene") && !j.at("scene").is_null()) m.scene = scene_from_json(j.at("scene"));
        return m;
    } catch (const json::exception& e) {
        throw IoError(std::string("manifest: ") + e.what());
    }
}

void write_video_dir(const std::string& dir, const std::vector<Tensor>& frames,
                     const VideoManifest& manifest) {
    if (int(frames.size()) != manifest.frame_count)
        throw UsageError("video dir: frame count does not match the manifest");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("video dir: cannot create " + dir + ": " + ec.message());
    for (int i = 0; i < int(frames.size()); ++i) {
        const Tensor& f = frames[std::size_t(i)];
        if (!f.defined() || f.rank() != 3 || f.dim(0) != 1 || f.dim(1) != manifest.height ||
            f.dim(2) != manifest.width)
            throw ShapeError("video dir: frame " + std::to_string(i) +
                             " does not match the manifest extents");
        write_pgm(dir + "/" + frame_name(i), f);
    }
    std::ofstream out(dir + "/manifest.json", std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("video dir: cannot write manifest in " + dir);
    out << manifest_to_json(manifest);
    if (!out.good()) throw IoError("video dir: manifest write failed in " + dir);
}

VideoOnDisk read_video_dir(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json", std::ios::binary);
    if (!in) throw IoError("video dir: cannot open manifest in " + dir);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    VideoOnDisk video;
    video.manifest = manifest_from_json(text);
    if (video.manifest.frame_count < 0 || video.manifest.frame_count > 100000)
        throw IoError("video dir: implausible frame count in " + dir);
    for (int i = 0; i < video.manifest.frame_count; ++i) {
        Tensor f = read_pgm(dir + "/" + frame_name(i));
        if (f.dim(1) != video.manifest.height || f.dim(2) != video.manifest.width)
            throw IoError("video dir: frame " + std::to_string(i) +
                          " does not match the manifest extents");
        video.frames.push_back(std::move(f));
    }
    return video;
}

}  // namespace atmv
