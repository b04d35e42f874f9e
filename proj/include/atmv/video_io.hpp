// SPDX-License-Identifier: Apache-2.0
#pragma once

// Videos on disk: a directory of zero-padded binary PGM frames
// (frame_0000.pgm, P5, maxval 255, byte = clamp(round(v*255))) plus a
// manifest.json with the frame count, extents, originating seed, and the
// scene record when the clip was procedurally generated.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "atmv/tensor.hpp"
#include "atmv/toydata.hpp"

namespace atmv {

inline constexpr const char* kGeneratorVersion = "atmv-1";

struct VideoManifest {
    int frame_count = 0;
    int height = 0;
    int width = 0;
    std::uint64_t seed = 0;
    std::optional<SceneSpec> scene;
    std::string generator = kGeneratorVersion;
};

// frame is [1,H,W] in [0,1]; values outside clamp to the byte range.
void write_pgm(const std::string& path, const Tensor& frame);
Tensor read_pgm(const std::string& path);

std::string manifest_to_json(const VideoManifest& manifest);
VideoManifest manifest_from_json(const std::string& text);

struct VideoOnDisk {
    std::vector<Tensor> frames;  // frame_count of [1,H,W]
    VideoManifest manifest;
};

// Creates dir if needed; frames must agree with the manifest extents.
void write_video_dir(const std::string& dir, const std::vector<Tensor>& frames,
                     const VideoManifest& manifest);
VideoOnDisk read_video_dir(const std::string& dir);

}  // namespace atmv
