// SPDX-License-Identifier: Apache-2.0
#pragma once

// Procedural grayscale clips: one anti-aliased square or disc per scene,
// moving with constant velocity and reflecting elastically off the frame
// borders. Scene parameters double as the semantic condition vector, so the
// dataset is its own ground truth for conditioning and motion metrics.

#include <cstdint>
#include <vector>

#include "atmv/conditioning.hpp"
#include "atmv/tensor.hpp"

namespace atmv {

enum class ShapeClass { square = 0, disc = 1 };

struct SceneSpec {
    ShapeClass shape_class = ShapeClass::square;
    double x0 = 0.5;  // center in [0,1]^2
    double y0 = 0.5;
    double vx = 0.0;  // per-frame displacement as a fraction of frame width
    double vy = 0.0;
    double radius = 0.15;     // half-extent as a fraction of frame width
    double intensity = 1.0;
};

inline constexpr double kMaxSceneSpeed = 0.08;

// All fields uniform over their ranges; consumes a fixed number of draws.
SceneSpec generate_scene(Rng& rng);

// [one-hot class (2), x0, y0, vx*10, vy*10, radius, intensity]; width 8.
SemanticCondition scene_condition(const SceneSpec& scene);

// T_clip frames [1,H,W]; frame k shows the shape at center + k*velocity with
// elastic reflection, bilinear-coverage edges, background 0.
std::vector<Tensor> render_video(const SceneSpec& scene, int t_clip, int h, int w);

// [1,H,W] frames -> [T,1,H,W].
Tensor stack_frames(const std::vector<Tensor>& frames);

struct ClipSample {
    std::vector<Tensor> frames;  // T_clip of [1,H,W]
    Tensor latents;              // [T,4,H/2,W/2], exactly encode(frames)
    SemanticCondition condition;
    std::uint64_t seed = 0;
};

// Clips are synthesized on demand from per-index derived seeds, so content
// never depends on access order. Split is 90/10 by index, train first.
class ToyDataset {
public:
    ToyDataset(int n_clips, int t_clip, int h, int w, std::uint64_t seed);

    int size() const { return n_clips_; }
    int train_size() const { return (n_clips_ * 9) / 10; }
    int val_size() const { return n_clips_ - train_size(); }
    int t_clip() const { return t_clip_; }
    int frame_h() const { return h_; }
    int frame_w() const { return w_; }
    std::uint64_t seed() const { return seed_; }

    SceneSpec scene(int index) const;
    ClipSample clip(int index) const;
    ClipSample train_clip(int i) const;
    ClipSample val_clip(int i) const;

private:
    int n_clips_, t_clip_, h_, w_;
    std::uint64_t seed_;
};

ToyDataset make_dataset(int n_clips, int t_clip, int h, int w, std::uint64_t seed);

}  // namespace atmv
