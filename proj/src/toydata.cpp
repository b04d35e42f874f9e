// SPDX-License-Identifier: Apache-2.0
#include "atmv/toydata.hpp"

#include <algorithm>
#include <cmath>

#include "atmv/codec.hpp"
#include "atmv/errors.hpp"
#include "atmv/rng.hpp"

namespace atmv {

namespace {

// Triangle-wave fold of p into [0, extent]: elastic reflection of a constant
// velocity trajectory, evaluated in closed form per frame.
double reflect(double p, double extent) {
    const double period = 2.0 * extent;
    double q = std::fmod(p, period);
    if (q < 0) q += period;
    return q <= extent ? q : period - q;
}

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

// Coverage of unit pixel [i,i+1) by the 1-D interval [lo,hi].
double overlap1(int i, double lo, double hi) {
    return clamp01(std::min(double(i) + 1.0, hi) - std::max(double(i), lo));
}

void render_frame(std::vector<real>& out, const SceneSpec& s, double cx, double cy, int h, int w) {
    const double r = s.radius * w;
    if (s.shape_class == ShapeClass::square) {
        const double left = cx - r, right = cx + r;
        const double top = cy - r, bot = cy + r;
        const int iy0 = std::max(0, int(std::floor(top)));
        const int iy1 = std::min(h, int(std::ceil(bot)));
        const int ix0 = std::max(0, int(std::floor(left)));
        const int ix1 = std::min(w, int(std::ceil(right)));
        for (int iy = iy0; iy < iy1; ++iy) {
            const double oy = overlap1(iy, top, bot);
            for (int ix = ix0; ix < ix1; ++ix)
                out[std::size_t(iy) * w + ix] = real(s.intensity * overlap1(ix, left, right) * oy);
        }
    } else {
        const int iy0 = std::max(0, int(std::floor(cy - r - 1)));
        const int iy1 = std::min(h, int(std::ceil(cy + r + 1)));
        const int ix0 = std::max(0, int(std::floor(cx - r - 1)));
        const int ix1 = std::min(w, int(std::ceil(cx + r + 1)));
        for (int iy = iy0; iy < iy1; ++iy)
            for (int ix = ix0; ix < ix1; ++ix) {
                const double dx = double(ix) + 0.5 - cx;
                const double dy = double(iy) + 0.5 - cy;
                const double cov = clamp01(0.5 + r - std::sqrt(dx * dx + dy * dy));
                if (cov > 0) out[std::size_t(iy) * w + ix] = real(s.intensity * cov);
            }
    }
}

}  // namespace

SceneSpec generate_scene(Rng& rng) {
    SceneSpec s;
    s.shape_class = rng.next_below(2) == 0 ? ShapeClass::square : ShapeClass::disc;
    s.x0 = rng.uniform();
    s.y0 = rng.uniform();
    s.vx = rng.uniform(-kMaxSceneSpeed, kMaxSceneSpeed);
    s.vy = rng.uniform(-kMaxSceneSpeed, kMaxSceneSpeed);
    s.radius = rng.uniform(0.1, 0.25);
    s.intensity = rng.uniform(0.5, 1.0);
    return s;
}

SemanticCondition scene_condition(const SceneSpec& s) {
    SemanticCondition cond;
    cond.is_null = false;
    cond.vec = {
        real(s.shape_class == ShapeClass::square ? 1 : 0),
        real(s.shape_class == ShapeClass::disc ? 1 : 0),
        real(s.x0),
        real(s.y0),
        real(s.vx * 10.0),
        real(s.vy * 10.0),
        real(s.radius),
        real(s.intensity),
    };
    return cond;
}

std::vector<Tensor> render_video(const SceneSpec& s, int t_clip, int h, int w) {
    if (t_clip < 1) throw ConfigError("render_video: t_clip must be >= 1");
    if (h < 2 || w < 2 || h % 2 != 0 || w % 2 != 0)
        throw ConfigError("render_video: frame extents must be even and >= 2");
    std::vector<Tensor> frames;
    frames.reserve(std::size_t(t_clip));
    for (int k = 0; k < t_clip; ++k) {
        // Velocity is a fraction of width on both axes so pixel displacement
        // is isotropic.
        const double cx = reflect((s.x0 + k * s.vx) * w, double(w));
        const double cy = reflect(s.y0 * h + k * s.vy * w, double(h));
        auto v = std::vector<real>(std::size_t(h) * w, real(0));
        render_frame(v, s, cx, cy, h, w);
        frames.push_back(Tensor::from_data({1, h, w}, std::move(v)));
    }
    return frames;
}

Tensor stack_frames(const std::vector<Tensor>& frames) {
    if (frames.empty()) throw ShapeError("stack_frames: empty clip");
    const Shape& fs = frames.front().shape();
    if (fs.size() != 3 || fs[0] != 1) throw ShapeError("stack_frames: frames must be [1,H,W]");
    const int t = int(frames.size());
    Tensor clip = Tensor::zeros({t, 1, fs[1], fs[2]});
    auto out = clip.raw_data();
    const std::int64_t chunk = frames.front().size();
    for (int k = 0; k < t; ++k) {
        if (frames[std::size_t(k)].shape() != fs)
            throw ShapeError("stack_frames: inconsistent frame shapes");
        std::copy_n(frames[std::size_t(k)].data().data(), chunk, out.data() + k * chunk);
    }
    return clip;
}

ToyDataset::ToyDataset(int n_clips, int t_clip, int h, int w, std::uint64_t seed)
    : n_clips_(n_clips), t_clip_(t_clip), h_(h), w_(w), seed_(seed) {
    if (n_clips < 1) throw ConfigError("dataset: n_clips must be >= 1");
    if (t_clip < 1) throw ConfigError("dataset: t_clip must be >= 1");
    if (h < 2 || w < 2 || h % 2 != 0 || w % 2 != 0)
        throw ConfigError("dataset: frame extents must be even and >= 2");
}

SceneSpec ToyDataset::scene(int index) const {
    if (index < 0 || index >= n_clips_) throw UsageError("dataset: clip index out of range");
    Rng rng(Rng::derive(seed_, std::uint64_t(index)));
    return generate_scene(rng);
}

ClipSample ToyDataset::clip(int index) const {
    SceneSpec s = scene(index);
    ClipSample sample;
    sample.seed = Rng::derive(seed_, std::uint64_t(index));
    sample.frames = render_video(s, t_clip_, h_, w_);
    sample.latents = encode_clip(stack_frames(sample.frames));
    sample.condition = scene_condition(s);
    return sample;
}

ClipSample ToyDataset::train_clip(int i) const {
    if (i < 0 || i >= train_size()) throw UsageError("dataset: train index out of range");
    return clip(i);
}

ClipSample ToyDataset::val_clip(int i) const {
    if (i < 0 || i >= val_size()) throw UsageError("dataset: val index out of range");
    return clip(train_size() + i);
}

ToyDataset make_dataset(int n_clips, int t_clip, int h, int w, std::uint64_t seed) {
    return ToyDataset(n_clips, t_clip, h, w, seed);
}

}  // namespace atmv
