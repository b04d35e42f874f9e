// SPDX-License-Identifier: Apache-2.0
#include "atmv/conditioning.hpp"

#include <algorithm>
#include <cmath>

namespace atmv {

namespace {

std::vector<int> normalize_indices(const std::vector<int>& idx, int t_clip, const char* op) {
    std::vector<int> out = idx;
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    for (int i : out)
        if (i < 0 || i >= t_clip)
            throw ConfigError(std::string(op) + ": frame index " + std::to_string(i) +
                              " outside [0," + std::to_string(t_clip) + ")");
    return out;
}

}  // namespace

FrameMask build_frame_mask(int t_clip, const std::vector<int>& conditioned, int h, int w) {
    if (t_clip < 1 || h < 1 || w < 1) throw ConfigError("frame_mask: extents must be positive");
    FrameMask m;
    m.conditioned = normalize_indices(conditioned, t_clip, "frame_mask");
    if (int(m.conditioned.size()) == t_clip)
        throw ConfigError("frame_mask: every frame conditioned, nothing to generate");
    m.data = Tensor::zeros({t_clip, 1, h, w});
    auto d = m.data.raw_data();
    const std::int64_t plane = std::int64_t(h) * w;
    for (int i : m.conditioned)
        std::fill(d.begin() + i * plane, d.begin() + (i + 1) * plane, real(1));
    return m;
}

ImageConditionLatent build_image_condition_latent(const std::map<int, Tensor>& latents,
                                                  int t_clip, int h, int w) {
    if (t_clip < 1 || h < 1 || w < 1)
        throw ConfigError("image_condition: extents must be positive");
    ImageConditionLatent fi;
    fi.data = Tensor::zeros({t_clip, 4, h, w});
    auto d = fi.data.raw_data();
    const std::int64_t step = 4 * std::int64_t(h) * w;
    for (const auto& [idx, lat] : latents) {
        if (idx < 0 || idx >= t_clip)
            throw ConfigError("image_condition: frame index " + std::to_string(idx) +
                              " outside [0," + std::to_string(t_clip) + ")");
        if (!lat.defined() || lat.shape() != Shape{4, h, w})
            throw ShapeError("image_condition: latent for frame " + std::to_string(idx) +
                             " must be " + shape_str({4, h, w}));
        std::copy(lat.data().begin(), lat.data().end(), d.begin() + idx * step);
        fi.conditioned.push_back(idx);
    }
    return fi;
}

Tensor assemble_model_input(const Tensor& x_t, const FrameMask& f_m,
                            const ImageConditionLatent& f_i) {
    if (!x_t.defined() || x_t.rank() != 4 || x_t.dim(1) != 4)
        throw ShapeError("assemble_model_input: x_t must be [T,4,h,w]");
    const int T = x_t.dim(0), h = x_t.dim(2), w = x_t.dim(3);
    if (!f_m.data.defined() || f_m.data.shape() != Shape{T, 1, h, w})
        throw ShapeError("assemble_model_input: mask must be " + shape_str({T, 1, h, w}));
    if (!f_i.data.defined() || f_i.data.shape() != Shape{T, 4, h, w})
        throw ShapeError("assemble_model_input: image condition must be " +
                         shape_str({T, 4, h, w}));
    std::vector<Tensor> parts{x_t, f_m.data, f_i.data};
    return concat(parts, 1);
}

Tensor semantic_tokens(const SemanticCondition& cond, const SemanticProjection& proj) {
    if (!proj.weight.defined() || proj.weight.rank() != 2 ||
        proj.weight.dim(0) != proj.n_tokens * proj.d_model)
        throw ShapeError("semantic_tokens: projection weight inconsistent with token layout");
    if (int(cond.vec.size()) != proj.weight.dim(1))
        throw ShapeError("semantic_tokens: condition width " + std::to_string(cond.vec.size()) +
                         " vs projection input " + std::to_string(proj.weight.dim(1)));
    Tensor x = Tensor::from_data({1, int(cond.vec.size())}, cond.vec);
    Tensor flat = linear(x, proj.weight, proj.bias);
    return reshape(flat, {proj.n_tokens, proj.d_model});
}

SemanticCondition drop_condition(const SemanticCondition& cond, double p_drop, Rng& rng) {
    if (!(p_drop >= 0.0) || !(p_drop < 1.0))
        throw ConfigError("drop_condition: p_drop must be in [0,1)");
    if (rng.uniform() < p_drop) return SemanticCondition::null(int(cond.vec.size()));
    return cond;
}

Prediction cfg_combine(const Prediction& pred_uncond, const Prediction& pred_cond,
                       const GuidanceConfig& g) {
    if (pred_uncond.kind != pred_cond.kind)
        throw UsageError("cfg_combine: prediction kinds differ");
    const Tensor& u = pred_uncond.value;
    const Tensor& c = pred_cond.value;
    if (!u.defined() || !c.defined() || u.shape() != c.shape())
        throw ShapeError("cfg_combine: prediction shapes differ");
    if (!(g.w >= 0.0)) throw ConfigError("cfg_combine: guidance scale must be >= 0");
    if (g.rescale_phi && !(*g.rescale_phi >= 0.0 && *g.rescale_phi <= 1.0))
        throw ConfigError("cfg_combine: rescale_phi must be in [0,1]");

    if (g.w == 1.0 && !g.rescale_phi) return pred_cond;

    Tensor out = add_scaled(u, sub(c, u), real(g.w));
    if (!g.rescale_phi) return {pred_cond.kind, out};

    // Per-frame std rescale toward the conditional branch; guards against
    // over-saturation at large w. Zero-variance frames pass through.
    const double phi = *g.rescale_phi;
    const int frames = out.dim(0);
    const std::int64_t chunk = out.size() / frames;
    Tensor res = Tensor::zeros(out.shape());
    auto rd = res.raw_data();
    const real* ov = out.data().data();
    const real* cv = c.data().data();
    for (int t = 0; t < frames; ++t) {
        const std::int64_t base = t * chunk;
        double mo = 0, mc = 0;
        for (std::int64_t i = 0; i < chunk; ++i) {
            mo += ov[base + i];
            mc += cv[base + i];
        }
        mo /= double(chunk);
        mc /= double(chunk);
        double vo = 0, vc = 0;
        for (std::int64_t i = 0; i < chunk; ++i) {
            vo += (ov[base + i] - mo) * (ov[base + i] - mo);
            vc += (cv[base + i] - mc) * (cv[base + i] - mc);
        }
        const double so = std::sqrt(vo / double(chunk));
        const double sc = std::sqrt(vc / double(chunk));
        if (so > 0.0) {
            const double k = phi * (sc / so) + (1.0 - phi);
            for (std::int64_t i = 0; i < chunk; ++i) rd[base + i] = real(double(ov[base + i]) * k);
        } else {
            for (std::int64_t i = 0; i < chunk; ++i) rd[base + i] = ov[base + i];
        }
    }
    return {pred_cond.kind, res};
}

}  // namespace atmv
