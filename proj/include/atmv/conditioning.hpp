// SPDX-License-Identifier: Apache-2.0
#pragma once

// Multi-granularity conditioning. Fine detail enters through the input
// layer: the noisy latents are concatenated with a per-frame binary mask and
// the reference-frame latents into a 9-channel input. High-level content
// enters as learned tokens attended to by cross-attention. Classifier-free
// guidance drops only the semantic tokens; the concatenated channels are the
// fidelity mechanism and stay identical in both branches.

#include <map>
#include <optional>
#include <vector>

#include "atmv/schedule.hpp"
#include "atmv/tensor.hpp"

namespace atmv {

// [T,1,h,w] plane, each frame constant 0 or 1.
struct FrameMask {
    Tensor data;
    std::vector<int> conditioned;  // sorted, unique
};

// [T,4,h,w]; zero outside the conditioned frames.
struct ImageConditionLatent {
    Tensor data;
    std::vector<int> conditioned;
};

struct SemanticCondition {
    std::vector<real> vec;
    bool is_null = false;

    static SemanticCondition null(int width) {
        return {std::vector<real>(std::size_t(width), real(0)), true};
    }
};

struct GuidanceConfig {
    double w = 1.0;
    std::optional<double> rescale_phi;  // in [0,1] when set
};

// Learned affine map from a condition vector to n_tokens rows of width
// d_model. Owned by the denoiser, registered under its cross-attention group.
struct SemanticProjection {
    Tensor weight;  // [n_tokens*d_model, cond_width]
    Tensor bias;    // [n_tokens*d_model]
    int n_tokens = 0;
    int d_model = 0;
};

// conditioned must leave at least one frame free to generate.
FrameMask build_frame_mask(int t_clip, const std::vector<int>& conditioned, int h, int w);

// latents maps frame index -> [4,h,w] codec latent for that frame.
ImageConditionLatent build_image_condition_latent(const std::map<int, Tensor>& latents,
                                                  int t_clip, int h, int w);

// Concat[x_t(4) | F_m(1) | F_i(4)] along channels -> [T,9,h,w]. Pure
// concatenation; gradients flow back into x_t.
Tensor assemble_model_input(const Tensor& x_t, const FrameMask& f_m,
                            const ImageConditionLatent& f_i);

// [n_tokens, d_model]; the null condition yields the bias rows.
Tensor semantic_tokens(const SemanticCondition& cond, const SemanticProjection& proj);

// With probability p_drop returns the null condition of equal width.
SemanticCondition drop_condition(const SemanticCondition& cond, double p_drop, Rng& rng);

// out = u + w*(c - u); w == 1 returns the conditional prediction bit-exactly.
// With rescale_phi set, each frame of the result is rescaled toward the
// conditional branch's standard deviation (zero-variance frames are left as
// the plain combination).
Prediction cfg_combine(const Prediction& pred_uncond, const Prediction& pred_cond,
                       const GuidanceConfig& g);

}  // namespace atmv
