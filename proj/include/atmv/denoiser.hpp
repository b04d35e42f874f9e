// SPDX-License-Identifier: Apache-2.0
#pragma once

// Spatio-temporal v-prediction network. Per residual stage: a spatial conv
// block with timestep conditioning, then a temporal block (3-tap temporal
// conv followed by per-location attention across frames), then
// cross-attention to the semantic tokens. All temporal and attention output
// projections start at zero, so the network at init reduces to its spatial
// skeleton and the near-zero output conv makes the initial v-prediction
// vanish. Parameters are named "group/layer/role" with groups partitioned
// exactly into {spatial, temporal, input_layer, cross_attn}.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "atmv/conditioning.hpp"
#include "atmv/schedule.hpp"
#include "atmv/tensor.hpp"

namespace atmv {

struct DenoiserConfig {
    int base_channels = 32;
    int n_res_blocks = 2;
    int n_tokens = 4;
    int d_model = 32;
    int time_embed_dim = 32;
    int t_clip_max = 16;
    int h = 16;  // latent plane extents
    int w = 16;
    int cond_width = 8;

    void validate() const;
};

// Interleaved sinusoidal embedding [sin(t f0), cos(t f0), sin(t f1), ...];
// norm is sqrt(dim/2). t = 0 is allowed for probing.
Tensor timestep_embedding(int t, int dim);

class Denoiser {
public:
    Denoiser(DenoiserConfig cfg, Rng& rng);

    const DenoiserConfig& config() const { return cfg_; }

    // Deterministic order; tensors are leaves shared with the graph.
    const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }
    Tensor param(const std::string& name) const;
    std::int64_t parameter_count() const;

    // "spatial/res0_conv1/weight" -> "spatial"
    static std::string group_of(const std::string& name);
    static const std::vector<std::string>& group_names();

    void set_group_trainable(const std::string& group, bool trainable);

    // Diagnostic switch: skip the temporal blocks entirely, making every
    // frame's output independent of the other frames.
    bool ablate_temporal = false;

    // input9: [T,9,h,w] assembled by conditioning; tokens: [n_tokens,d_model].
    // Returns the v-prediction [T,4,h,w]; finite or it throws.
    Prediction denoise(const Tensor& input9, int t, const Tensor& tokens) const;

    // Exposed stages, mostly for direct testing.
    Tensor temporal_attention(const Tensor& features, int block) const;
    Tensor cross_attention(const Tensor& features, const Tensor& tokens, int block) const;

    const SemanticProjection& projection() const { return proj_; }

private:
    Tensor add_param(const std::string& name, Tensor t);
    Tensor temporal_conv(const Tensor& features, int block) const;
    Tensor spatial_block(const Tensor& features, const Tensor& silu_emb, int block) const;

    DenoiserConfig cfg_;
    int gn_groups_ = 1;
    std::vector<std::pair<std::string, Tensor>> params_;
    std::map<std::string, std::size_t> index_;
    SemanticProjection proj_;
};

}  // namespace atmv
