// SPDX-License-Identifier: Apache-2.0
#pragma once

// Reverse process: DDIM with v-prediction and classifier-free guidance.
// Generation always starts from pure Gaussian noise; the reference image
// enters only through the conditioning channels. The iterative long-video
// driver and the noisy-prior baseline (which deliberately leaks the
// reference into the initial state) live here too.

#include <cstdint>
#include <map>
#include <vector>

#include "atmv/conditioning.hpp"
#include "atmv/denoiser.hpp"
#include "atmv/schedule.hpp"
#include "atmv/tensor.hpp"

namespace atmv {

struct SamplerConfig {
    int k = 50;  // sampling steps, trailing spacing
    double eta = 0.0;
    GuidanceConfig guidance;
    std::uint64_t seed = 0;
    // Re-impose q_sample of the reference on conditioned frames after each
    // step; the final step imposes the clean reference itself.
    bool latent_replacement = false;

    void validate() const;
};

struct GenerationJob {
    std::map<int, Tensor> reference_latents;  // frame index -> [4,h,w]
    SemanticCondition condition;
    int t_clip = 8;
    const NoiseSchedule* schedule = nullptr;
    const Denoiser* model = nullptr;
    // When defined, replaces the pure-noise initial state (A/B baselines).
    Tensor initial_state;
};

// [T,4,h,w] i.i.d. standard normal. Nothing but (shape, rng) flows in.
Tensor initial_noise(int t_clip, int h, int w, Rng& rng);

// The state sample() starts from: job.initial_state if defined, otherwise
// initial_noise seeded by cfg.seed. Reference latents never enter.
Tensor sample_initial_state(const GenerationJob& job, const SamplerConfig& cfg);

// One reverse step t -> t_prev; t_prev = 0 returns x0_hat. rng is consumed
// only when eta > 0 and t_prev > 0.
Tensor ddim_step(const Tensor& x_t, const Prediction& v_hat, int t, int t_prev,
                 const NoiseSchedule& sched, double eta, Rng& rng);

// Full reverse pass; returns final latents [T,4,h,w].
Tensor sample(const GenerationJob& job, const SamplerConfig& cfg);

// Conditions on context frames 0..L-1 and returns the T_clip-L new latent
// frames [T_clip-L,4,h,w].
Tensor predict_continuation(const Denoiser& model, const NoiseSchedule& sched,
                            const std::vector<Tensor>& context, const SemanticCondition& cond,
                            int t_clip, const SamplerConfig& cfg);

struct LongVideoResult {
    std::vector<Tensor> frames;  // total_frames of [1,H,W]
    Tensor latents;              // [total_frames,4,h,w]
    int passes = 0;              // sampling passes run (initial + continuations)
};

// Total sampling passes for an N-frame video: 1 + ceil((N-T_clip)/(T_clip-L)).
int long_video_iterations(int total_frames, int t_clip, int l_overlap);

// First clip by image-conditioned sampling from init_image, then iterative
// continuation on the last l_overlap frames; output truncated to
// total_frames. Per-pass seeds derive from cfg.seed.
LongVideoResult generate_long_video(const Denoiser& model, const NoiseSchedule& sched,
                                    const Tensor& init_image, const SemanticCondition& cond,
                                    int t_clip, int total_frames, int l_overlap,
                                    const SamplerConfig& cfg);

// Initial state with a shared reference component in every frame:
// sqrt(1-lambda^2)*eps_frame + lambda*(a_T*x0_ref + s_T*eps_prior).
// lambda = 0 matches initial_noise draw for draw.
Tensor noisy_prior_baseline(const Tensor& x0_ref, double strength, int t_clip,
                            const NoiseSchedule& sched, Rng& rng);

}  // namespace atmv
