// SPDX-License-Identifier: Apache-2.0
#include "atmv/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "atmv/codec.hpp"
#include "atmv/errors.hpp"

namespace atmv {

void SamplerConfig::validate() const {
    if (k < 1) throw ConfigError("sampler: k must be >= 1");
    if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("sampler: eta must be in [0,1]");
    if (guidance.w < 0.0) throw ConfigError("sampler: guidance weight must be >= 0");
}

Tensor initial_noise(int t_clip, int h, int w, Rng& rng) {
    if (t_clip < 1 || h < 1 || w < 1) throw ConfigError("initial_noise: extents must be positive");
    return Tensor::randn({t_clip, 4, h, w}, rng);
}

Tensor sample_initial_state(const GenerationJob& job, const SamplerConfig& cfg) {
    if (!job.model) throw UsageError("sample: job has no model");
    const DenoiserConfig& mc = job.model->config();
    if (job.initial_state.defined()) {
        if (job.initial_state.shape() != Shape{job.t_clip, 4, mc.h, mc.w})
            throw ShapeError("sample: initial_state shape mismatch");
        return job.initial_state;
    }
    Rng rng(cfg.seed);
    return initial_noise(job.t_clip, mc.h, mc.w, rng);
}

Tensor ddim_step(const Tensor& x_t, const Prediction& v_hat, int t, int t_prev,
                 const NoiseSchedule& sched, double eta, Rng& rng) {
    if (v_hat.kind != PredKind::v) throw UsageError("ddim_step: prediction must be a v");
    if (t_prev < 0 || t <= t_prev) throw UsageError("ddim_step: timesteps must satisfy t > t_prev >= 0");
    Prediction x0_hat = x0_from_v(x_t, v_hat, t, sched);
    if (t_prev == 0) return x0_hat.value;
    Prediction eps_hat = eps_from_v(x_t, v_hat, t, sched);

    const double a_t = sched.a_at(t), s_t = sched.s_at(t);
    const double a_prev = sched.a_at(t_prev), s_prev = sched.s_at(t_prev);
    const double sigma =
        eta * std::sqrt((s_prev * s_prev) / (s_t * s_t) * (1.0 - (a_t * a_t) / (a_prev * a_prev)));
    const double dir = std::sqrt(std::max(s_prev * s_prev - sigma * sigma, 0.0));

    Tensor out = add_scaled(scale(x0_hat.value, real(a_prev)), eps_hat.value, real(dir));
    if (eta > 0.0 && sigma > 0.0) {
        Tensor z = Tensor::randn(x_t.shape(), rng);
        out = add_scaled(out, z, real(sigma));
    }
    return out;
}

namespace {

// Overwrites conditioned frames with q_sample of their reference at t_prev.
// At t_prev = 0 the forward process is the identity (a = 1, s = 0), so the
// clean reference is imposed directly and no noise is drawn.
Tensor replace_conditioned(const Tensor& x, const std::map<int, Tensor>& refs, int t_prev,
                           const NoiseSchedule& sched, Rng& rng) {
    const int t_clip = x.dim(0);
    std::vector<Tensor> frames;
    frames.reserve(std::size_t(t_clip));
    for (int j = 0; j < t_clip; ++j) {
        auto it = refs.find(j);
        if (it == refs.end()) {
            frames.push_back(slice(x, 0, j, 1));
        } else {
            Tensor ref = reshape(it->second, {1, 4, x.dim(2), x.dim(3)});
            if (t_prev == 0) {
                frames.push_back(ref);
            } else {
                Tensor eps = Tensor::randn(ref.shape(), rng);
                frames.push_back(q_sample(ref, t_prev, eps, sched));
            }
        }
    }
    return concat(frames, 0);
}

}  // namespace

Tensor sample(const GenerationJob& job, const SamplerConfig& cfg) {
    cfg.validate();
    if (!job.model) throw UsageError("sample: job has no model");
    if (!job.schedule) throw UsageError("sample: job has no schedule");
    const Denoiser& model = *job.model;
    const NoiseSchedule& sched = *job.schedule;
    if (!sched.zsnr_applied)
        std::cerr << "warning: sampling on a schedule without zero terminal SNR; "
                     "the last timestep still carries signal\n";

    // The initial state is fixed before conditioning is even assembled.
    Tensor x = sample_initial_state(job, cfg);
    Rng rng(Rng::derive(cfg.seed, 0x5a3f));

    const DenoiserConfig& mc = model.config();
    std::vector<int> conditioned;
    for (const auto& [idx, ref] : job.reference_latents) conditioned.push_back(idx);
    FrameMask f_m = build_frame_mask(job.t_clip, conditioned, mc.h, mc.w);
    ImageConditionLatent f_i =
        build_image_condition_latent(job.reference_latents, job.t_clip, mc.h, mc.w);

    Tensor tokens_cond = semantic_tokens(job.condition, model.projection());
    Tensor tokens_null =
        semantic_tokens(SemanticCondition::null(mc.cond_width), model.projection());
    const bool single_branch = cfg.guidance.w == 1.0 && !cfg.guidance.rescale_phi;

    const std::vector<int> ts = trailing_timesteps(sched.T, cfg.k);
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i];
        const int t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
        Tensor input9 = assemble_model_input(x, f_m, f_i);
        Prediction pred_cond = model.denoise(input9, t, tokens_cond);
        Prediction guided = pred_cond;
        if (!single_branch) {
            Prediction pred_uncond = model.denoise(input9, t, tokens_null);
            guided = cfg_combine(pred_uncond, pred_cond, cfg.guidance);
        }
        x = ddim_step(x, guided, t, t_prev, sched, cfg.eta, rng).detach();
        if (cfg.latent_replacement && !job.reference_latents.empty())
            x = replace_conditioned(x, job.reference_latents, t_prev, sched, rng).detach();
    }
    return x;
}

Tensor predict_continuation(const Denoiser& model, const NoiseSchedule& sched,
                            const std::vector<Tensor>& context, const SemanticCondition& cond,
                            int t_clip, const SamplerConfig& cfg) {
    const int l = int(context.size());
    if (l < 1 || l >= t_clip) throw ConfigError("predict_continuation: need 1 <= L < T_clip");
    GenerationJob job;
    for (int j = 0; j < l; ++j) job.reference_latents[j] = context[std::size_t(j)];
    job.condition = cond;
    job.t_clip = t_clip;
    job.schedule = &sched;
    job.model = &model;
    Tensor latents = sample(job, cfg);
    return slice(latents, 0, l, t_clip - l);
}

int long_video_iterations(int total_frames, int t_clip, int l_overlap) {
    if (total_frames < t_clip) throw ConfigError("long video: total_frames must be >= T_clip");
    if (l_overlap < 1 || l_overlap >= t_clip) throw ConfigError("long video: need 1 <= L < T_clip");
    const int remaining = total_frames - t_clip;
    const int per_pass = t_clip - l_overlap;
    return 1 + (remaining + per_pass - 1) / per_pass;
}

LongVideoResult generate_long_video(const Denoiser& model, const NoiseSchedule& sched,
                                    const Tensor& init_image, const SemanticCondition& cond,
                                    int t_clip, int total_frames, int l_overlap,
                                    const SamplerConfig& cfg) {
    const int passes = long_video_iterations(total_frames, t_clip, l_overlap);
    Tensor ref_latent = encode_frame(init_image);

    GenerationJob first;
    first.reference_latents[0] = ref_latent;
    first.condition = cond;
    first.t_clip = t_clip;
    first.schedule = &sched;
    first.model = &model;
    SamplerConfig pass_cfg = cfg;
    pass_cfg.seed = Rng::derive(cfg.seed, 0);
    Tensor collected = sample(first, pass_cfg);

    for (int pass = 1; pass < passes; ++pass) {
        std::vector<Tensor> context;
        const int have = collected.dim(0);
        for (int j = have - l_overlap; j < have; ++j)
            context.push_back(reshape(slice(collected, 0, j, 1), {4, collected.dim(2), collected.dim(3)}));
        pass_cfg.seed = Rng::derive(cfg.seed, std::uint64_t(pass));
        Tensor fresh = predict_continuation(model, sched, context, cond, t_clip, pass_cfg);
        collected = concat(std::vector<Tensor>{collected, fresh}, 0);
    }
    if (collected.dim(0) > total_frames) collected = slice(collected, 0, 0, total_frames);

    LongVideoResult out;
    out.latents = collected.detach();
    out.passes = passes;
    Tensor decoded = decode_clip(out.latents);  // [N,1,H,W]
    for (int j = 0; j < total_frames; ++j)
        out.frames.push_back(reshape(slice(decoded, 0, j, 1), {1, decoded.dim(2), decoded.dim(3)}));
    return out;
}

Tensor noisy_prior_baseline(const Tensor& x0_ref, double strength, int t_clip,
                            const NoiseSchedule& sched, Rng& rng) {
    if (!(strength >= 0.0 && strength <= 1.0))
        throw ConfigError("noisy_prior_baseline: strength must be in [0,1]");
    if (!x0_ref.defined() || x0_ref.rank() != 3 || x0_ref.dim(0) != 4)
        throw ShapeError("noisy_prior_baseline: reference must be [4,h,w]");
    if (t_clip < 1) throw ConfigError("noisy_prior_baseline: t_clip must be >= 1");
    const int h = x0_ref.dim(1), w = x0_ref.dim(2);

    if (strength == 0.0) return initial_noise(t_clip, h, w, rng);

    const double a_t = sched.a_at(sched.T), s_t = sched.s_at(sched.T);
    if (sched.zsnr_applied)
        std::cerr << "warning: noisy prior on a zero-terminal-SNR schedule; the terminal "
                     "signal coefficient is zero, so the reference does not enter\n";
    Tensor eps_prior = Tensor::randn({4, h, w}, rng);
    Tensor shared = add_scaled(scale(x0_ref, real(a_t)), eps_prior, real(s_t));
    shared = reshape(shared, {1, 4, h, w});

    const double keep = std::sqrt(1.0 - strength * strength);
    std::vector<Tensor> frames;
    frames.reserve(std::size_t(t_clip));
    for (int j = 0; j < t_clip; ++j) {
        Tensor eps_frame = Tensor::randn({1, 4, h, w}, rng);
        frames.push_back(add_scaled(scale(eps_frame, real(keep)), shared, real(strength)));
    }
    return concat(frames, 0);
}

}  // namespace atmv
