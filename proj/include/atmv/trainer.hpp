// SPDX-License-Identifier: Apache-2.0
#pragma once

// Two-stage training loop. Stage one teaches the spatial pathway on single
// frames; stage two freezes the spatial group and trains the temporal,
// input-layer, and cross-attention groups on full clips. Every random draw
// during step s comes from an rng derived as (seed, s), so resuming from a
// checkpoint at any step replays the exact remaining stream.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "atmv/conditioning.hpp"
#include "atmv/denoiser.hpp"
#include "atmv/schedule.hpp"
#include "atmv/tensor.hpp"
#include "atmv/toydata.hpp"

namespace atmv {

enum class TrainStage { spatial_pretrain, temporal };

struct TrainConfig {
    TrainStage stage = TrainStage::spatial_pretrain;
    int steps = 2000;
    int batch_size = 8;
    double learning_rate = 1e-4;
    double p_drop = 0.1;
    std::uint64_t seed = 0;
    int schedule_T = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    bool zero_terminal_snr = true;
    int eval_every = 500;
    DenoiserConfig model;

    void validate() const;
};

NoiseSchedule build_training_schedule(const TrainConfig& cfg);

struct TrainSample {
    Tensor latents;                // [T,4,h,w] clean clip
    std::vector<int> conditioned;  // frames whose reference latent is supplied
    SemanticCondition condition;
};

// mean((pred - target)^2); zero exactly when the tensors are equal.
Tensor v_mse(const Tensor& predicted_v, const Tensor& target_v);

// One optimization step's loss graph and backward sweep. Per sample the draw
// order is fixed: timestep, noise, condition dropout. Gradients land only on
// trainable groups; the caller applies the optimizer.
double training_step(Denoiser& model, const std::vector<TrainSample>& batch,
                     const NoiseSchedule& sched, const TrainConfig& cfg, Rng& rng);

struct AdamState {
    std::int64_t t = 0;
    // Keyed by parameter name; moments are stored at tensor precision so a
    // checkpoint round trip is exact, the update math itself runs in double.
    std::map<std::string, std::vector<real>> m, v;
};

// Standard bias-corrected Adam (beta1 0.9, beta2 0.999, eps 1e-8) over every
// parameter that carries a gradient; moments appear lazily.
void adam_update(const std::vector<std::pair<std::string, Tensor>>& params, AdamState& state,
                 double lr);

struct CheckpointArray {
    std::uint8_t dtype = 0;  // 0 = f32, 1 = i64
    std::vector<std::uint32_t> dims;
    std::vector<float> f32;
    std::vector<std::int64_t> i64;

    std::uint64_t elements() const;
};

// Named arrays in canonical (lexicographic) order, which is also the byte
// order in the file format.
struct Checkpoint {
    std::map<std::string, CheckpointArray> arrays;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint make_training_checkpoint(const Denoiser& model, const AdamState& adam,
                                    std::int64_t step, const NoiseSchedule& sched,
                                    const TrainConfig& cfg);
void restore_training_state(const Checkpoint& ckpt, Denoiser& model, AdamState& adam,
                            std::int64_t& step);
// The config document echoed into the checkpoint; empty when absent.
std::string checkpoint_config_json(const Checkpoint& ckpt);

std::string train_config_to_json(const TrainConfig& cfg);
// Missing keys keep their defaults; strict mode rejects unknown keys.
TrainConfig train_config_from_json(const std::string& text, bool strict = false);

// Byte copy of every parameter from src into dst; architectures must agree.
void copy_parameters(const Denoiser& src, Denoiser& dst);

// CRC32 over the raw bytes of every parameter in a group, in registry order.
// Equal before/after a run certifies the group never moved.
std::uint32_t parameter_group_crc32(const Denoiser& model, const std::string& group);

struct TrainResult {
    Denoiser model;
    AdamState adam;
    std::vector<double> losses;    // one entry per executed step
    std::vector<std::string> log;  // step, loss, ssim, consistency, motion per eval
};

using CheckpointSink = std::function<void(const Checkpoint&, int step)>;

// init seeds the parameters (stage two requires it or a resume checkpoint);
// resume restores parameters, optimizer state, and the step counter. The
// sink receives a checkpoint at every eval point and at the final step.
TrainResult train(const TrainConfig& cfg, const ToyDataset& data, const Denoiser* init = nullptr,
                  const Checkpoint* resume = nullptr, const CheckpointSink& on_checkpoint = {});

}  // namespace atmv
