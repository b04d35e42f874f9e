// SPDX-License-Identifier: Apache-2.0
#pragma once

// Diffusion noise schedule and the v-parameterization. Coefficient tables are
// kept in double regardless of the tensor precision: the zero-terminal-SNR
// rescale is an affine map whose fixed points (a_1 unchanged, a_T exactly 0)
// must survive recomputation at full precision. Timesteps are 1-based,
// t in [1, T].

#include <vector>

#include "atmv/tensor.hpp"

namespace atmv {

struct NoiseSchedule {
    int T = 0;
    std::vector<double> a;  // a[t-1] = sqrt(alpha_bar_t), signal coefficient
    std::vector<double> s;  // s[t-1] = sqrt(1 - alpha_bar_t), noise coefficient
    bool zsnr_applied = false;

    double a_at(int t) const;
    double s_at(int t) const;
    // (a_t / s_t)^2; zero at t = T once the zsnr rescale has been applied.
    double snr(int t) const;
};

NoiseSchedule build_linear_schedule(int T, double beta_start, double beta_end);

// Affine rescale of the a-sequence so that a_T == 0 exactly while a_1 stays
// fixed: a'_t = (a_t - a_T) * a_1 / (a_1 - a_T). Idempotent.
NoiseSchedule enforce_zero_terminal_snr(const NoiseSchedule& sched);

// x_t = a_t * x0 + s_t * eps
Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched);

enum class PredKind { v, epsilon, x0 };

struct Prediction {
    PredKind kind;
    Tensor value;
};

// v = a_t * eps - s_t * x0
Prediction v_from(const Tensor& x0, const Tensor& eps, int t, const NoiseSchedule& sched);
// x0_hat = a_t * x_t - s_t * v
Prediction x0_from_v(const Tensor& x_t, const Prediction& v, int t, const NoiseSchedule& sched);
// eps_hat = s_t * x_t + a_t * v
Prediction eps_from_v(const Tensor& x_t, const Prediction& v, int t, const NoiseSchedule& sched);

// K timesteps, descending, first == T: t_i = round(T - i*T/K). This is the
// only spacing that visits the terminal (SNR 0) step, hence the default.
std::vector<int> trailing_timesteps(int T, int K);

// Alternative spacings kept for ablation runs.
enum class TimestepSpacing { trailing, leading, linspace };
std::vector<int> spaced_timesteps(int T, int K, TimestepSpacing spacing);

}  // namespace atmv
