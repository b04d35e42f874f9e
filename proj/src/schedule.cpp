// SPDX-License-Identifier: Apache-2.0
#include "atmv/schedule.hpp"

#include <cmath>

namespace atmv {

namespace {

void check_t(const NoiseSchedule& sched, int t, const char* op) {
    if (sched.T < 1) throw UsageError(std::string(op) + ": schedule is empty");
    if (t < 1 || t > sched.T)
        throw UsageError(std::string(op) + ": timestep " + std::to_string(t) +
                         " outside [1," + std::to_string(sched.T) + "]");
}

}  // namespace

double NoiseSchedule::a_at(int t) const {
    check_t(*this, t, "a_at");
    return a[std::size_t(t) - 1];
}

double NoiseSchedule::s_at(int t) const {
    check_t(*this, t, "s_at");
    return s[std::size_t(t) - 1];
}

double NoiseSchedule::snr(int t) const {
    const double at = a_at(t), st = s_at(t);
    return (at / st) * (at / st);
}

NoiseSchedule build_linear_schedule(int T, double beta_start, double beta_end) {
    if (T < 2) throw ConfigError("schedule: T must be at least 2, got " + std::to_string(T));
    if (!(beta_start > 0.0) || !(beta_start < beta_end) || !(beta_end < 1.0))
        throw ConfigError("schedule: betas must satisfy 0 < start < end < 1");
    NoiseSchedule sched;
    sched.T = T;
    sched.a.resize(std::size_t(T));
    sched.s.resize(std::size_t(T));
    double alpha_bar = 1.0;
    for (int t = 1; t <= T; ++t) {
        const double beta = beta_start + (beta_end - beta_start) * double(t - 1) / double(T - 1);
        alpha_bar *= 1.0 - beta;
        sched.a[std::size_t(t) - 1] = std::sqrt(alpha_bar);
        sched.s[std::size_t(t) - 1] = std::sqrt(1.0 - alpha_bar);
    }
    return sched;
}

NoiseSchedule enforce_zero_terminal_snr(const NoiseSchedule& sched) {
    if (sched.T < 2) throw ConfigError("zsnr: schedule is empty");
    const double a1 = sched.a.front(), aT = sched.a.back();
    if (!(a1 > aT)) throw ConfigError("zsnr: degenerate schedule, a_1 must exceed a_T");
    NoiseSchedule out = sched;
    const double gain = a1 / (a1 - aT);
    for (int t = 1; t <= sched.T; ++t) {
        const double at = (sched.a[std::size_t(t) - 1] - aT) * gain;
        out.a[std::size_t(t) - 1] = at;
        out.s[std::size_t(t) - 1] = std::sqrt(1.0 - at * at);
    }
    out.a.back() = 0.0;  // forced exactly, not just within rounding
    out.s.back() = 1.0;
    out.zsnr_applied = true;
    return out;
}

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
    check_t(sched, t, "q_sample");
    return add_scaled(scale(x0, real(sched.a_at(t))), eps, real(sched.s_at(t)));
}

Prediction v_from(const Tensor& x0, const Tensor& eps, int t, const NoiseSchedule& sched) {
    check_t(sched, t, "v_from");
    return {PredKind::v, add_scaled(scale(eps, real(sched.a_at(t))), x0, real(-sched.s_at(t)))};
}

Prediction x0_from_v(const Tensor& x_t, const Prediction& v, int t, const NoiseSchedule& sched) {
    check_t(sched, t, "x0_from_v");
    if (v.kind != PredKind::v) throw UsageError("x0_from_v: prediction kind must be v");
    return {PredKind::x0,
            add_scaled(scale(x_t, real(sched.a_at(t))), v.value, real(-sched.s_at(t)))};
}

Prediction eps_from_v(const Tensor& x_t, const Prediction& v, int t, const NoiseSchedule& sched) {
    check_t(sched, t, "eps_from_v");
    if (v.kind != PredKind::v) throw UsageError("eps_from_v: prediction kind must be v");
    return {PredKind::epsilon,
            add_scaled(scale(x_t, real(sched.s_at(t))), v.value, real(sched.a_at(t)))};
}

std::vector<int> trailing_timesteps(int T, int K) {
    if (K < 1 || K > T)
        throw ConfigError("trailing_timesteps: K=" + std::to_string(K) + " outside [1," +
                          std::to_string(T) + "]");
    auto ts = std::vector<int>(std::size_t(K));
    for (int i = 0; i < K; ++i)
        ts[std::size_t(i)] = int(std::llround(double(T) - double(i) * double(T) / double(K)));
    for (int i = 1; i < K; ++i)
        if (ts[std::size_t(i)] >= ts[std::size_t(i - 1)] || ts[std::size_t(i)] < 1)
            throw InvariantError("trailing_timesteps: spacing is not strictly decreasing");
    return ts;
}

std::vector<int> spaced_timesteps(int T, int K, TimestepSpacing spacing) {
    if (spacing == TimestepSpacing::trailing) return trailing_timesteps(T, K);
    if (K < 1 || K > T)
        throw ConfigError("spaced_timesteps: K=" + std::to_string(K) + " outside [1," +
                          std::to_string(T) + "]");
    auto ts = std::vector<int>(std::size_t(K));
    if (spacing == TimestepSpacing::leading) {
        const int stride = T / K;
        for (int i = 0; i < K; ++i) ts[std::size_t(K - 1 - i)] = 1 + i * stride;
    } else {  // linspace
        if (K == 1) {
            ts[0] = T;
        } else {
            for (int i = 0; i < K; ++i)
                ts[std::size_t(i)] =
                    int(std::llround(double(T) - double(i) * double(T - 1) / double(K - 1)));
        }
    }
    return ts;
}

}  // namespace atmv
