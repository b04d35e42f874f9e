// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>

#include "atmv/kernels.hpp"

namespace atmv {

// Counter-based generator: the state is a single 64-bit counter advanced by
// the golden-ratio increment 0x9E3779B97F4A7C15 and hashed with the splitmix64
// finalizer (Steele, Lea, Flood 2014; constants 0xBF58476D1CE4E5B9 and
// 0x94D049BB133111EB). Identical seeds give identical streams on every
// platform. Normals use Box-Muller on two fresh uniforms per draw (the sine
// mate is discarded) so the full generator state is the counter alone and can
// be checkpointed as one integer.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform on [0, 1), 53-bit resolution.
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform on [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). n = 0 is a caller bug.
    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

    double normal();

    void fill_normal(std::span<real> out);
    void fill_uniform(std::span<real> out, real lo, real hi);

    std::uint64_t state() const { return state_; }
    void set_state(std::uint64_t s) { state_ = s; }

    // Stateless stream derivation, used for per-item seeds: the result only
    // depends on (seed, index), never on how many draws happened before.
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t index);

private:
    std::uint64_t state_;
};

}  // namespace atmv
