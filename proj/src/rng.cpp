// SPDX-License-Identifier: Apache-2.0

#include "atmv/rng.hpp"

#include <cmath>
#include <numbers>

namespace atmv {

double Rng::normal() {
    // u1 in (0, 1] keeps the log finite.
    const double u1 = double((next_u64() >> 11) + 1) * 0x1.0p-53;
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void Rng::fill_normal(std::span<real> out) {
    for (real& v : out) v = real(normal());
}

void Rng::fill_uniform(std::span<real> out, real lo, real hi) {
    for (real& v : out) v = real(uniform(double(lo), double(hi)));
}

std::uint64_t Rng::derive(std::uint64_t seed, std::uint64_t index) {
    Rng h(seed ^ (index * 0xD1B54A32D192ED03ull + 0x2545F4914F6CDD1Dull));
    return h.next_u64();
}

}  // namespace atmv
