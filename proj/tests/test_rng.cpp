// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "atmv/rng.hpp"

using namespace atmv;

namespace {

// Independent restatement of the splitmix64 reference.
std::uint64_t ref_splitmix64(std::uint64_t& s) {
    s += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = s;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace

TEST_CASE("matches the published splitmix64 stream") {
    Rng r(0);
    CHECK(r.next_u64() == 0xE220A8397B1DCDAFull);
    CHECK(r.next_u64() == 0x6E789E6AA1B965F4ull);
    CHECK(r.next_u64() == 0x06C45D188009454Full);

    std::uint64_t s = 0x123456789ABCDEF0ull;
    Rng r2(s);
    for (int i = 0; i < 100; ++i) CHECK(r2.next_u64() == ref_splitmix64(s));
}

TEST_CASE("state is the counter alone and round-trips") {
    Rng r(42);
    (void)r.normal();
    (void)r.uniform();
    const std::uint64_t snap = r.state();
    std::vector<double> a(20), b(20);
    for (auto& v : a) v = r.normal();
    r.set_state(snap);
    for (auto& v : b) v = r.normal();
    CHECK(a == b);

    // One normal consumes exactly two counter steps.
    Rng r3(7);
    const std::uint64_t before = r3.state();
    (void)r3.normal();
    CHECK(r3.state() == before + 2 * 0x9E3779B97F4A7C15ull);
}

TEST_CASE("identical seeds give identical streams, different seeds differ") {
    Rng a(1001), b(1001), c(1002);
    bool all_eq = true, any_diff = false;
    for (int i = 0; i < 64; ++i) {
        const auto x = a.next_u64(), y = b.next_u64(), z = c.next_u64();
        all_eq = all_eq && (x == y);
        any_diff = any_diff || (x != z);
    }
    CHECK(all_eq);
    CHECK(any_diff);
}

TEST_CASE("derive depends only on (seed, index)") {
    const auto k1 = Rng::derive(99, 5);
    Rng burn(99);
    for (int i = 0; i < 17; ++i) (void)burn.next_u64();
    CHECK(Rng::derive(99, 5) == k1);
    CHECK(Rng::derive(99, 6) != k1);
    CHECK(Rng::derive(100, 5) != k1);
}

TEST_CASE("uniform stays in [0,1) and has the right mean") {
    Rng r(2024);
    const int n = 200000;
    double s = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
        const double u = r.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        s += u;
        s2 += u * u;
    }
    const double m = s / n, var = s2 / n - m * m;
    CHECK(std::abs(m - 0.5) < 0.005);
    CHECK(std::abs(var - 1.0 / 12.0) < 0.002);

    for (int i = 0; i < 1000; ++i) {
        const double v = r.uniform(-3.0, 5.0);
        REQUIRE(v >= -3.0);
        REQUIRE(v < 5.0);
    }
}

TEST_CASE("normal moments") {
    Rng r(31337);
    const int n = 200000;
    double s = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal();
        REQUIRE(std::isfinite(x));
        s += x;
        s2 += x * x;
    }
    const double m = s / n, var = s2 / n - m * m;
    CHECK(std::abs(m) < 0.01);
    CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("next_below covers its range") {
    Rng r(5);
    std::vector<int> hits(7, 0);
    for (int i = 0; i < 7000; ++i) {
        const auto v = r.next_below(7);
        REQUIRE(v < 7);
        ++hits[v];
    }
    for (int h : hits) CHECK(h > 800);
}

TEST_CASE("fill_normal advances the counter deterministically") {
    Rng r(88);
    std::vector<real> buf(33);
    const std::uint64_t before = r.state();
    r.fill_normal(buf);
    CHECK(r.state() == before + 2ull * 33 * 0x9E3779B97F4A7C15ull);
    for (real v : buf) REQUIRE(std::isfinite(double(v)));
}
