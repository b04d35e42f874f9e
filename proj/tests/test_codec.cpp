// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <vector>

#include "atmv/codec.hpp"
#include "atmv/rng.hpp"

using namespace atmv;

namespace {

Tensor random_frame(int H, int W, Rng& rng) {
    Tensor f = Tensor::zeros({1, H, W});
    auto d = f.raw_data();
    for (auto& v : d) v = real(rng.uniform());
    return f;
}

double dot_all(const Tensor& a, const Tensor& b) {
    double s = 0;
    for (std::int64_t i = 0; i < a.size(); ++i) s += double(a.data()[i]) * double(b.data()[i]);
    return s;
}

}  // namespace

TEST_CASE("constant frame concentrates in LL") {
    const real v = real(0.37);
    Tensor f = Tensor::full({1, 8, 8}, v);
    Tensor z = encode_frame(f);
    CHECK(z.shape() == Shape{4, 4, 4});
    const std::int64_t plane = 16;
    for (std::int64_t i = 0; i < plane; ++i)
        CHECK(double(z.data()[i]) == doctest::Approx(2.0 * double(v)).epsilon(1e-6));
    for (std::int64_t i = plane; i < 4 * plane; ++i) CHECK(z.data()[i] == real(0));

    Tensor zero = encode_frame(Tensor::zeros({1, 8, 8}));
    for (real x : zero.data()) CHECK(x == real(0));
}

TEST_CASE("vertical stripes land in LL and LH") {
    Tensor f = Tensor::zeros({1, 4, 4});
    auto d = f.raw_data();
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) d[y * 4 + x] = (x % 2 == 0) ? real(1) : real(0);
    Tensor z = encode_frame(f);
    const std::int64_t plane = 4;
    for (std::int64_t i = 0; i < plane; ++i) {
        CHECK(z.data()[i] == real(1));              // LL
        CHECK(z.data()[plane + i] == real(1));      // LH
        CHECK(z.data()[2 * plane + i] == real(0));  // HL
        CHECK(z.data()[3 * plane + i] == real(0));  // HH
    }
}

TEST_CASE("LL-only latent decodes to a constant frame") {
    Tensor z = Tensor::zeros({4, 3, 5});
    auto d = z.raw_data();
    for (int i = 0; i < 15; ++i) d[i] = real(2);
    Tensor f = decode_frame(z);
    CHECK(f.shape() == Shape{1, 6, 10});
    for (real v : f.data()) CHECK(double(v) == doctest::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("round trip is exact within tolerance") {
    Rng rng(7);
    for (auto [H, W] : {std::pair{8, 8}, std::pair{8, 10}, std::pair{16, 12}, std::pair{32, 32}}) {
        Tensor f = random_frame(H, W, rng);
        Tensor z = encode_frame(f);
        CHECK(z.shape() == Shape{4, H / 2, W / 2});
        Tensor g = decode_frame(z);
        CHECK(g.shape() == f.shape());
        double worst = 0;
        for (std::int64_t i = 0; i < f.size(); ++i)
            worst = std::max(worst, std::abs(double(f.data()[i]) - double(g.data()[i])));
        CHECK(worst < 1e-6);
    }
}

TEST_CASE("transform is orthonormal") {
    Rng rng(8);
    Tensor f = random_frame(16, 16, rng);
    Tensor g = random_frame(16, 16, rng);
    const double lhs = dot_all(encode_frame(f), encode_frame(g));
    const double rhs = dot_all(f, g);
    CHECK(std::abs(lhs - rhs) < 1e-5);

    // energy preservation is the f == g case
    const double ez = dot_all(encode_frame(f), encode_frame(f));
    const double ef = dot_all(f, f);
    CHECK(std::abs(std::sqrt(ez) - std::sqrt(ef)) < 1e-5);
}

TEST_CASE("shape violations raise dimension errors") {
    Rng rng(9);
    CHECK_THROWS_AS(encode_frame(random_frame(7, 8, rng)), ShapeError);
    CHECK_THROWS_AS(encode_frame(random_frame(8, 9, rng)), ShapeError);
    CHECK_THROWS_AS(encode_frame(Tensor::zeros({2, 8, 8})), ShapeError);
    CHECK_THROWS_AS(encode_frame(Tensor::zeros({8, 8})), ShapeError);
    CHECK_THROWS_AS(decode_frame(Tensor::zeros({1, 8, 8})), ShapeError);
    CHECK_THROWS_AS(decode_frame(Tensor::zeros({4, 4})), ShapeError);
}

TEST_CASE("clip codec matches the per-frame codec") {
    Rng rng(10);
    const int T = 3, H = 8, W = 12;
    Tensor clip = Tensor::zeros({T, 1, H, W});
    auto d = clip.raw_data();
    for (auto& v : d) v = real(rng.uniform());
    Tensor z = encode_clip(clip);
    CHECK(z.shape() == Shape{T, 4, H / 2, W / 2});
    for (int t = 0; t < T; ++t) {
        Tensor ft = reshape(slice(clip, 0, t, 1), {1, H, W});
        Tensor zt = encode_frame(ft);
        for (std::int64_t i = 0; i < zt.size(); ++i)
            CHECK(z.data()[t * zt.size() + i] == zt.data()[i]);
    }
    Tensor back = decode_clip(z);
    double worst = 0;
    for (std::int64_t i = 0; i < clip.size(); ++i)
        worst = std::max(worst, std::abs(double(clip.data()[i]) - double(back.data()[i])));
    CHECK(worst < 1e-6);
    CHECK_THROWS_AS(encode_clip(Tensor::zeros({3, 2, 8, 8})), ShapeError);
    CHECK_THROWS_AS(decode_clip(Tensor::zeros({3, 1, 8, 8})), ShapeError);
}
