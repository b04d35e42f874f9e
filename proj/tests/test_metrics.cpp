// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <string>
#include <vector>

#include <doctest.h>
#include <json.hpp>

#include "atmv/errors.hpp"
#include "atmv/metrics.hpp"
#include "atmv/rng.hpp"
#include "atmv/tensor.hpp"
#include "atmv/toydata.hpp"

using namespace atmv;

namespace {

Tensor const_frame(int h, int w, double v) { return Tensor::full({1, h, w}, real(v)); }

Tensor noise_frame(int h, int w, Rng& rng) {
    auto v = std::vector<real>(std::size_t(h) * w);
    for (auto& x : v) x = real(rng.uniform());
    return Tensor::from_data({1, h, w}, std::move(v));
}

// b(y,x) = a(y, x - dx), entering columns copy the edge.
Tensor shifted_right(const Tensor& a, int dx) {
    const int h = a.dim(1), w = a.dim(2);
    auto src = a.data();
    auto v = std::vector<real>(std::size_t(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            v[std::size_t(y) * w + x] = src[std::size_t(y) * w + std::max(0, x - dx)];
    return Tensor::from_data(a.shape(), std::move(v));
}

}  // namespace

TEST_CASE("ssim: identity, symmetry, range") {
    Rng rng(5);
    Tensor f = noise_frame(16, 16, rng);
    Tensor g = noise_frame(16, 16, rng);
    CHECK(std::abs(ssim(f, f) - 1.0) < 1e-9);
    CHECK(std::abs(ssim(f, g) - ssim(g, f)) < 1e-9);
    const double v = ssim(f, g);
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
}

TEST_CASE("ssim: constant frames match the closed form") {
    Tensor a = const_frame(16, 16, 0.5);
    Tensor b = const_frame(16, 16, 0.6);
    const double av = double(real(0.5)), bv = double(real(0.6));
    const double want = (2 * av * bv + 1e-4) / (av * av + bv * bv + 1e-4);
    CHECK(std::abs(ssim(a, b) - want) < 1e-9);
    CHECK(std::abs(want - 0.9836) < 1e-3);
    CHECK(std::abs(ssim(a, a) - 1.0) < 1e-12);
}

TEST_CASE("ssim: inverted half plane is anti-structured") {
    const int h = 32, w = 32;
    auto v = std::vector<real>(std::size_t(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) v[std::size_t(y) * w + x] = real(x < w / 2 ? 0.0 : 1.0);
    Tensor f = Tensor::from_data({1, h, w}, v);
    for (auto& x : v) x = real(1.0) - x;
    Tensor inv = Tensor::from_data({1, h, w}, std::move(v));
    CHECK(ssim(f, inv) < 0.0);
}

TEST_CASE("ssim validation") {
    Rng rng(3);
    CHECK_THROWS_AS(ssim(noise_frame(16, 16, rng), noise_frame(16, 18, rng)), ShapeError);
    CHECK_THROWS_AS(ssim(noise_frame(6, 16, rng), noise_frame(6, 16, rng)), ShapeError);
    CHECK_THROWS_AS(ssim(Tensor::zeros({16, 16}), Tensor::zeros({16, 16})), ShapeError);
}

TEST_CASE("temporal consistency: static, alternating, degenerate") {
    Rng rng(9);
    Tensor f = noise_frame(16, 16, rng);
    CHECK(temporal_consistency({f, f, f}) == doctest::Approx(1.0).epsilon(1e-12));

    // Mean-zero pattern and its negation.
    auto v = std::vector<real>(256);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = real(i % 2 == 0 ? 1.0 : -1.0);
    Tensor p = Tensor::from_data({1, 16, 16}, v);
    for (auto& x : v) x = -x;
    Tensor n = Tensor::from_data({1, 16, 16}, std::move(v));
    CHECK(temporal_consistency({p, n, p, n}) == doctest::Approx(-1.0).epsilon(1e-12));

    // Zero-variance rules.
    CHECK(temporal_consistency({const_frame(16, 16, 0.3), const_frame(16, 16, 0.3)}) == 1.0);
    CHECK(temporal_consistency({const_frame(16, 16, 0.3), const_frame(16, 16, 0.4)}) == 0.0);
    CHECK(temporal_consistency({const_frame(16, 16, 0.3), f}) == 0.0);

    CHECK_THROWS_AS(temporal_consistency({f}), UsageError);
    CHECK_THROWS_AS(temporal_consistency({}), UsageError);
}

TEST_CASE("temporal consistency: toy clips stay high") {
    ToyDataset data = make_dataset(20, 8, 32, 32, 77);
    double total = 0;
    for (int i = 0; i < 20; ++i) total += temporal_consistency(data.clip(i).frames);
    CHECK(total / 20.0 > 0.8);
}

TEST_CASE("motion intensity: static and translation oracles") {
    Rng rng(13);
    Tensor f = noise_frame(32, 32, rng);
    CHECK(motion_intensity({f, f, f}) == 0.0);

    Tensor s1 = shifted_right(f, 1);
    CHECK(std::abs(motion_intensity({f, s1}) - 1.0) < 0.1);

    Tensor s2 = shifted_right(f, 2);
    const double m1 = motion_intensity({f, s1});
    const double m2 = motion_intensity({f, s2});
    CHECK(std::abs(m2 - 2.0) < 0.5);
    CHECK(std::abs(m2 - 2.0 * m1) < 0.5);

    CHECK_THROWS_AS(motion_intensity({f}), UsageError);
}

TEST_CASE("motion intensity: toy clip matches scripted velocity") {
    SceneSpec s;
    s.shape_class = ShapeClass::square;
    s.x0 = 0.25;
    s.y0 = 0.5;
    s.vx = 2.0 / 32.0;
    s.vy = 0.0;
    s.radius = 0.15;
    s.intensity = 1.0;
    auto frames = render_video(s, 8, 32, 32);
    CHECK(std::abs(motion_intensity(frames) - 2.0) < 0.5);
}

TEST_CASE("evaluate: static copy scores (1, 1, 0)") {
    SceneSpec s;
    s.x0 = 0.5;
    s.y0 = 0.5;
    s.radius = 0.2;
    auto one = render_video(s, 4, 16, 16);
    std::vector<std::vector<Tensor>> gen = {one, one, one};
    std::vector<Tensor> refs = {one[0], one[0], one[0]};
    MetricsReport r = evaluate(gen, refs);
    CHECK(r.n_videos == 3);
    REQUIRE(r.rows.size() == 3);
    CHECK(r.ssim_first_frame == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(r.temporal_consistency == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(r.motion_intensity == 0.0);

    CHECK_THROWS_AS(evaluate(gen, {one[0]}), UsageError);
    CHECK_THROWS_AS(evaluate({}, {}), UsageError);
}

TEST_CASE("report emission is deterministic and structured") {
    ToyDataset data = make_dataset(4, 6, 32, 32, 5);
    std::vector<std::vector<Tensor>> gen;
    std::vector<Tensor> refs;
    for (int i = 0; i < 3; ++i) {
        auto clip = data.clip(i);
        gen.push_back(clip.frames);
        refs.push_back(clip.frames[0]);
    }
    MetricsReport a = evaluate(gen, refs);
    MetricsReport b = evaluate(gen, refs);
    CHECK(report_tsv(a) == report_tsv(b));
    CHECK(report_json(a) == report_json(b));

    const std::string tsv = report_tsv(a);
    CHECK(tsv.find("pixels per frame") != std::string::npos);
    CHECK(tsv.find("ssim_first_frame\ttemporal_consistency\tmotion_intensity") != std::string::npos);
    CHECK(tsv.find("mean\t") != std::string::npos);

    auto j = nlohmann::json::parse(report_json(a));
    CHECK(j["n_videos"] == 3);
    CHECK(j["videos"].size() == 3);
    CHECK(std::abs(double(j["mean"]["ssim_first_frame"]) - a.ssim_first_frame) < 1e-9);

    // Perfect self-reconstruction scores ssim 1 with real motion.
    CHECK(a.ssim_first_frame == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(a.motion_intensity > 0.0);
}
