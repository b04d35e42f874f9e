// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>
#include <string>
#include <vector>

#include <doctest.h>

#include "atmv/conditioning.hpp"
#include "atmv/denoiser.hpp"
#include "atmv/errors.hpp"
#include "atmv/rng.hpp"
#include "atmv/tensor.hpp"

using namespace atmv;

namespace {

#ifdef ATMV_REAL_IS_DOUBLE
constexpr double kFdEps = 1e-5;
constexpr double kFdTol = 1e-6;
#else
constexpr double kFdEps = 1e-2;
constexpr double kFdTol = 1e-3;
#endif

DenoiserConfig tiny_config() {
    DenoiserConfig cfg;
    cfg.base_channels = 8;
    cfg.n_res_blocks = 1;
    cfg.n_tokens = 2;
    cfg.d_model = 8;
    cfg.time_embed_dim = 8;
    cfg.t_clip_max = 4;
    cfg.h = 4;
    cfg.w = 4;
    cfg.cond_width = 3;
    return cfg;
}

// Pushes every parameter off its init point so zero-initialized projections
// become live and gradients are well scaled.
void nudge(Denoiser& model, double sigma, std::uint64_t seed) {
    Rng rng(seed);
    for (auto [name, p] : model.parameters()) {
        auto v = p.raw_data();
        for (auto& x : v) x += real(rng.normal() * sigma);
    }
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    return std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(real)) == 0;
}

Tensor reverse_frames(const Tensor& x) {
    const int t = x.dim(0);
    const std::int64_t chunk = x.size() / t;
    auto src = x.data();
    std::vector<real> v(std::size_t(x.size()));
    for (int i = 0; i < t; ++i)
        std::copy_n(src.data() + std::int64_t(t - 1 - i) * chunk, chunk,
                    v.data() + std::int64_t(i) * chunk);
    return Tensor::from_data(x.shape(), std::move(v));
}

double max_abs(std::span<const real> v) {
    double m = 0;
    for (real x : v) m = std::max(m, std::abs(double(x)));
    return m;
}

std::int64_t expected_param_count(const DenoiserConfig& cfg) {
    const std::int64_t c = cfg.base_channels, e = cfg.time_embed_dim, d = cfg.d_model;
    const std::int64_t r = cfg.n_res_blocks;
    std::int64_t input_layer = c * 9 * 9 + c;
    std::int64_t spatial = 2 * (e * e + e);
    spatial += r * (2 * c + (9 * c * c + c) + (2 * c * e + 2 * c) + 2 * c + (9 * c * c + c));
    spatial += 2 * c + (2 * c * e + 2 * c) + (36 * c + 4);
    std::int64_t temporal = std::int64_t(cfg.t_clip_max) * c;
    temporal += r * (2 * c + 3 * c * c + c + (c * c + c) + 2 * c + 4 * c * c);
    std::int64_t tok = std::int64_t(cfg.n_tokens) * d;
    std::int64_t cross = tok * cfg.cond_width + tok;
    cross += r * (2 * c + d * c + d * d + d * d + c * d);
    return input_layer + spatial + temporal + cross;
}

}  // namespace

TEST_CASE("config validation") {
    DenoiserConfig cfg = tiny_config();
    CHECK_NOTHROW(cfg.validate());
    for (int* f : {&cfg.base_channels, &cfg.n_res_blocks, &cfg.n_tokens, &cfg.d_model,
                   &cfg.time_embed_dim, &cfg.t_clip_max, &cfg.h, &cfg.w, &cfg.cond_width}) {
        const int keep = *f;
        *f = 0;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
        *f = -3;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
        *f = keep;
    }
    cfg.time_embed_dim = 7;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("timestep embedding layout and norm") {
    Tensor z = timestep_embedding(0, 12);
    REQUIRE(z.shape() == Shape{1, 12});
    for (int i = 0; i < 6; ++i) {
        CHECK(z.data()[std::size_t(2 * i)] == real(0));
        CHECK(z.data()[std::size_t(2 * i + 1)] == real(1));
    }
    for (int t : {0, 1, 537, 1000}) {
        Tensor emb = timestep_embedding(t, 32);
        double n2 = 0;
        for (real x : emb.data()) n2 += double(x) * double(x);
        CHECK(std::abs(std::sqrt(n2) - std::sqrt(16.0)) < 1e-5);
    }
    // First pair is plain sin/cos of t.
    Tensor one = timestep_embedding(7, 16);
    CHECK(std::abs(double(one.data()[0]) - std::sin(7.0)) < 1e-6);
    CHECK(std::abs(double(one.data()[1]) - std::cos(7.0)) < 1e-6);

    CHECK_THROWS_AS(timestep_embedding(5, 7), ConfigError);
    CHECK_THROWS_AS(timestep_embedding(5, 0), ConfigError);
    CHECK_THROWS_AS(timestep_embedding(-1, 8), UsageError);
}

TEST_CASE("timestep embedding is injective over the schedule range") {
    std::set<std::vector<real>> seen;
    for (int t = 1; t <= 1000; ++t) {
        Tensor emb = timestep_embedding(t, 32);
        seen.emplace(emb.data().begin(), emb.data().end());
    }
    CHECK(seen.size() == 1000);
}

TEST_CASE("init is deterministic per seed") {
    Rng r1(7), r2(7), r3(8);
    Denoiser a(tiny_config(), r1), b(tiny_config(), r2), c(tiny_config(), r3);
    REQUIRE(a.parameters().size() == b.parameters().size());
    bool all_same = true, differs_from_c = false;
    for (std::size_t i = 0; i < a.parameters().size(); ++i) {
        const auto& [na, ta] = a.parameters()[i];
        const auto& [nb, tb] = b.parameters()[i];
        CHECK(na == nb);
        REQUIRE(ta.shape() == tb.shape());
        if (!bitwise_equal(ta, tb)) all_same = false;
        if (!bitwise_equal(ta, c.parameters()[i].second)) differs_from_c = true;
    }
    CHECK(all_same);
    CHECK(differs_from_c);
}

TEST_CASE("near-zero init of output conv and conditioning slice") {
    Rng rng(11);
    Denoiser model(tiny_config(), rng);
    CHECK(max_abs(model.param("spatial/out_conv/weight").data()) < 1e-4);
    CHECK(max_abs(model.param("spatial/out_conv/bias").data()) == 0.0);

    Tensor w = model.param("input_layer/conv/weight");  // [C,9,3,3]
    const int c = model.config().base_channels;
    double live = 0, cond = 0;
    auto v = w.data();
    for (int co = 0; co < c; ++co)
        for (int ci = 0; ci < 9; ++ci)
            for (int k = 0; k < 9; ++k) {
                const double x = std::abs(double(v[std::size_t((co * 9 + ci) * 9 + k)]));
                (ci < 4 ? live : cond) = std::max(ci < 4 ? live : cond, x);
            }
    CHECK(cond < 1e-4);
    CHECK(live > 1e-3);

    // Zero-initialized output projections of the residual insertions.
    CHECK(max_abs(model.param("temporal/t0_conv_out/weight").data()) == 0.0);
    CHECK(max_abs(model.param("temporal/t0_attn/wo").data()) == 0.0);
    CHECK(max_abs(model.param("cross_attn/x0/wo").data()) == 0.0);
}

TEST_CASE("parameter registry: count, groups, lookup") {
    for (auto cfg : {tiny_config(), DenoiserConfig{}}) {
        Rng rng(3);
        Denoiser model(cfg, rng);
        CHECK(model.parameter_count() == expected_param_count(cfg));

        const auto& groups = Denoiser::group_names();
        std::set<std::string> seen;
        for (const auto& [name, t] : model.parameters()) {
            const std::string g = Denoiser::group_of(name);
            CHECK(std::find(groups.begin(), groups.end(), g) != groups.end());
            seen.insert(g);
            CHECK(t.requires_grad());
        }
        CHECK(seen.size() == 4);
    }
    Rng rng(3);
    Denoiser model(tiny_config(), rng);
    CHECK(model.param("temporal/pos_emb/weight").shape() ==
          Shape{tiny_config().t_clip_max, tiny_config().base_channels});
    CHECK_THROWS_AS(model.param("spatial/nonexistent/weight"), UsageError);
    CHECK_THROWS_AS(Denoiser::group_of("noslash"), UsageError);
    CHECK_THROWS_AS(model.set_group_trainable("decoder", false), UsageError);
}

TEST_CASE("denoise: shape law, determinism, finiteness") {
    Rng rng(21);
    Denoiser model(tiny_config(), rng);
    nudge(model, 0.05, 99);
    Tensor input9 = Tensor::randn({3, 9, 4, 4}, rng);
    Tensor tokens = Tensor::randn({2, 8}, rng);

    Prediction p1 = model.denoise(input9, 5, tokens);
    CHECK(p1.kind == PredKind::v);
    REQUIRE(p1.value.shape() == Shape{3, 4, 4, 4});
    CHECK(all_finite(p1.value.data()));

    Prediction p2 = model.denoise(input9, 5, tokens);
    CHECK(bitwise_equal(p1.value, p2.value));

    Prediction p3 = model.denoise(input9, 6, tokens);
    CHECK_FALSE(bitwise_equal(p1.value, p3.value));
}

TEST_CASE("denoise input validation") {
    Rng rng(5);
    Denoiser model(tiny_config(), rng);
    Tensor ok = Tensor::randn({2, 9, 4, 4}, rng);
    Tensor tokens = Tensor::randn({2, 8}, rng);
    CHECK_THROWS_AS(model.denoise(Tensor::randn({2, 4, 4, 4}, rng), 5, tokens), ShapeError);
    CHECK_THROWS_AS(model.denoise(Tensor::randn({2, 9, 6, 4}, rng), 5, tokens), ShapeError);
    CHECK_THROWS_AS(model.denoise(ok, 0, tokens), UsageError);
    CHECK_THROWS_AS(model.denoise(ok, -2, tokens), UsageError);
    CHECK_THROWS_AS(model.denoise(Tensor::randn({5, 9, 4, 4}, rng), 5, tokens), UsageError);
    CHECK_THROWS_AS(model.denoise(ok, 5, Tensor::randn({3, 8}, rng)), ShapeError);
    CHECK_THROWS_AS(model.denoise(ok, 5, Tensor::randn({2, 7}, rng)), ShapeError);
}

TEST_CASE("network at init predicts near-zero v") {
    DenoiserConfig cfg;
    cfg.h = 8;
    cfg.w = 8;
    cfg.t_clip_max = 8;
    Rng rng(17);
    Denoiser model(cfg, rng);
    Tensor input9 = Tensor::randn({4, 9, 8, 8}, rng);
    Tensor tokens = semantic_tokens(SemanticCondition::null(cfg.cond_width), model.projection());
    Prediction p = model.denoise(input9, 500, tokens);
    CHECK(max_abs(p.value.data()) < 1e-3);
}

TEST_CASE("attention stages are bit-exact identities at init") {
    Rng rng(31);
    Denoiser model(tiny_config(), rng);
    Tensor feat = Tensor::randn({3, 8, 4, 4}, rng);
    Tensor tokens = Tensor::randn({2, 8}, rng);

    CHECK(bitwise_equal(model.temporal_attention(feat, 0), feat));
    CHECK(bitwise_equal(model.cross_attention(feat, tokens, 0), feat));

    // Once the output projections move, the stages act.
    nudge(model, 0.05, 4);
    CHECK_FALSE(bitwise_equal(model.temporal_attention(feat, 0), feat));
    CHECK_FALSE(bitwise_equal(model.cross_attention(feat, tokens, 0), feat));
}

TEST_CASE("temporal attention is not permutation equivariant") {
    Rng rng(41);
    Denoiser model(tiny_config(), rng);
    nudge(model, 0.05, 8);
    Tensor feat = Tensor::randn({4, 8, 4, 4}, rng);

    Tensor out_then_rev = reverse_frames(model.temporal_attention(feat, 0));
    Tensor rev_then_out = model.temporal_attention(reverse_frames(feat), 0);
    REQUIRE(out_then_rev.shape() == rev_then_out.shape());
    double diff = 0;
    for (std::int64_t i = 0; i < out_then_rev.size(); ++i)
        diff = std::max(diff, std::abs(double(out_then_rev.data()[std::size_t(i)]) -
                                       double(rev_then_out.data()[std::size_t(i)])));
    CHECK(diff > 1e-4);
}

TEST_CASE("attention stage validation") {
    Rng rng(51);
    Denoiser model(tiny_config(), rng);
    Tensor feat = Tensor::randn({3, 8, 4, 4}, rng);
    CHECK_THROWS_AS(model.temporal_attention(Tensor::randn({5, 8, 4, 4}, rng), 0), UsageError);
    CHECK_THROWS_AS(model.temporal_attention(Tensor::randn({3, 7, 4, 4}, rng), 0), ShapeError);
    CHECK_THROWS_AS(model.temporal_attention(feat, 1), UsageError);
    CHECK_THROWS_AS(model.cross_attention(feat, Tensor::randn({2, 9}, rng), 0), ShapeError);
    CHECK_THROWS_AS(model.cross_attention(feat, Tensor::randn({2, 8}, rng), 3), UsageError);
}

TEST_CASE("group freezing stops gradients and tape pruning works") {
    Rng rng(61);
    Denoiser model(tiny_config(), rng);
    nudge(model, 0.05, 10);
    Tensor input9 = Tensor::randn({2, 9, 4, 4}, rng);
    Tensor tokens = Tensor::randn({2, 8}, rng);

    model.set_group_trainable("spatial", false);
    Tensor v = model.denoise(input9, 3, tokens).value;
    mean(mul(v, v)).backward();
    for (const auto& [name, p] : model.parameters()) {
        if (Denoiser::group_of(name) == "spatial") {
            CHECK_FALSE(p.requires_grad());
            CHECK_FALSE(p.has_grad());
        } else {
            CHECK(p.requires_grad());
        }
    }
    // At least the live groups accumulated nonzero gradient somewhere.
    for (const std::string g : {"temporal", "cross_attn", "input_layer"}) {
        double got = 0;
        for (const auto& [name, p] : model.parameters())
            if (Denoiser::group_of(name) == g && p.has_grad()) got = std::max(got, max_abs(p.grad()));
        CHECK(got > 0.0);
    }

    // All groups frozen: inference builds no tape.
    for (const auto& g : Denoiser::group_names()) model.set_group_trainable(g, false);
    Tensor v2 = model.denoise(input9, 3, tokens).value;
    CHECK_FALSE(v2.requires_grad());

    for (const auto& g : Denoiser::group_names()) model.set_group_trainable(g, true);
    Tensor v3 = model.denoise(input9, 3, tokens).value;
    CHECK(v3.requires_grad());
    CHECK(bitwise_equal(v2, v3));
}

TEST_CASE("ablate_temporal makes frames independent") {
    Rng rng(71);
    Denoiser model(tiny_config(), rng);
    nudge(model, 0.05, 12);
    Tensor tokens = Tensor::randn({2, 8}, rng);

    Tensor a = Tensor::randn({4, 9, 4, 4}, rng);
    std::vector<real> bv(a.data().begin(), a.data().end());
    const std::int64_t chunk = a.size() / 4;
    Rng alt(500);
    for (std::int64_t i = 2 * chunk; i < 3 * chunk; ++i) bv[std::size_t(i)] = real(alt.normal());
    Tensor b = Tensor::from_data(a.shape(), std::move(bv));

    model.ablate_temporal = true;
    Tensor va = model.denoise(a, 5, tokens).value;
    Tensor vb = model.denoise(b, 5, tokens).value;
    const std::int64_t out_chunk = va.size() / 4;
    for (int f : {0, 1, 3})
        CHECK(std::memcmp(va.data().data() + f * out_chunk, vb.data().data() + f * out_chunk,
                          std::size_t(out_chunk) * sizeof(real)) == 0);
    CHECK(std::memcmp(va.data().data() + 2 * out_chunk, vb.data().data() + 2 * out_chunk,
                      std::size_t(out_chunk) * sizeof(real)) != 0);

    // With temporal blocks live, the edit leaks into neighboring frames.
    model.ablate_temporal = false;
    Tensor wa = model.denoise(a, 5, tokens).value;
    Tensor wb = model.denoise(b, 5, tokens).value;
    CHECK(std::memcmp(wa.data().data(), wb.data().data(), std::size_t(out_chunk) * sizeof(real)) != 0);
}

TEST_CASE("finite-difference gradients through the full network") {
    Rng rng(81);
    Denoiser model(tiny_config(), rng);
    nudge(model, 0.05, 14);
    Tensor input9 = Tensor::randn({3, 9, 4, 4}, rng);
    SemanticCondition cond;
    cond.vec = {real(0.3), real(-0.7), real(1.1)};
    cond.is_null = false;

    // Tokens come out of the model's own projection so its parameters are in
    // the differentiated graph too.
    auto loss = [&] {
        Tensor tokens = semantic_tokens(cond, model.projection());
        Tensor v = model.denoise(input9, 4, tokens).value;
        return mean(mul(v, v));
    };

    for (auto [name, p] : model.parameters()) p.zero_grad();
    loss().backward();

    for (auto [name, p] : model.parameters()) {
        REQUIRE(p.has_grad());
        auto raw = p.raw_data();
        const std::int64_t n = p.size();
        std::vector<std::int64_t> idx = {0, n / 3, (2 * n) / 3, n - 1};
        idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
        for (std::int64_t k : idx) {
            const real keep = raw[std::size_t(k)];
            const double eps = kFdEps * std::max(1.0, std::abs(double(keep)));
            raw[std::size_t(k)] = real(double(keep) + eps);
            const double lp = double(loss().item());
            raw[std::size_t(k)] = real(double(keep) - eps);
            const double lm = double(loss().item());
            raw[std::size_t(k)] = keep;
            const double fd = (lp - lm) / (2 * eps);
            const double got = double(p.grad()[std::size_t(k)]);
            const double err = std::abs(got - fd) / std::max(1.0, std::abs(fd));
            INFO(name, "[", k, "] got ", got, " fd ", fd);
            CHECK(err < kFdTol);
        }
    }
}

TEST_CASE("null condition tokens equal the projection bias rows") {
    Rng rng(91);
    Denoiser model(tiny_config(), rng);
    Tensor tok = semantic_tokens(SemanticCondition::null(3), model.projection());
    REQUIRE(tok.shape() == Shape{2, 8});
    auto bias = model.param("cross_attn/proj/bias").data();
    for (std::int64_t i = 0; i < tok.size(); ++i)
        CHECK(tok.data()[std::size_t(i)] == bias[std::size_t(i)]);
}
