// SPDX-License-Identifier: Apache-2.0
#include "atmv/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "atmv/errors.hpp"
#include "atmv/rng.hpp"

namespace atmv {

namespace {

// Largest power-of-two group count <= 8 that divides the channel count.
int pick_gn_groups(int channels) {
    for (int g : {8, 4, 2})
        if (channels % g == 0) return g;
    return 1;
}

Tensor filled_normal(Rng& rng, const Shape& shape, double stddev) {
    Tensor t = Tensor::zeros(shape);
    auto v = t.raw_data();
    for (auto& x : v) x = real(rng.normal() * stddev);
    return t;
}

Tensor ones_tensor(const Shape& shape) { return Tensor::full(shape, real(1)); }

// Bias broadcast over [T,C,h,w].
Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
    return add(x, reshape(bias, {1, bias.dim(0), 1, 1}));
}

// [T,C,h,w] -> [T*h*w, C] rows ordered frame-major then pixel.
Tensor to_rows(const Tensor& x) {
    const int t = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    return reshape(permute(reshape(x, {t, c, hw}), {0, 2, 1}), {t * hw, c});
}

Tensor from_rows(const Tensor& rows, int t, int c, int h, int w) {
    return reshape(permute(reshape(rows, {t, h * w, c}), {0, 2, 1}), {t, c, h, w});
}

}  // namespace

void DenoiserConfig::validate() const {
    if (base_channels <= 0 || n_res_blocks <= 0 || n_tokens <= 0 || d_model <= 0 ||
        time_embed_dim <= 0 || t_clip_max <= 0 || h <= 0 || w <= 0 || cond_width <= 0)
        throw ConfigError("denoiser config: all fields must be positive");
    if (time_embed_dim % 2 != 0)
        throw ConfigError("denoiser config: time_embed_dim must be even");
}

Tensor timestep_embedding(int t, int dim) {
    if (dim <= 0 || dim % 2 != 0) throw ConfigError("timestep_embedding: dim must be positive and even");
    if (t < 0) throw UsageError("timestep_embedding: t must be >= 0");
    const int half = dim / 2;
    auto v = std::vector<real>(std::size_t(dim));
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
        const double arg = double(t) * freq;
        v[std::size_t(2 * i)] = real(std::sin(arg));
        v[std::size_t(2 * i + 1)] = real(std::cos(arg));
    }
    return Tensor::from_data({1, dim}, v);
}

Tensor Denoiser::add_param(const std::string& name, Tensor t) {
    t.set_requires_grad(true);
    index_[name] = params_.size();
    params_.emplace_back(name, t);
    return t;
}

Denoiser::Denoiser(DenoiserConfig cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const int c = cfg_.base_channels;
    const int e = cfg_.time_embed_dim;
    const int d = cfg_.d_model;
    gn_groups_ = pick_gn_groups(c);

    // Input conv: the latent slice gets a live fan-in init, the mask and
    // image-condition slice starts near zero so conditioning is learned.
    {
        Tensor w = Tensor::zeros({c, 9, 3, 3});
        const double live = std::sqrt(2.0 / (4 * 3 * 3));
        auto v = w.raw_data();
        std::size_t at = 0;
        for (int co = 0; co < c; ++co)
            for (int ci = 0; ci < 9; ++ci)
                for (int k = 0; k < 9; ++k, ++at)
                    v[at] = real(rng.normal() * (ci < 4 ? live : 1e-5));
        add_param("input_layer/conv/weight", w);
        add_param("input_layer/conv/bias", Tensor::zeros({c}));
    }

    const double inv_e = std::sqrt(1.0 / e);
    add_param("spatial/time_mlp0/weight", filled_normal(rng, {e, e}, inv_e));
    add_param("spatial/time_mlp0/bias", Tensor::zeros({e}));
    add_param("spatial/time_mlp1/weight", filled_normal(rng, {e, e}, inv_e));
    add_param("spatial/time_mlp1/bias", Tensor::zeros({e}));

    const double conv_std = std::sqrt(2.0 / (double(c) * 9));
    for (int i = 0; i < cfg_.n_res_blocks; ++i) {
        const std::string p = "spatial/res" + std::to_string(i);
        add_param(p + "_norm1/gamma", ones_tensor({c}));
        add_param(p + "_norm1/beta", Tensor::zeros({c}));
        add_param(p + "_conv1/weight", filled_normal(rng, {c, c, 3, 3}, conv_std));
        add_param(p + "_conv1/bias", Tensor::zeros({c}));
        // Per-channel scale and shift; the scale half gives the block a
        // timestep-dependent gain, which v-prediction needs (v ~ (a/s) x_t
        // wherever the clean signal is zero).
        add_param(p + "_time/weight", filled_normal(rng, {2 * c, e}, inv_e));
        add_param(p + "_time/bias", Tensor::zeros({2 * c}));
        add_param(p + "_norm2/gamma", ones_tensor({c}));
        add_param(p + "_norm2/beta", Tensor::zeros({c}));
        add_param(p + "_conv2/weight", filled_normal(rng, {c, c, 3, 3}, conv_std));
        add_param(p + "_conv2/bias", Tensor::zeros({c}));
    }
    add_param("spatial/out_norm/gamma", ones_tensor({c}));
    add_param("spatial/out_norm/beta", Tensor::zeros({c}));
    // The output norm is conditioned too: group norm strips the feature
    // scale, and the v target's magnitude depends on t.
    add_param("spatial/out_time/weight", filled_normal(rng, {2 * c, e}, inv_e));
    add_param("spatial/out_time/bias", Tensor::zeros({2 * c}));
    add_param("spatial/out_conv/weight", filled_normal(rng, {4, c, 3, 3}, 1e-5));
    add_param("spatial/out_conv/bias", Tensor::zeros({4}));

    const double inv_c = std::sqrt(1.0 / c);
    add_param("temporal/pos_emb/weight", filled_normal(rng, {cfg_.t_clip_max, c}, 0.02));
    for (int i = 0; i < cfg_.n_res_blocks; ++i) {
        const std::string p = "temporal/t" + std::to_string(i);
        add_param(p + "_conv_norm/gamma", ones_tensor({c}));
        add_param(p + "_conv_norm/beta", Tensor::zeros({c}));
        add_param(p + "_conv/w_prev", filled_normal(rng, {c, c}, inv_c));
        add_param(p + "_conv/w_curr", filled_normal(rng, {c, c}, inv_c));
        add_param(p + "_conv/w_next", filled_normal(rng, {c, c}, inv_c));
        add_param(p + "_conv/bias", Tensor::zeros({c}));
        add_param(p + "_conv_out/weight", Tensor::zeros({c, c}));
        add_param(p + "_conv_out/bias", Tensor::zeros({c}));
        add_param(p + "_attn_norm/gamma", ones_tensor({c}));
        add_param(p + "_attn_norm/beta", Tensor::zeros({c}));
        add_param(p + "_attn/wq", filled_normal(rng, {c, c}, inv_c));
        add_param(p + "_attn/wk", filled_normal(rng, {c, c}, inv_c));
        add_param(p + "_attn/wv", filled_normal(rng, {c, c}, inv_c));
        add_param(p + "_attn/wo", Tensor::zeros({c, c}));
    }

    const int tok = cfg_.n_tokens * d;
    proj_.weight = add_param("cross_attn/proj/weight",
                             filled_normal(rng, {tok, cfg_.cond_width}, std::sqrt(1.0 / cfg_.cond_width)));
    proj_.bias = add_param("cross_attn/proj/bias", Tensor::zeros({tok}));
    proj_.n_tokens = cfg_.n_tokens;
    proj_.d_model = d;

    const double inv_d = std::sqrt(1.0 / d);
    for (int i = 0; i < cfg_.n_res_blocks; ++i) {
        const std::string p = "cross_attn/x" + std::to_string(i);
        add_param(p + "_norm/gamma", ones_tensor({c}));
        add_param(p + "_norm/beta", Tensor::zeros({c}));
        add_param(p + "/wq", filled_normal(rng, {d, c}, inv_c));
        add_param(p + "/wk", filled_normal(rng, {d, d}, inv_d));
        add_param(p + "/wv", filled_normal(rng, {d, d}, inv_d));
        add_param(p + "/wo", Tensor::zeros({c, d}));
    }
}

Tensor Denoiser::param(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("denoiser: unknown parameter " + name);
    return params_[it->second].second;
}

std::int64_t Denoiser::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : params_) n += t.size();
    return n;
}

std::string Denoiser::group_of(const std::string& name) {
    const auto slash = name.find('/');
    if (slash == std::string::npos) throw UsageError("denoiser: malformed parameter name " + name);
    return name.substr(0, slash);
}

const std::vector<std::string>& Denoiser::group_names() {
    static const std::vector<std::string> names = {"cross_attn", "input_layer", "spatial", "temporal"};
    return names;
}

void Denoiser::set_group_trainable(const std::string& group, bool trainable) {
    const auto& known = group_names();
    if (std::find(known.begin(), known.end(), group) == known.end())
        throw UsageError("denoiser: unknown parameter group " + group);
    for (auto& [name, t] : params_)
        if (group_of(name) == group) t.set_requires_grad(trainable);
}

Tensor Denoiser::spatial_block(const Tensor& x, const Tensor& silu_emb, int i) const {
    const std::string p = "spatial/res" + std::to_string(i);
    Tensor y = group_norm(x, gn_groups_, param(p + "_norm1/gamma"), param(p + "_norm1/beta"));
    y = conv2d(silu(y), param(p + "_conv1/weight"));
    y = add_channel_bias(y, param(p + "_conv1/bias"));
    const int c = cfg_.base_channels;
    Tensor ss = linear(silu_emb, param(p + "_time/weight"), param(p + "_time/bias"));
    Tensor gain = reshape(slice(ss, 1, 0, c), {1, c, 1, 1});
    Tensor shift = reshape(slice(ss, 1, c, c), {1, c, 1, 1});
    y = group_norm(y, gn_groups_, param(p + "_norm2/gamma"), param(p + "_norm2/beta"));
    y = add(add(y, mul(y, gain)), shift);
    y = conv2d(silu(y), param(p + "_conv2/weight"));
    y = add_channel_bias(y, param(p + "_conv2/bias"));
    return add(x, y);
}

Tensor Denoiser::temporal_conv(const Tensor& x, int i) const {
    const std::string p = "temporal/t" + std::to_string(i);
    const int t = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor y = group_norm(x, gn_groups_, param(p + "_conv_norm/gamma"), param(p + "_conv_norm/beta"));
    Tensor z = linear(to_rows(y), param(p + "_conv/w_curr"), param(p + "_conv/bias"));
    z = add(z, linear(to_rows(shift_frames(y, 1)), param(p + "_conv/w_prev")));
    z = add(z, linear(to_rows(shift_frames(y, -1)), param(p + "_conv/w_next")));
    Tensor out = linear(silu(z), param(p + "_conv_out/weight"), param(p + "_conv_out/bias"));
    return add(x, from_rows(out, t, c, h, w));
}

Tensor Denoiser::temporal_attention(const Tensor& x, int i) const {
    if (!x.defined() || x.rank() != 4 || x.dim(1) != cfg_.base_channels)
        throw ShapeError("temporal_attention: features must be [T,C,h,w]");
    const int t = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (t > cfg_.t_clip_max) throw UsageError("temporal_attention: T_clip exceeds t_clip_max");
    if (i < 0 || i >= cfg_.n_res_blocks) throw UsageError("temporal_attention: block out of range");
    const std::string p = "temporal/t" + std::to_string(i);
    const int hw = h * w;

    Tensor y = group_norm(x, gn_groups_, param(p + "_attn_norm/gamma"), param(p + "_attn_norm/beta"));
    Tensor pos = slice(param("temporal/pos_emb/weight"), 0, 0, t);
    y = add(y, reshape(pos, {t, c, 1, 1}));

    // One attention head per spatial location, sequence axis = frames.
    Tensor seq = reshape(permute(reshape(y, {t, c, hw}), {2, 0, 1}), {hw * t, c});
    Tensor q = reshape(linear(seq, param(p + "_attn/wq")), {hw, t, c});
    Tensor k = reshape(linear(seq, param(p + "_attn/wk")), {hw, t, c});
    Tensor v = reshape(linear(seq, param(p + "_attn/wv")), {hw, t, c});
    Tensor att = softmax(scale(bmm(q, permute(k, {0, 2, 1})), real(1.0 / std::sqrt(double(c)))), 2);
    Tensor ctx = bmm(att, v);
    Tensor out = linear(reshape(ctx, {hw * t, c}), param(p + "_attn/wo"));
    Tensor back = reshape(permute(reshape(out, {hw, t, c}), {1, 2, 0}), {t, c, h, w});
    return add(x, back);
}

Tensor Denoiser::cross_attention(const Tensor& x, const Tensor& tokens, int i) const {
    if (!x.defined() || x.rank() != 4 || x.dim(1) != cfg_.base_channels)
        throw ShapeError("cross_attention: features must be [T,C,h,w]");
    if (!tokens.defined() || tokens.rank() != 2 || tokens.dim(0) != cfg_.n_tokens ||
        tokens.dim(1) != cfg_.d_model)
        throw ShapeError("cross_attention: tokens must be [n_tokens,d_model]");
    if (i < 0 || i >= cfg_.n_res_blocks) throw UsageError("cross_attention: block out of range");
    const std::string p = "cross_attn/x" + std::to_string(i);
    const int t = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int d = cfg_.d_model;

    Tensor y = group_norm(x, gn_groups_, param(p + "_norm/gamma"), param(p + "_norm/beta"));
    Tensor q = linear(to_rows(y), param(p + "/wq"));
    Tensor k = linear(tokens, param(p + "/wk"));
    Tensor v = linear(tokens, param(p + "/wv"));
    Tensor att = softmax(scale(matmul(q, permute(k, {1, 0})), real(1.0 / std::sqrt(double(d)))), 1);
    Tensor out = linear(matmul(att, v), param(p + "/wo"));
    return add(x, from_rows(out, t, c, h, w));
}

Prediction Denoiser::denoise(const Tensor& input9, int t, const Tensor& tokens) const {
    if (!input9.defined() || input9.rank() != 4 || input9.dim(1) != 9 || input9.dim(2) != cfg_.h ||
        input9.dim(3) != cfg_.w)
        throw ShapeError("denoise: input must be [T,9," + std::to_string(cfg_.h) + "," +
                         std::to_string(cfg_.w) + "], got " + shape_str(input9.shape()));
    const int frames = input9.dim(0);
    if (frames > cfg_.t_clip_max) throw UsageError("denoise: T_clip exceeds t_clip_max");
    if (t < 1) throw UsageError("denoise: t must be >= 1");

    Tensor emb = timestep_embedding(t, cfg_.time_embed_dim);
    emb = silu(linear(emb, param("spatial/time_mlp0/weight"), param("spatial/time_mlp0/bias")));
    emb = linear(emb, param("spatial/time_mlp1/weight"), param("spatial/time_mlp1/bias"));
    Tensor silu_emb = silu(emb);

    Tensor x = conv2d(input9, param("input_layer/conv/weight"));
    x = add_channel_bias(x, param("input_layer/conv/bias"));

    for (int i = 0; i < cfg_.n_res_blocks; ++i) {
        x = spatial_block(x, silu_emb, i);
        if (!ablate_temporal) {
            x = temporal_conv(x, i);
            x = temporal_attention(x, i);
        }
        x = cross_attention(x, tokens, i);
    }

    Tensor y = group_norm(x, gn_groups_, param("spatial/out_norm/gamma"), param("spatial/out_norm/beta"));
    {
        const int c = cfg_.base_channels;
        Tensor ss = linear(silu_emb, param("spatial/out_time/weight"), param("spatial/out_time/bias"));
        Tensor gain = reshape(slice(ss, 1, 0, c), {1, c, 1, 1});
        Tensor shift = reshape(slice(ss, 1, c, c), {1, c, 1, 1});
        y = add(add(y, mul(y, gain)), shift);
    }
    Tensor v = conv2d(silu(y), param("spatial/out_conv/weight"));
    v = add_channel_bias(v, param("spatial/out_conv/bias"));
    if (!all_finite(v.data())) throw InvariantError("denoise: non-finite output");
    return Prediction{PredKind::v, v};
}

}  // namespace atmv
