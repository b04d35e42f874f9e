// SPDX-License-Identifier: Apache-2.0
#include "atmv/trainer.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <span>

#include <json.hpp>

#include "atmv/codec.hpp"
#include "atmv/errors.hpp"
#include "atmv/metrics.hpp"
#include "atmv/sampler.hpp"

namespace atmv {

void TrainConfig::validate() const {
    if (steps < 1) throw ConfigError("trainer: steps must be >= 1");
    if (batch_size < 1) throw ConfigError("trainer: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("trainer: learning_rate must be > 0");
    if (!(p_drop >= 0.0 && p_drop < 1.0)) throw ConfigError("trainer: p_drop must be in [0,1)");
    if (schedule_T < 1) throw ConfigError("trainer: schedule_T must be >= 1");
    if (eval_every < 1) throw ConfigError("trainer: eval_every must be >= 1");
    model.validate();
}

NoiseSchedule build_training_schedule(const TrainConfig& cfg) {
    NoiseSchedule sched = build_linear_schedule(cfg.schedule_T, cfg.beta_start, cfg.beta_end);
    if (cfg.zero_terminal_snr) sched = enforce_zero_terminal_snr(sched);
    return sched;
}

Tensor v_mse(const Tensor& predicted_v, const Tensor& target_v) {
    if (predicted_v.shape() != target_v.shape()) throw ShapeError("v_mse: shape mismatch");
    Tensor diff = sub(predicted_v, target_v);
    return mean(mul(diff, diff));
}

double training_step(Denoiser& model, const std::vector<TrainSample>& batch,
                     const NoiseSchedule& sched, const TrainConfig& cfg, Rng& rng) {
    if (batch.empty()) throw UsageError("training_step: empty batch");
    for (auto [name, p] : model.parameters()) {
        (void)name;
        if (p.requires_grad()) p.zero_grad();
    }
    const DenoiserConfig& mc = model.config();

    Tensor total;
    for (const TrainSample& s : batch) {
        if (!s.latents.defined() || s.latents.rank() != 4 || s.latents.dim(1) != 4 ||
            s.latents.dim(2) != mc.h || s.latents.dim(3) != mc.w)
            throw ShapeError("training_step: latents must be [T,4,h,w] matching the model");
        const int t_clip = s.latents.dim(0);

        const int t = 1 + int(rng.next_below(std::uint64_t(sched.T)));
        Tensor eps = Tensor::randn(s.latents.shape(), rng);
        Tensor x_t = q_sample(s.latents, t, eps, sched);
        Tensor target = v_from(s.latents, eps, t, sched).value;
        SemanticCondition cond = drop_condition(s.condition, cfg.p_drop, rng);
        Tensor tokens = semantic_tokens(cond, model.projection());

        FrameMask f_m = build_frame_mask(t_clip, s.conditioned, mc.h, mc.w);
        std::map<int, Tensor> refs;
        for (int j : s.conditioned)
            refs[j] = reshape(slice(s.latents, 0, j, 1), {4, mc.h, mc.w});
        ImageConditionLatent f_i = build_image_condition_latent(refs, t_clip, mc.h, mc.w);

        Prediction pred = model.denoise(assemble_model_input(x_t, f_m, f_i), t, tokens);
        Tensor sample_loss = v_mse(pred.value, target);
        total = total.defined() ? add(total, sample_loss) : sample_loss;
    }
    Tensor loss = scale(total, real(1.0 / double(batch.size())));
    loss.backward();
    return double(loss.item());
}

void adam_update(const std::vector<std::pair<std::string, Tensor>>& params, AdamState& state,
                 double lr) {
    if (!(lr > 0.0)) throw ConfigError("adam: lr must be > 0");
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    state.t += 1;
    const double c1 = 1.0 - std::pow(kBeta1, double(state.t));
    const double c2 = 1.0 - std::pow(kBeta2, double(state.t));
    for (auto [name, p] : params) {
        if (!p.has_grad()) continue;
        auto g = p.grad();
        auto w = p.raw_data();
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.empty()) m.assign(w.size(), real(0));
        if (v.empty()) v.assign(w.size(), real(0));
        if (m.size() != w.size() || v.size() != w.size())
            throw ShapeError("adam: moment shape mismatch for " + name);
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = double(g[i]);
            const double mi = kBeta1 * double(m[i]) + (1.0 - kBeta1) * gi;
            const double vi = kBeta2 * double(v[i]) + (1.0 - kBeta2) * gi * gi;
            m[i] = real(mi);
            v[i] = real(vi);
            w[i] -= real(lr * (mi / c1) / (std::sqrt(vi / c2) + kEps));
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoint file format: magic "ATMV", u32 version, u32 array count, then
// per array u16 name length, name bytes, u8 dtype, u8 rank, u32 dims, raw
// little-endian payload; arrays in lexicographic name order; trailing CRC32
// (polynomial 0xEDB88320) over all preceding bytes.

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::uint64_t kMaxArrayElements = std::uint64_t(1) << 28;

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
    static const std::array<std::uint32_t, 256> table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t c = 0xFFFFFFFFu;
    for (std::uint8_t b : bytes) c = table[(c ^ b) & 0xFFu] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(std::uint8_t(v & 0xFF));
    out.push_back(std::uint8_t(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t((v >> (8 * i)) & 0xFF));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(std::uint8_t((v >> (8 * i)) & 0xFF));
}

struct Reader {
    std::span<const std::uint8_t> bytes;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (pos + n > bytes.size())
            throw IoError(std::string("checkpoint truncated reading ") + what,
                          (long long)(pos));
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = std::uint16_t(bytes[pos] | (std::uint16_t(bytes[pos + 1]) << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes[pos + std::size_t(i)]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(bytes[pos + std::size_t(i)]) << (8 * i);
        pos += 8;
        return v;
    }
};

}  // namespace

std::uint64_t CheckpointArray::elements() const {
    std::uint64_t n = 1;
    for (std::uint32_t d : dims) n *= d;
    return n;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::vector<std::uint8_t> buf;
    buf.insert(buf.end(), {'A', 'T', 'M', 'V'});
    put_u32(buf, kCheckpointVersion);
    put_u32(buf, std::uint32_t(ckpt.arrays.size()));
    for (const auto& [name, a] : ckpt.arrays) {
        if (name.empty() || name.size() > 0xFFFF)
            throw UsageError("checkpoint: invalid array name");
        if (a.dims.size() > 0xFF) throw UsageError("checkpoint: rank too large for " + name);
        const std::uint64_t n = a.elements();
        if ((a.dtype == 0 && (a.f32.size() != n || !a.i64.empty())) ||
            (a.dtype == 1 && (a.i64.size() != n || !a.f32.empty())) || a.dtype > 1)
            throw UsageError("checkpoint: payload does not match dims for " + name);
        put_u16(buf, std::uint16_t(name.size()));
        buf.insert(buf.end(), name.begin(), name.end());
        buf.push_back(a.dtype);
        buf.push_back(std::uint8_t(a.dims.size()));
        for (std::uint32_t d : a.dims) put_u32(buf, d);
        if (a.dtype == 0)
            for (float v : a.f32) put_u32(buf, std::bit_cast<std::uint32_t>(v));
        else
            for (std::int64_t v : a.i64) put_u64(buf, std::uint64_t(v));
    }
    put_u32(buf, crc32(buf));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
    if (!out.good()) throw IoError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    Reader r{bytes};

    r.need(4, "magic");
    if (std::memcmp(bytes.data(), "ATMV", 4) != 0) throw IoError("checkpoint: bad magic", 0);
    r.pos = 4;
    const std::uint32_t version = r.u32("version");
    if (version != kCheckpointVersion)
        throw IoError("checkpoint: unsupported format version " + std::to_string(version), 4);
    const std::uint32_t count = r.u32("array count");

    Checkpoint ckpt;
    std::string prev_name;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::size_t name_pos = r.pos;
        const std::uint16_t name_len = r.u16("array name length");
        if (name_len == 0) throw IoError("checkpoint: empty array name", (long long)name_pos);
        r.need(name_len, "array name");
        std::string name(reinterpret_cast<const char*>(bytes.data() + r.pos), name_len);
        r.pos += name_len;
        if (i > 0 && !(prev_name < name))
            throw IoError("checkpoint: arrays not in canonical order", (long long)name_pos);
        prev_name = name;

        r.need(2, "array header");
        const std::uint8_t dtype = bytes[r.pos++];
        const std::uint8_t rank = bytes[r.pos++];
        if (dtype > 1)
            throw IoError("checkpoint: unknown dtype tag for " + name, (long long)(r.pos - 2));
        CheckpointArray a;
        a.dtype = dtype;
        for (int d = 0; d < int(rank); ++d) a.dims.push_back(r.u32("array dims"));
        const std::uint64_t n = a.elements();
        if (n > kMaxArrayElements)
            throw IoError("checkpoint: array too large: " + name, (long long)r.pos);
        if (dtype == 0) {
            a.f32.reserve(std::size_t(n));
            for (std::uint64_t k = 0; k < n; ++k)
                a.f32.push_back(std::bit_cast<float>(r.u32("array payload")));
        } else {
            a.i64.reserve(std::size_t(n));
            for (std::uint64_t k = 0; k < n; ++k)
                a.i64.push_back(std::int64_t(r.u64("array payload")));
        }
        ckpt.arrays.emplace(std::move(name), std::move(a));
    }

    const std::size_t crc_pos = r.pos;
    const std::uint32_t stored = r.u32("checksum");
    if (r.pos != bytes.size())
        throw IoError("checkpoint: trailing bytes after checksum", (long long)r.pos);
    if (crc32(std::span(bytes).first(crc_pos)) != stored)
        throw IoError("checkpoint: checksum mismatch", (long long)crc_pos);
    return ckpt;
}

namespace {

CheckpointArray pack_text(const std::string& text) {
    CheckpointArray a;
    a.dtype = 1;
    const std::size_t words = 1 + (text.size() + 7) / 8;
    a.i64.assign(words, 0);
    a.i64[0] = std::int64_t(text.size());
    for (std::size_t i = 0; i < text.size(); ++i)
        a.i64[1 + i / 8] = std::int64_t(std::uint64_t(a.i64[1 + i / 8]) |
                                        (std::uint64_t(std::uint8_t(text[i])) << (8 * (i % 8))));
    a.dims = {std::uint32_t(words)};
    return a;
}

std::string unpack_text(const CheckpointArray& a) {
    if (a.dtype != 1 || a.i64.empty()) throw CompatError("checkpoint: malformed text array");
    const std::uint64_t len = std::uint64_t(a.i64[0]);
    if (1 + (len + 7) / 8 != a.i64.size()) throw CompatError("checkpoint: malformed text array");
    std::string text(std::size_t(len), '\0');
    for (std::uint64_t i = 0; i < len; ++i)
        text[std::size_t(i)] =
            char(std::uint8_t(std::uint64_t(a.i64[std::size_t(1 + i / 8)]) >> (8 * (i % 8))));
    return text;
}

CheckpointArray f32_array(std::span<const real> values, const Shape& shape) {
    CheckpointArray a;
    a.dtype = 0;
    for (int d : shape) a.dims.push_back(std::uint32_t(d));
    a.f32.reserve(values.size());
    for (real v : values) a.f32.push_back(float(v));
    return a;
}

CheckpointArray i64_scalar(std::int64_t v) {
    CheckpointArray a;
    a.dtype = 1;
    a.dims = {1};
    a.i64 = {v};
    return a;
}

const CheckpointArray& need_array(const Checkpoint& ckpt, const std::string& name) {
    auto it = ckpt.arrays.find(name);
    if (it == ckpt.arrays.end()) throw CompatError("checkpoint is missing array " + name);
    return it->second;
}

}  // namespace

Checkpoint make_training_checkpoint(const Denoiser& model, const AdamState& adam,
                                    std::int64_t step, const NoiseSchedule& sched,
                                    const TrainConfig& cfg) {
    Checkpoint ckpt;
    ckpt.arrays.emplace("config/json", pack_text(train_config_to_json(cfg)));
    ckpt.arrays.emplace("trainer/step", i64_scalar(step));
    ckpt.arrays.emplace("adam/t", i64_scalar(adam.t));
    for (const auto& [name, p] : model.parameters())
        ckpt.arrays.emplace("model/" + name, f32_array(p.data(), p.shape()));
    for (const auto& [name, mom] : adam.m) {
        Tensor p = model.param(name);
        ckpt.arrays.emplace("adam/m/" + name, f32_array(mom, p.shape()));
    }
    for (const auto& [name, mom] : adam.v) {
        Tensor p = model.param(name);
        ckpt.arrays.emplace("adam/v/" + name, f32_array(mom, p.shape()));
    }
    // Informational copy of the coefficient tables; resume rebuilds them from
    // the config at full precision.
    CheckpointArray a_arr, s_arr;
    a_arr.dtype = s_arr.dtype = 0;
    a_arr.dims = s_arr.dims = {std::uint32_t(sched.T)};
    for (double v : sched.a) a_arr.f32.push_back(float(v));
    for (double v : sched.s) s_arr.f32.push_back(float(v));
    ckpt.arrays.emplace("schedule/a", std::move(a_arr));
    ckpt.arrays.emplace("schedule/s", std::move(s_arr));
    return ckpt;
}

void restore_training_state(const Checkpoint& ckpt, Denoiser& model, AdamState& adam,
                            std::int64_t& step) {
    const CheckpointArray& step_arr = need_array(ckpt, "trainer/step");
    if (step_arr.dtype != 1 || step_arr.i64.size() != 1)
        throw CompatError("checkpoint: trainer/step must be a single i64");
    const CheckpointArray& t_arr = need_array(ckpt, "adam/t");
    if (t_arr.dtype != 1 || t_arr.i64.size() != 1)
        throw CompatError("checkpoint: adam/t must be a single i64");

    std::size_t model_arrays = 0;
    for (const auto& [name, a] : ckpt.arrays)
        if (name.rfind("model/", 0) == 0) ++model_arrays;
    if (model_arrays != model.parameters().size())
        throw CompatError("checkpoint: parameter set does not match the model architecture");

    for (auto [name, p] : model.parameters()) {
        const CheckpointArray& a = need_array(ckpt, "model/" + name);
        if (a.dtype != 0 || a.f32.size() != std::size_t(p.size()))
            throw CompatError("checkpoint: parameter " + name + " has the wrong shape");
        auto w = p.raw_data();
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = real(a.f32[i]);
    }

    adam.t = t_arr.i64[0];
    adam.m.clear();
    adam.v.clear();
    for (const auto& [name, a] : ckpt.arrays) {
        const bool is_m = name.rfind("adam/m/", 0) == 0;
        const bool is_v = name.rfind("adam/v/", 0) == 0;
        if (!is_m && !is_v) continue;
        const std::string pname = name.substr(7);
        Tensor p;
        try {
            p = model.param(pname);
        } catch (const std::exception&) {
            throw CompatError("checkpoint: moment " + name + " has no matching parameter");
        }
        if (a.dtype != 0 || a.f32.size() != std::size_t(p.size()))
            throw CompatError("checkpoint: moment " + name + " has the wrong shape");
        std::vector<real> mom(a.f32.size());
        for (std::size_t i = 0; i < mom.size(); ++i) mom[i] = real(a.f32[i]);
        (is_m ? adam.m : adam.v)[pname] = std::move(mom);
    }
    step = step_arr.i64[0];
}

std::string checkpoint_config_json(const Checkpoint& ckpt) {
    auto it = ckpt.arrays.find("config/json");
    if (it == ckpt.arrays.end()) return "";
    return unpack_text(it->second);
}

// ---------------------------------------------------------------------------
// Config document.

namespace {

using json = nlohmann::ordered_json;

const char* stage_name(TrainStage s) {
    return s == TrainStage::spatial_pretrain ? "spatial_pretrain" : "temporal";
}

TrainStage stage_from(const std::string& s) {
    if (s == "spatial_pretrain") return TrainStage::spatial_pretrain;
    if (s == "temporal") return TrainStage::temporal;
    throw ConfigError("config: unknown stage \"" + s + "\"");
}

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const char* where) {
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (std::find_if(allowed.begin(), allowed.end(),
                         [&](const char* k) { return key == k; }) == allowed.end())
            throw ConfigError(std::string("config: unknown key \"") + key + "\" in " + where);
    }
}

json model_to_json(const DenoiserConfig& m) {
    return json{{"base_channels", m.base_channels},
                {"n_res_blocks", m.n_res_blocks},
                {"n_tokens", m.n_tokens},
                {"d_model", m.d_model},
                {"time_embed_dim", m.time_embed_dim},
                {"t_clip_max", m.t_clip_max},
                {"h", m.h},
                {"w", m.w},
                {"cond_width", m.cond_width}};
}

void model_from_json(const json& j, DenoiserConfig& m, bool strict) {
    if (!j.is_object()) throw ConfigError("config: \"model\" must be an object");
    if (strict)
        check_keys(j,
                   {"base_channels", "n_res_blocks", "n_tokens", "d_model", "time_embed_dim",
                    "t_clip_max", "h", "w", "cond_width"},
                   "model");
    if (j.contains("base_channels")) m.base_channels = j.at("base_channels").get<int>();
    if (j.contains("n_res_blocks")) m.n_res_blocks = j.at("n_res_blocks").get<int>();
    if (j.contains("n_tokens")) m.n_tokens = j.at("n_tokens").get<int>();
    if (j.contains("d_model")) m.d_model = j.at("d_model").get<int>();
    if (j.contains("time_embed_dim")) m.time_embed_dim = j.at("time_embed_dim").get<int>();
    if (j.contains("t_clip_max")) m.t_clip_max = j.at("t_clip_max").get<int>();
    if (j.contains("h")) m.h = j.at("h").get<int>();
    if (j.contains("w")) m.w = j.at("w").get<int>();
    if (j.contains("cond_width")) m.cond_width = j.at("cond_width").get<int>();
}

}  // namespace

std::string train_config_to_json(const TrainConfig& cfg) {
    json j{{"stage", stage_name(cfg.stage)},
           {"steps", cfg.steps},
           {"batch_size", cfg.batch_size},
           {"learning_rate", cfg.learning_rate},
           {"p_drop", cfg.p_drop},
           {"seed", cfg.seed},
           {"schedule_T", cfg.schedule_T},
           {"beta_start", cfg.beta_start},
           {"beta_end", cfg.beta_end},
           {"zero_terminal_snr", cfg.zero_terminal_snr},
           {"eval_every", cfg.eval_every},
           {"model", model_to_json(cfg.model)}};
    return j.dump();
}

TrainConfig train_config_from_json(const std::string& text, bool strict) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config: document must be a JSON object");
    TrainConfig cfg;
    try {
        if (strict)
            check_keys(j,
                       {"stage", "steps", "batch_size", "learning_rate", "p_drop", "seed",
                        "schedule_T", "beta_start", "beta_end", "zero_terminal_snr",
                        "eval_every", "model"},
                       "the top-level document");
        if (j.contains("stage")) cfg.stage = stage_from(j.at("stage").get<std::string>());
        if (j.contains("steps")) cfg.steps = j.at("steps").get<int>();
        if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<int>();
        if (j.contains("learning_rate")) cfg.learning_rate = j.at("learning_rate").get<double>();
        if (j.contains("p_drop")) cfg.p_drop = j.at("p_drop").get<double>();
        if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("schedule_T")) cfg.schedule_T = j.at("schedule_T").get<int>();
        if (j.contains("beta_start")) cfg.beta_start = j.at("beta_start").get<double>();
        if (j.contains("beta_end")) cfg.beta_end = j.at("beta_end").get<double>();
        if (j.contains("zero_terminal_snr"))
            cfg.zero_terminal_snr = j.at("zero_terminal_snr").get<bool>();
        if (j.contains("eval_every")) cfg.eval_every = j.at("eval_every").get<int>();
        if (j.contains("model")) model_from_json(j.at("model"), cfg.model, strict);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return cfg;
}

void copy_parameters(const Denoiser& src, Denoiser& dst) {
    const auto& sp = src.parameters();
    const auto& dp = dst.parameters();
    if (sp.size() != dp.size())
        throw CompatError("pretrained model does not match the configured architecture");
    for (std::size_t i = 0; i < sp.size(); ++i) {
        if (sp[i].first != dp[i].first || sp[i].second.shape() != dp[i].second.shape())
            throw CompatError("pretrained model does not match the configured architecture");
        Tensor d = dp[i].second;
        auto out = d.raw_data();
        auto in = sp[i].second.data();
        std::copy(in.begin(), in.end(), out.begin());
    }
}

std::uint32_t parameter_group_crc32(const Denoiser& model, const std::string& group) {
    std::vector<std::uint8_t> bytes;
    for (const auto& [name, p] : model.parameters()) {
        if (Denoiser::group_of(name) != group) continue;
        auto d = p.data();
        const auto* raw = reinterpret_cast<const std::uint8_t*>(d.data());
        bytes.insert(bytes.end(), raw, raw + d.size() * sizeof(real));
    }
    return crc32(bytes);
}

// ---------------------------------------------------------------------------
// Training loop.

namespace {

std::vector<TrainSample> make_batch(const TrainConfig& cfg, const ToyDataset& data, Rng& rng) {
    std::vector<TrainSample> batch;
    batch.reserve(std::size_t(cfg.batch_size));
    for (int b = 0; b < cfg.batch_size; ++b) {
        const int idx = int(rng.next_below(std::uint64_t(data.train_size())));
        ClipSample clip = data.train_clip(idx);
        TrainSample s;
        s.condition = clip.condition;
        if (cfg.stage == TrainStage::spatial_pretrain) {
            // Single frames: the spatial pathway learns image denoising only.
            s.latents = slice(clip.latents, 0, 0, 1);
        } else {
            s.latents = clip.latents;
            // Conditioning mix: mostly first-frame image conditioning, some
            // two-frame, some unconditioned so guidance keeps a live null.
            const double r = rng.uniform();
            if (r < 0.8)
                s.conditioned = {0};
            else if (r < 0.9)
                s.conditioned = clip.latents.dim(0) >= 3 ? std::vector<int>{0, 1}
                                                         : std::vector<int>{0};
        }
        batch.push_back(std::move(s));
    }
    return batch;
}

std::string eval_line(const Denoiser& model, const NoiseSchedule& sched, const ToyDataset& data,
                      const TrainConfig& cfg, std::int64_t step, double mean_loss) {
    const int n_eval = std::min(2, data.val_size());
    std::vector<std::vector<Tensor>> generated;
    std::vector<Tensor> references;
    for (int i = 0; i < n_eval; ++i) {
        ClipSample clip = data.val_clip(i);
        GenerationJob job;
        job.model = &model;
        job.schedule = &sched;
        job.t_clip = data.t_clip();
        job.condition = clip.condition;
        job.reference_latents[0] =
            reshape(slice(clip.latents, 0, 0, 1), {4, model.config().h, model.config().w});
        SamplerConfig scfg;
        scfg.k = 8;
        scfg.seed = Rng::derive(Rng::derive(cfg.seed, 0xe7a1),
                                std::uint64_t(step) * 16 + std::uint64_t(i));
        Tensor decoded = decode_clip(sample(job, scfg));
        std::vector<Tensor> frames;
        for (int f = 0; f < decoded.dim(0); ++f)
            frames.push_back(reshape(slice(decoded, 0, f, 1), {1, decoded.dim(2), decoded.dim(3)}));
        generated.push_back(std::move(frames));
        references.push_back(clip.frames[0]);
    }
    MetricsReport rep = evaluate(generated, references);
    char buf[160];
    std::snprintf(buf, sizeof buf, "%lld\t%.6f\t%.6f\t%.6f\t%.6f", (long long)step, mean_loss,
                  rep.ssim_first_frame, rep.temporal_consistency, rep.motion_intensity);
    return std::string(buf);
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const ToyDataset& data, const Denoiser* init,
                  const Checkpoint* resume, const CheckpointSink& on_checkpoint) {
    cfg.validate();
    if (cfg.stage == TrainStage::temporal && !init && !resume)
        throw ConfigError(
            "temporal stage requires a spatially pretrained model: pass an initial model or "
            "resume from its checkpoint");
    if (2 * cfg.model.h != data.frame_h() || 2 * cfg.model.w != data.frame_w())
        throw ConfigError("trainer: model latent extents do not match the dataset frames");
    if (data.t_clip() > cfg.model.t_clip_max)
        throw ConfigError("trainer: dataset clips exceed the model's frame capacity");
    if (data.train_size() < 1) throw ConfigError("trainer: dataset has no training split");
    if (data.val_size() < 1) throw ConfigError("trainer: dataset has no validation split");
    if (int(scene_condition(SceneSpec{}).vec.size()) != cfg.model.cond_width)
        throw ConfigError("trainer: model cond_width does not match the dataset conditions");

    NoiseSchedule sched = build_training_schedule(cfg);
    Rng init_rng(Rng::derive(cfg.seed, 0));
    Denoiser model(cfg.model, init_rng);
    if (init) copy_parameters(*init, model);
    AdamState adam;
    std::int64_t start = 0;
    if (resume) restore_training_state(*resume, model, adam, start);

    for (const std::string& g : Denoiser::group_names()) model.set_group_trainable(g, true);
    model.set_group_trainable(
        cfg.stage == TrainStage::spatial_pretrain ? "temporal" : "spatial", false);

    std::vector<double> losses;
    std::vector<std::string> log;
    double window_sum = 0.0;
    std::int64_t window_n = 0;
    for (std::int64_t step = start + 1; step <= cfg.steps; ++step) {
        // One derived stream per step: resume replays the identical tail.
        Rng rng(Rng::derive(cfg.seed, std::uint64_t(step)));
        std::vector<TrainSample> batch = make_batch(cfg, data, rng);
        const double loss = training_step(model, batch, sched, cfg, rng);
        adam_update(model.parameters(), adam, cfg.learning_rate);
        losses.push_back(loss);
        window_sum += loss;
        window_n += 1;

        if (step % cfg.eval_every == 0 || step == cfg.steps) {
            log.push_back(eval_line(model, sched, data, cfg, step, window_sum / double(window_n)));
            window_sum = 0.0;
            window_n = 0;
            if (on_checkpoint)
                on_checkpoint(make_training_checkpoint(model, adam, step, sched, cfg), int(step));
        }
    }
    return TrainResult{std::move(model), std::move(adam), std::move(losses), std::move(log)};
}

}  // namespace atmv
