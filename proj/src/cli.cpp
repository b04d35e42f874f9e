// SPDX-License-Identifier: Apache-2.0
#include "atmv/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "atmv/codec.hpp"
#include "atmv/denoiser.hpp"
#include "atmv/errors.hpp"
#include "atmv/metrics.hpp"
#include "atmv/sampler.hpp"
#include "atmv/schedule.hpp"
#include "atmv/toydata.hpp"
#include "atmv/trainer.hpp"
#include "atmv/video_io.hpp"

namespace atmv {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

int thread_cap() {
    const char* env = std::getenv("ATMV_THREADS");
    if (!env) {
        const unsigned hw = std::thread::hardware_concurrency();
        return hw == 0 ? 1 : int(hw);
    }
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1 || v > 1024)
        throw ConfigError("ATMV_THREADS must be a positive integer");
    return int(v);
}

std::string clip_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "clip_%04d", index);
    return buf;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << text;
    if (!out.good()) throw IoError("write failed: " + path);
}

// --size HxW
void parse_size(const std::string& text, int& h, int& w) {
    const std::size_t x = text.find('x');
    if (x == std::string::npos || x == 0 || x + 1 >= text.size())
        throw ConfigError("--size must look like HxW, e.g. 32x32");
    try {
        h = std::stoi(text.substr(0, x));
        w = std::stoi(text.substr(x + 1));
    } catch (const std::exception&) {
        throw ConfigError("--size must look like HxW, e.g. 32x32");
    }
    if (h < 2 || w < 2 || h % 2 != 0 || w % 2 != 0)
        throw ConfigError("--size extents must be positive even numbers");
}

std::vector<Tensor> split_frames(const Tensor& decoded) {
    std::vector<Tensor> frames;
    for (int f = 0; f < decoded.dim(0); ++f)
        frames.push_back(reshape(slice(decoded, 0, f, 1), {1, decoded.dim(2), decoded.dim(3)}));
    return frames;
}

// ---------------------------------------------------------------------------
// Run configuration: {"dataset": {...}, "train": {...}}.

struct DatasetParams {
    int clips = 64;
    int frames = 8;
    int height = 32;
    int width = 32;
    std::uint64_t seed = 7;
};

struct RunConfig {
    DatasetParams dataset;
    TrainConfig train;
};

RunConfig run_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config: document must be a JSON object");
    RunConfig cfg;
    try {
        for (const auto& [key, value] : j.items()) {
            (void)value;
            if (key != "dataset" && key != "train")
                throw ConfigError("config: unknown key \"" + key + "\" in the top-level document");
        }
        if (j.contains("dataset")) {
            const json& d = j.at("dataset");
            if (!d.is_object()) throw ConfigError("config: \"dataset\" must be an object");
            for (const auto& [key, value] : d.items()) {
                (void)value;
                if (key != "clips" && key != "frames" && key != "height" && key != "width" &&
                    key != "seed")
                    throw ConfigError("config: unknown key \"" + key + "\" in dataset");
            }
            if (d.contains("clips")) cfg.dataset.clips = d.at("clips").get<int>();
            if (d.contains("frames")) cfg.dataset.frames = d.at("frames").get<int>();
            if (d.contains("height")) cfg.dataset.height = d.at("height").get<int>();
            if (d.contains("width")) cfg.dataset.width = d.at("width").get<int>();
            if (d.contains("seed")) cfg.dataset.seed = d.at("seed").get<std::uint64_t>();
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (j.contains("train")) cfg.train = train_config_from_json(j.at("train").dump(), true);
    return cfg;
}

// ---------------------------------------------------------------------------
// Checkpoint-backed model loading shared by sample and predict.

struct LoadedModel {
    TrainConfig train_config;
    Denoiser model;
    NoiseSchedule schedule;
};

LoadedModel load_model(const std::string& ckpt_path) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    const std::string echo = checkpoint_config_json(ckpt);
    if (echo.empty()) throw CompatError("checkpoint carries no config record: " + ckpt_path);
    TrainConfig tc = train_config_from_json(echo);
    Rng rng(0);
    Denoiser model(tc.model, rng);
    AdamState adam;
    std::int64_t step = 0;
    restore_training_state(ckpt, model, adam, step);
    NoiseSchedule sched = build_training_schedule(tc);
    return LoadedModel{std::move(tc), std::move(model), std::move(sched)};
}

SemanticCondition condition_for(const Tensor& image, const std::string& scene_path) {
    if (scene_path.empty()) return estimate_condition(image);
    std::string path = scene_path;
    if (fs::is_directory(path)) path += "/manifest.json";
    VideoManifest manifest = manifest_from_json(read_text_file(path));
    if (!manifest.scene) throw ConfigError("manifest has no scene record: " + path);
    return scene_condition(*manifest.scene);
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataArgs {
    std::string out;
    int clips = 16;
    int frames = 8;
    std::string size = "32x32";
    std::uint64_t seed = 7;
};

void cmd_gen_data(const GenDataArgs& args) {
    int h = 0, w = 0;
    parse_size(args.size, h, w);
    if (args.clips < 1) throw ConfigError("--clips must be >= 1");
    if (args.frames < 1) throw ConfigError("--frames must be >= 1");
    ToyDataset data = make_dataset(args.clips, args.frames, h, w, args.seed);

    std::error_code ec;
    fs::create_directories(args.out, ec);
    if (ec) throw IoError("cannot create " + args.out + ": " + ec.message());

    const int workers = std::min(thread_cap(), args.clips);
    std::atomic<int> next{0};
    std::mutex fail_mutex;
    std::exception_ptr failure;
    auto work = [&] {
        try {
            for (int i = next.fetch_add(1); i < args.clips; i = next.fetch_add(1)) {
                ClipSample clip = data.clip(i);
                VideoManifest manifest;
                manifest.frame_count = args.frames;
                manifest.height = h;
                manifest.width = w;
                manifest.seed = clip.seed;
                manifest.scene = data.scene(i);
                write_video_dir(args.out + "/" + clip_name(i), clip.frames, manifest);
            }
        } catch (...) {
            std::lock_guard<std::mutex> lock(fail_mutex);
            if (!failure) failure = std::current_exception();
        }
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < workers; ++i) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
    std::cout << "wrote " << args.clips << " clips to " << args.out << "\n";
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
    std::string config;
    std::string stage;
    std::string resume;
    std::string init_from;
    std::string out = "train_out";
};

void cmd_train(const TrainArgs& args) {
    RunConfig run = run_config_from_json(read_text_file(args.config));
    if (!args.stage.empty()) {
        if (args.stage == "spatial")
            run.train.stage = TrainStage::spatial_pretrain;
        else if (args.stage == "temporal")
            run.train.stage = TrainStage::temporal;
        else
            throw ConfigError("--stage must be spatial or temporal");
    }
    if (run.train.stage == TrainStage::temporal && args.resume.empty() && args.init_from.empty())
        throw ConfigError(
            "the temporal stage trains on top of a spatial pretrain: pass --init-from or "
            "--resume with the spatial checkpoint");

    ToyDataset data = make_dataset(run.dataset.clips, run.dataset.frames, run.dataset.height,
                                   run.dataset.width, run.dataset.seed);

    std::optional<Checkpoint> resume;
    if (!args.resume.empty()) resume = load_checkpoint(args.resume);
    std::optional<Denoiser> init;
    if (!args.init_from.empty()) {
        LoadedModel loaded = load_model(args.init_from);
        init.emplace(std::move(loaded.model));
    }

    std::error_code ec;
    fs::create_directories(args.out, ec);
    if (ec) throw IoError("cannot create " + args.out + ": " + ec.message());

    // The frozen group's bytes must survive the run untouched; hash the same
    // initial state train() builds internally.
    const std::string frozen_group =
        run.train.stage == TrainStage::spatial_pretrain ? "temporal" : "spatial";
    std::uint32_t crc_before = 0;
    {
        Rng init_rng(Rng::derive(run.train.seed, 0));
        Denoiser initial(run.train.model, init_rng);
        if (init) copy_parameters(*init, initial);
        if (resume) {
            AdamState adam;
            std::int64_t step = 0;
            restore_training_state(*resume, initial, adam, step);
        }
        crc_before = parameter_group_crc32(initial, frozen_group);
    }

    std::optional<Checkpoint> last;
    int last_step = 0;
    TrainResult result =
        train(run.train, data, init ? &*init : nullptr, resume ? &*resume : nullptr,
              [&](const Checkpoint& ckpt, int step) {
                  char buf[48];
                  std::snprintf(buf, sizeof buf, "/ckpt_%06d.ckpt", step);
                  save_checkpoint(args.out + buf, ckpt);
                  last = ckpt;
                  last_step = step;
              });
    if (last) save_checkpoint(args.out + "/model.ckpt", *last);

    const std::uint32_t crc_after = parameter_group_crc32(result.model, frozen_group);
    const bool held = crc_before == crc_after;

    std::string metrics = "step\tloss\tssim\ttemporal_consistency\tmotion_intensity\n";
    for (const std::string& line : result.log) metrics += line + "\n";
    write_text_file(args.out + "/metrics.tsv", metrics);

    char freeze_line[128];
    std::snprintf(freeze_line, sizeof freeze_line,
                  "freeze_group=%s crc_before=%08x crc_after=%08x held=%s", frozen_group.c_str(),
                  crc_before, crc_after, held ? "true" : "false");
    std::string log;
    log += std::string("stage=") +
           (run.train.stage == TrainStage::spatial_pretrain ? "spatial_pretrain" : "temporal") +
           "\n";
    log += "steps=" + std::to_string(result.losses.size()) + "\n";
    log += std::string(freeze_line) + "\n";
    log += "final_checkpoint_step=" + std::to_string(last_step) + "\n";
    write_text_file(args.out + "/train.log", log);
    std::cout << freeze_line << "\n";
    if (!held) throw InvariantError("frozen group changed during training");
    std::cout << "trained " << result.losses.size() << " steps; checkpoints in " << args.out
              << "\n";
}

// ---------------------------------------------------------------------------
// sample

struct SampleArgs {
    std::string ckpt;
    std::string image;
    int frames = 8;
    int steps = 50;
    double cfg_w = 2.0;
    double eta = 0.0;
    std::uint64_t seed = 0;
    std::string out;
    double noisy_prior = -1.0;  // < 0 means off
    bool latent_replacement = false;
    std::string scene;
    double rescale_phi = -1.0;  // < 0 means off
};

void cmd_sample(const SampleArgs& args) {
    LoadedModel loaded = load_model(args.ckpt);
    const DenoiserConfig& mc = loaded.model.config();

    Tensor image = read_pgm(args.image);
    if (image.dim(1) != 2 * mc.h || image.dim(2) != 2 * mc.w)
        throw CompatError("image extents do not match the checkpoint's latent geometry");
    if (args.frames < 1 || args.frames > mc.t_clip_max)
        throw ConfigError("--frames must be in [1, " + std::to_string(mc.t_clip_max) + "]");

    SemanticCondition cond = condition_for(image, args.scene);

    SamplerConfig scfg;
    scfg.k = args.steps;
    scfg.eta = args.eta;
    scfg.guidance.w = args.cfg_w;
    if (args.rescale_phi >= 0.0) scfg.guidance.rescale_phi = args.rescale_phi;
    scfg.seed = args.seed;
    scfg.latent_replacement = args.latent_replacement;

    GenerationJob job;
    job.model = &loaded.model;
    job.schedule = &loaded.schedule;
    job.t_clip = args.frames;
    job.condition = cond;
    Tensor ref_latent = encode_frame(image);
    job.reference_latents[0] = ref_latent;
    if (args.noisy_prior >= 0.0) {
        Rng prior_rng(scfg.seed);
        job.initial_state =
            noisy_prior_baseline(ref_latent, args.noisy_prior, args.frames, loaded.schedule,
                                 prior_rng);
    }

    Tensor latents = sample(job, scfg);
    std::vector<Tensor> frames = split_frames(decode_clip(latents));

    VideoManifest manifest;
    manifest.frame_count = args.frames;
    manifest.height = 2 * mc.h;
    manifest.width = 2 * mc.w;
    manifest.seed = args.seed;
    write_video_dir(args.out, frames, manifest);

    json record{{"command", "sample"},
                {"checkpoint", args.ckpt},
                {"image", args.image},
                {"frames", args.frames},
                {"steps", args.steps},
                {"guidance_w", args.cfg_w},
                {"rescale_phi",
                 args.rescale_phi >= 0.0 ? json(args.rescale_phi) : json(nullptr)},
                {"eta", args.eta},
                {"seed", args.seed},
                {"initial_noise_seed", scfg.seed},
                {"noisy_prior", args.noisy_prior >= 0.0 ? json(args.noisy_prior) : json(nullptr)},
                {"latent_replacement", args.latent_replacement},
                {"condition", std::vector<double>(cond.vec.begin(), cond.vec.end())},
                {"generator", kGeneratorVersion}};
    write_text_file(args.out + "/sampling.json", record.dump(2) + "\n");
    std::cout << "wrote " << args.frames << " frames to " << args.out << "\n";
}

// ---------------------------------------------------------------------------
// predict

struct PredictArgs {
    std::string ckpt;
    std::string video;
    int context = 2;
    int total = 0;
    int t_clip = 0;  // 0: model capacity
    int steps = 50;
    double cfg_w = 2.0;
    std::uint64_t seed = 0;
    std::string out;
};

void cmd_predict(const PredictArgs& args) {
    LoadedModel loaded = load_model(args.ckpt);
    const DenoiserConfig& mc = loaded.model.config();

    VideoOnDisk video = read_video_dir(args.video);
    if (int(video.frames.size()) < args.context)
        throw ConfigError("input video has fewer frames than the requested context");
    if (video.manifest.height != 2 * mc.h || video.manifest.width != 2 * mc.w)
        throw CompatError("video extents do not match the checkpoint's latent geometry");

    const int t_clip = args.t_clip > 0 ? args.t_clip : mc.t_clip_max;
    const int total = args.total > 0 ? args.total : t_clip;
    if (t_clip > mc.t_clip_max)
        throw ConfigError("--t-clip exceeds the model capacity of " +
                          std::to_string(mc.t_clip_max));

    SemanticCondition cond = video.manifest.scene ? scene_condition(*video.manifest.scene)
                                                  : estimate_condition(video.frames[0]);
    SamplerConfig scfg;
    scfg.k = args.steps;
    scfg.guidance.w = args.cfg_w;
    scfg.seed = args.seed;

    LongVideoResult result = generate_long_video(loaded.model, loaded.schedule, video.frames[0],
                                                 cond, t_clip, total, args.context, scfg);

    VideoManifest manifest;
    manifest.frame_count = total;
    manifest.height = 2 * mc.h;
    manifest.width = 2 * mc.w;
    manifest.seed = args.seed;
    write_video_dir(args.out, result.frames, manifest);

    json record{{"command", "predict"}, {"checkpoint", args.ckpt},
                {"video", args.video},   {"context", args.context},
                {"total", total},        {"t_clip", t_clip},
                {"steps", args.steps},   {"guidance_w", args.cfg_w},
                {"seed", args.seed},     {"passes", result.passes},
                {"generator", kGeneratorVersion}};
    write_text_file(args.out + "/predict.json", record.dump(2) + "\n");
    std::cout << "wrote " << total << " frames in " << result.passes << " passes to " << args.out
              << "\n";
}

// ---------------------------------------------------------------------------
// eval

std::vector<std::string> list_clip_dirs(const std::string& dir) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
    std::vector<std::string> clips;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_directory() && fs::exists(entry.path() / "manifest.json"))
            clips.push_back(entry.path().string());
    std::sort(clips.begin(), clips.end());
    if (clips.empty() && fs::exists(fs::path(dir) / "manifest.json")) clips.push_back(dir);
    return clips;
}

struct EvalArgs {
    std::string generated;
    std::string references;
    std::string out;
};

void cmd_eval(const EvalArgs& args) {
    const std::vector<std::string> gen_dirs = list_clip_dirs(args.generated);
    const std::vector<std::string> ref_dirs = list_clip_dirs(args.references);
    if (gen_dirs.empty()) throw ConfigError("no clips under " + args.generated);
    if (gen_dirs.size() != ref_dirs.size())
        throw ConfigError("generated and reference clip counts differ: " +
                          std::to_string(gen_dirs.size()) + " vs " +
                          std::to_string(ref_dirs.size()));

    std::vector<std::vector<Tensor>> generated;
    std::vector<Tensor> references;
    for (std::size_t i = 0; i < gen_dirs.size(); ++i) {
        generated.push_back(read_video_dir(gen_dirs[i]).frames);
        VideoOnDisk ref = read_video_dir(ref_dirs[i]);
        if (ref.frames.empty()) throw IoError("reference clip has no frames: " + ref_dirs[i]);
        references.push_back(ref.frames[0]);
    }
    MetricsReport report = evaluate(generated, references);
    write_text_file(args.out + ".tsv", report_tsv(report));
    write_text_file(args.out + ".json", report_json(report));
    std::printf("n=%d ssim_first_frame=%.6f temporal_consistency=%.6f motion_intensity=%.6f\n",
                report.n_videos, report.ssim_first_frame, report.temporal_consistency,
                report.motion_intensity);
}

}  // namespace

SemanticCondition estimate_condition(const Tensor& image) {
    if (!image.defined() || image.rank() != 3 || image.dim(0) != 1)
        throw ShapeError("estimate_condition: image must be [1,H,W]");
    const int h = image.dim(1), w = image.dim(2);
    auto d = image.data();
    double mass = 0.0, sx = 0.0, sy = 0.0, peak = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double v = double(d[std::size_t(y) * w + x]);
            mass += v;
            sx += v * (x + 0.5);
            sy += v * (y + 0.5);
            peak = std::max(peak, v);
        }
    SceneSpec s;
    s.vx = 0.0;
    s.vy = 0.0;
    if (mass > 1e-6) {
        s.x0 = std::clamp(sx / mass / w, 0.0, 1.0);
        s.y0 = std::clamp(sy / mass / h, 0.0, 1.0);
        s.intensity = std::clamp(peak, 0.5, 0.999);
        s.radius = std::clamp(std::sqrt(mass / s.intensity) / (2.0 * w), 0.1, 0.249);
    }
    return scene_condition(s);
}

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"toy image-to-video latent diffusion"};
    app.require_subcommand(1);

    GenDataArgs gen_args;
    CLI::App* gen = app.add_subcommand("gen-data", "render a procedural toy video dataset");
    gen->add_option("--out", gen_args.out, "output directory")->required();
    gen->add_option("--clips", gen_args.clips, "number of clips");
    gen->add_option("--frames", gen_args.frames, "frames per clip");
    gen->add_option("--size", gen_args.size, "frame extents as HxW");
    gen->add_option("--seed", gen_args.seed, "dataset seed");

    TrainArgs train_args;
    CLI::App* tr = app.add_subcommand("train", "run one training stage");
    tr->add_option("--config", train_args.config, "run config JSON")->required();
    tr->add_option("--stage", train_args.stage, "spatial or temporal (overrides the config)");
    tr->add_option("--resume", train_args.resume, "checkpoint to resume");
    tr->add_option("--init-from", train_args.init_from, "checkpoint to initialize from");
    tr->add_option("--out", train_args.out, "output directory");

    SampleArgs sample_args;
    CLI::App* sa = app.add_subcommand("sample", "image-to-video generation");
    sa->add_option("--ckpt", sample_args.ckpt, "model checkpoint")->required();
    sa->add_option("--image", sample_args.image, "reference frame (PGM)")->required();
    sa->add_option("--frames", sample_args.frames, "clip length");
    sa->add_option("--steps", sample_args.steps, "sampling steps");
    sa->add_option("--cfg", sample_args.cfg_w, "guidance weight");
    sa->add_option("--eta", sample_args.eta, "stochasticity in [0,1]");
    sa->add_option("--seed", sample_args.seed, "sampling seed");
    sa->add_option("--out", sample_args.out, "output directory")->required();
    sa->add_option("--noisy-prior", sample_args.noisy_prior,
                   "leak the reference into the initial state with this strength");
    sa->add_flag("--latent-replacement", sample_args.latent_replacement,
                 "re-impose reference latents between steps");
    sa->add_option("--scene", sample_args.scene, "manifest supplying the scene condition");
    sa->add_option("--rescale-phi", sample_args.rescale_phi, "guidance rescale factor");

    PredictArgs predict_args;
    CLI::App* pr = app.add_subcommand("predict", "continue a video");
    pr->add_option("--ckpt", predict_args.ckpt, "model checkpoint")->required();
    pr->add_option("--video", predict_args.video, "input video directory")->required();
    pr->add_option("--context", predict_args.context, "overlap frames L");
    pr->add_option("--total", predict_args.total, "total frames to emit");
    pr->add_option("--t-clip", predict_args.t_clip, "frames per pass (default model capacity)");
    pr->add_option("--steps", predict_args.steps, "sampling steps");
    pr->add_option("--cfg", predict_args.cfg_w, "guidance weight");
    pr->add_option("--seed", predict_args.seed, "sampling seed");
    pr->add_option("--out", predict_args.out, "output directory")->required();

    EvalArgs eval_args;
    CLI::App* ev = app.add_subcommand("eval", "score generated clips against references");
    ev->add_option("--generated", eval_args.generated, "directory of generated clips")->required();
    ev->add_option("--references", eval_args.references, "directory of reference clips")
        ->required();
    ev->add_option("--out", eval_args.out, "report path base (.tsv/.json appended)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) cmd_gen_data(gen_args);
        if (tr->parsed()) cmd_train(train_args);
        if (sa->parsed()) cmd_sample(sample_args);
        if (pr->parsed()) cmd_predict(predict_args);
        if (ev->parsed()) cmd_eval(eval_args);
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const CompatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 4;
    }
}

}  // namespace atmv
