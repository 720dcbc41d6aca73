#include "egodiff/harness.hpp"

#include "egodiff/image_io.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>
#include <thread>

namespace egodiff {

namespace fs = std::filesystem;

std::string to_string(PoseVariant v) {
    switch (v) {
        case PoseVariant::full_body: return "full_body";
        case PoseVariant::head_only: return "head_only";
        case PoseVariant::none: return "none";
        case PoseVariant::cumulative_head: return "cumulative_head";
        case PoseVariant::per_joint_delta: return "per_joint_delta";
    }
    throw std::logic_error("unreachable");
}

std::string to_string(ControlMechanism m) {
    switch (m) {
        case ControlMechanism::adaln: return "adaln";
        case ControlMechanism::cross_attn: return "cross_attn";
        case ControlMechanism::both: return "both";
    }
    throw std::logic_error("unreachable");
}

PoseVariant parse_pose_variant(const std::string& s) {
    for (PoseVariant v : {PoseVariant::full_body, PoseVariant::head_only, PoseVariant::none,
                          PoseVariant::cumulative_head, PoseVariant::per_joint_delta}) {
        if (to_string(v) == s) return v;
    }
    throw std::invalid_argument("unknown pose variant: " + s);
}

ControlMechanism parse_control_mechanism(const std::string& s) {
    for (ControlMechanism m : {ControlMechanism::adaln, ControlMechanism::cross_attn, ControlMechanism::both}) {
        if (to_string(m) == s) return m;
    }
    throw std::invalid_argument("unknown control mechanism: " + s);
}

void RunConfig::validate() const {
    if (dataset.empty()) throw std::invalid_argument("config: dataset path is empty");
    if (out_dir.empty()) throw std::invalid_argument("config: out_dir is empty");
    if (r >= d) throw std::invalid_argument("config: modulation rank r must be < d");
    if (d % heads != 0) throw std::invalid_argument("config: d must be divisible by heads");
    if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
    if (iterations < 1) throw std::invalid_argument("config: iterations must be >= 1");
    if (checkpoint_interval < 1) throw std::invalid_argument("config: checkpoint_interval must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("config: lr must be > 0");
    if (lr_min < 0.0 || lr_min > lr) throw std::invalid_argument("config: lr_min must be in [0, lr]");
    if (grad_clip < 0.0) throw std::invalid_argument("config: grad_clip must be >= 0");
    schedule.validate();
    guidance.validate();
}

std::string RunConfig::to_json() const {
    nlohmann::json j;
    j["dataset"] = dataset;
    j["out_dir"] = out_dir;
    j["seed"] = seed;
    j["d"] = d;
    j["r"] = r;
    j["heads"] = heads;
    j["depth"] = depth;
    j["patch"] = patch;
    j["step_embed"] = step_embed;
    j["lr"] = lr;
    j["lr_min"] = lr_min;
    j["grad_clip"] = grad_clip;
    j["beta1"] = beta1;
    j["beta2"] = beta2;
    j["batch_size"] = batch_size;
    j["iterations"] = iterations;
    j["checkpoint_interval"] = checkpoint_interval;
    j["threads"] = threads;
    j["sigma_min"] = schedule.sigma_min;
    j["sigma_max"] = schedule.sigma_max;
    j["rho"] = schedule.rho;
    j["steps"] = schedule.steps;
    j["sigma_data"] = schedule.sigma_data;
    j["p_mean"] = schedule.p_mean;
    j["p_std"] = schedule.p_std;
    j["guidance_weight"] = guidance.weight;
    j["context_dropout"] = guidance.context_dropout_prob;
    j["variant"] = to_string(variant);
    j["mechanism"] = to_string(mechanism);
    return j.dump(2);
}

RunConfig config_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
    RunConfig c;
    for (const auto& [key, val] : j.items()) {
        if (key == "dataset") c.dataset = val.get<std::string>();
        else if (key == "out_dir") c.out_dir = val.get<std::string>();
        else if (key == "seed") c.seed = val.get<uint64_t>();
        else if (key == "d") c.d = val.get<long>();
        else if (key == "r") c.r = val.get<long>();
        else if (key == "heads") c.heads = val.get<long>();
        else if (key == "depth") c.depth = val.get<long>();
        else if (key == "patch") c.patch = val.get<long>();
        else if (key == "step_embed") c.step_embed = val.get<long>();
        else if (key == "lr") c.lr = val.get<double>();
        else if (key == "lr_min") c.lr_min = val.get<double>();
        else if (key == "grad_clip") c.grad_clip = val.get<double>();
        else if (key == "beta1") c.beta1 = val.get<double>();
        else if (key == "beta2") c.beta2 = val.get<double>();
        else if (key == "batch_size") c.batch_size = val.get<long>();
        else if (key == "iterations") c.iterations = val.get<long>();
        else if (key == "checkpoint_interval") c.checkpoint_interval = val.get<long>();
        else if (key == "threads") c.threads = val.get<long>();
        else if (key == "sigma_min") c.schedule.sigma_min = val.get<double>();
        else if (key == "sigma_max") c.schedule.sigma_max = val.get<double>();
        else if (key == "rho") c.schedule.rho = val.get<double>();
        else if (key == "steps") c.schedule.steps = val.get<long>();
        else if (key == "sigma_data") c.schedule.sigma_data = val.get<double>();
        else if (key == "p_mean") c.schedule.p_mean = val.get<double>();
        else if (key == "p_std") c.schedule.p_std = val.get<double>();
        else if (key == "guidance_weight") c.guidance.weight = val.get<double>();
        else if (key == "context_dropout") c.guidance.context_dropout_prob = val.get<double>();
        else if (key == "variant") c.variant = parse_pose_variant(val.get<std::string>());
        else if (key == "mechanism") c.mechanism = parse_control_mechanism(val.get<std::string>());
        else throw std::invalid_argument("config: unknown key `" + key + "`");
    }
    c.validate();
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return config_from_json(text);
}

long resolve_threads(long configured) {
    if (configured > 0) return configured;
    if (const char* env = std::getenv("EGODIFF_THREADS")) {
        const long n = std::strtol(env, nullptr, 10);
        if (n > 0) return n;
    }
    return 1;
}

DiTConfig model_config_for(const RunConfig& cfg, const DatasetConfig& data) {
    DiTConfig mc;
    mc.d = cfg.d;
    mc.r = cfg.r;
    mc.heads = cfg.heads;
    mc.depth = cfg.depth;
    mc.patch = cfg.patch;
    mc.step_embed = cfg.step_embed;
    mc.t_lat = latent_frames_for(data.clip_length);
    mc.ctx_lat = context_latents_for(data.past_frames);
    mc.c_lat = 48 * 4;
    mc.h_lat = data.height / 4;
    mc.w_lat = data.width / 4;
    mc.future_frames = data.clip_length - data.past_frames;
    mc.past_frames = data.past_frames;
    mc.adaln_pose = cfg.mechanism != ControlMechanism::cross_attn;
    mc.cross_attn_pose = cfg.mechanism != ControlMechanism::adaln;
    mc.validate();
    return mc;
}

bool build_variant_control(const PoseSequence& seq, PoseVariant variant, ControlTensor& out) {
    switch (variant) {
        case PoseVariant::none:
            return false;
        case PoseVariant::full_body:
            out = assemble_control(seq);
            return true;
        case PoseVariant::head_only:
            out = assemble_control(seq);
            out.values.rightCols(out.values.cols() - 6).setZero();  // joints 1..22
            return true;
        case PoseVariant::cumulative_head:
            out = assemble_control(seq);
            out.values.leftCols(6) = cumulative_head_variant(seq);
            return true;
        case PoseVariant::per_joint_delta:
            out = per_joint_delta_variant(seq);
            return true;
    }
    throw std::logic_error("unreachable");
}

ControlBuilder control_builder(PoseVariant variant) {
    return [variant](const PoseSequence& seq, ControlTensor& out) {
        return build_variant_control(seq, variant, out);
    };
}

namespace {

struct ClipGrad {
    double loss = 0.0;
    std::map<std::string, Eigen::ArrayXd> grads;
};

ClipGrad clip_gradients(const TrainClip& clip, const DenoiserModel& model,
                        const NoiseSchedule& schedule, uint64_t seed) {
    GradientTape tape;
    Tensor loss = training_loss_clip(clip, model, schedule, seed);
    tape.backward(loss);
    ClipGrad out;
    out.loss = loss.scalar();
    model.params().for_each([&](const std::string& name, const Tensor& t) {
        if (const auto* g = tape.find_grad(t.node())) out.grads.emplace(name, *g);
    });
    return out;
}

std::vector<TrainClip> load_train_clips(const std::string& dataset_dir, const DatasetManifest& manifest,
                                        const DiTConfig& mc, PoseVariant variant) {
    std::vector<TrainClip> clips;
    for (const ClipInfo& info : manifest.in_split("train")) {
        const ClipRecord rec = load_clip(dataset_dir, info);
        TrainClip tc;
        tc.latents = tokenize(rec.frames, mc.ctx_lat);
        PoseSequence seq;
        seq.dt = rec.poses.dt;
        seq.frames.assign(rec.poses.frames.begin() + (manifest.config.past_frames - 1),
                          rec.poses.frames.end());
        tc.has_control = build_variant_control(seq, variant, tc.control);
        clips.push_back(std::move(tc));
    }
    if (clips.empty()) throw std::runtime_error("train: dataset has no clips in the train split");
    return clips;
}

}  // namespace

TrainResult train(const RunConfig& cfg) {
    cfg.validate();
    const DatasetManifest manifest = load_manifest(cfg.dataset);
    const DiTConfig mc = model_config_for(cfg, manifest.config);
    const std::vector<TrainClip> clips = load_train_clips(cfg.dataset, manifest, mc, cfg.variant);

    fs::create_directories(cfg.out_dir);
    const std::string ckpt_dir = (fs::path(cfg.out_dir) / "checkpoint").string();
    {
        std::ofstream cf(fs::path(cfg.out_dir) / "run_config.json", std::ios::binary);
        cf << cfg.to_json() << '\n';
    }

    DenoiserModel model = fs::exists(fs::path(ckpt_dir) / "manifest.json")
                              ? DenoiserModel::load(ckpt_dir)
                              : DenoiserModel(mc, mix_seed(cfg.seed, 100));
    ParameterStore& params = model.params();

    AdamConfig adam;
    adam.lr = cfg.lr;
    adam.beta1 = cfg.beta1;
    adam.beta2 = cfg.beta2;

    const long threads = resolve_threads(cfg.threads);
    const long start = params.step_count();

    std::ofstream log(fs::path(cfg.out_dir) / "train_log.jsonl", std::ios::app);
    if (!log) throw std::runtime_error("train: cannot open log in " + cfg.out_dir);

    TrainResult result;
    result.checkpoint_dir = ckpt_dir;
    const auto t0 = std::chrono::steady_clock::now();
    for (long step = start; step < cfg.iterations; ++step) {
        const uint64_t step_seed = mix_seed(cfg.seed, 3000 + static_cast<uint64_t>(step));
        std::mt19937_64 rng(mix_seed(step_seed, 1));
        std::uniform_int_distribution<size_t> pick(0, clips.size() - 1);
        std::vector<TrainClip> batch;
        for (long b = 0; b < cfg.batch_size; ++b) batch.push_back(clips[pick(rng)]);
        if (cfg.lr_min > 0.0 && cfg.iterations > 1) {
            // keyed to the step index and the configured horizon, so a
            // resumed run replays the same learning-rate sequence
            const double prog = static_cast<double>(step) / static_cast<double>(cfg.iterations - 1);
            adam.lr = cfg.lr_min + (cfg.lr - cfg.lr_min) * 0.5 * (1.0 + std::cos(M_PI * prog));
        }
        context_dropout(batch, cfg.guidance.context_dropout_prob, mix_seed(step_seed, 2));

        std::vector<ClipGrad> results(batch.size());
        auto worker = [&](size_t lo, size_t hi) {
            for (size_t i = lo; i < hi; ++i) {
                results[i] = clip_gradients(batch[i], model, cfg.schedule, mix_seed(step_seed, 10 + i));
            }
        };
        if (threads <= 1 || batch.size() <= 1) {
            worker(0, batch.size());
        } else {
            const size_t nt = std::min<size_t>(static_cast<size_t>(threads), batch.size());
            std::vector<std::thread> pool;
            for (size_t t = 0; t < nt; ++t) {
                const size_t lo = batch.size() * t / nt, hi = batch.size() * (t + 1) / nt;
                pool.emplace_back(worker, lo, hi);
            }
            for (auto& th : pool) th.join();
        }

        params.zero_grads();
        double loss = 0.0;
        for (const ClipGrad& r : results) {  // fixed clip order -> bit-determinism
            loss += r.loss;
            for (const auto& [name, g] : r.grads) params.add_grad(name, g);
        }
        loss /= static_cast<double>(batch.size());
        params.scale_grads(1.0 / static_cast<double>(batch.size()));
        if (!std::isfinite(loss)) {
            throw std::runtime_error("train: non-finite loss at step " + std::to_string(step) +
                                     " (grad max " + std::to_string(params.grad_max_abs()) + ")");
        }
        if (cfg.grad_clip > 0.0) params.clip_grad_norm(cfg.grad_clip);
        params.adam_step(adam);

        if (step == start) result.initial_loss = loss;
        result.final_loss = loss;
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log << "{\"step\":" << (step + 1) << ",\"loss\":" << loss << ",\"wall_time\":" << wall << "}\n";
        log.flush();

        if ((step + 1) % cfg.checkpoint_interval == 0 || step + 1 == cfg.iterations) {
            model.save(ckpt_dir);
        }
    }
    result.steps = params.step_count();
    return result;
}

namespace {

const ClipInfo& find_clip(const DatasetManifest& manifest, const std::string& id) {
    for (const auto& c : manifest.clips) {
        if (c.id == id) return c;
    }
    throw std::invalid_argument("no such clip: " + id);
}

}  // namespace

void sample_cmd(const RunConfig& cfg, const std::string& checkpoint_dir,
                const std::string& context_clip, const std::string& pose_clip,
                const std::string& out_dir, uint64_t seed) {
    const DatasetManifest manifest = load_manifest(cfg.dataset);
    const long n = manifest.config.past_frames;
    DenoiserModel model = DenoiserModel::load(checkpoint_dir);
    const DiTConfig& mc = model.config();

    const ClipRecord ctx_rec = load_clip(cfg.dataset, find_clip(manifest, context_clip));
    const ClipRecord pose_rec = load_clip(cfg.dataset, find_clip(manifest, pose_clip));

    const LatentVideo full = tokenize(ctx_rec.frames, mc.ctx_lat);
    LatentVideo past = LatentVideo::zeros(mc.ctx_lat, mc.c_lat, mc.h_lat, mc.w_lat, mc.ctx_lat);
    past.data = full.data.head(past.size());

    PoseSequence seq;
    seq.dt = pose_rec.poses.dt;
    seq.frames.assign(pose_rec.poses.frames.begin() + (n - 1), pose_rec.poses.frames.end());
    if (seq.horizon() != mc.future_frames) {
        throw std::invalid_argument("sample: pose source horizon " + std::to_string(seq.horizon()) +
                                    " does not match model M=" + std::to_string(mc.future_frames));
    }
    ControlTensor control;
    const bool has_control = build_variant_control(seq, cfg.variant, control);

    const LatentVideo gen =
        sample(past, has_control ? &control : nullptr, model, cfg.schedule, cfg.guidance, seed);
    const std::vector<Image> decoded = detokenize(gen);

    fs::create_directories(out_dir);
    std::vector<Image> generated(decoded.begin() + n, decoded.end());
    write_frames_bin(generated, (fs::path(out_dir) / "frames.bin").string());
    write_png_strip(decoded, (fs::path(out_dir) / "strip.png").string(), 4);
}

EvalReport eval_checkpoint(const std::string& checkpoint_dir, const std::string& dataset_dir,
                           const EvalOptions& opts, uint64_t seed) {
    DenoiserModel model = DenoiserModel::load(checkpoint_dir);
    return evaluate(model, dataset_dir, opts, seed, checkpoint_dir);
}

void ablate(const std::string& grid_path, const std::string& out_csv) {
    std::ifstream f(grid_path);
    if (!f) throw std::runtime_error("ablate: cannot open " + grid_path);
    nlohmann::json grid;
    f >> grid;
    nlohmann::json base = grid.at("base");
    if (!grid.at("cells").is_array() || grid.at("cells").empty()) {
        throw std::invalid_argument("ablate: grid needs a non-empty `cells` array");
    }

    std::ofstream csv(out_csv, std::ios::binary);
    if (!csv) throw std::runtime_error("ablate: cannot write " + out_csv);
    csv << "name,ssim,trans_error,rot_error,miou,presence_accuracy\n";
    char row[256];
    for (const auto& cell : grid.at("cells")) {
        const std::string name = cell.at("name").get<std::string>();
        nlohmann::json merged = base;
        for (const auto& [k, v] : cell.items()) {
            if (k == "name") continue;
            merged[k] = v;
        }
        merged["out_dir"] = base.at("out_dir").get<std::string>() + "/" + name;
        const RunConfig cfg = config_from_json(merged.dump());
        const TrainResult tr = train(cfg);

        EvalOptions opts;
        opts.schedule = cfg.schedule;
        opts.guidance = cfg.guidance;
        opts.split = "test";
        opts.control = control_builder(cfg.variant);
        const EvalReport rep = eval_checkpoint(tr.checkpoint_dir, cfg.dataset, opts, mix_seed(cfg.seed, 9000));
        rep.save((fs::path(cfg.out_dir) / "report.json").string());
        std::snprintf(row, sizeof(row), "%s,%.4f,%.4f,%.4f,%.4f,%.4f\n", name.c_str(), rep.ssim,
                      rep.trans_error, rep.rot_error, rep.miou, rep.presence_accuracy);
        csv << row;
    }
}

}  // namespace egodiff
