// Acceptance gate: one pass/fail line per criterion. Criteria 1-6 are exact
// mathematical invariants; 7-9 train the ablation grid at desk scale and
// assert the comparative orderings; 10 is the steerability demo.
#include "egodiff/harness.hpp"

#include <nlohmann/json.hpp>

#include <Eigen/SVD>

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

using namespace egodiff;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int n, bool pass, const std::string& msg) {
    std::printf("%s %d: %s\n", pass ? "PASS" : "FAIL", n, msg.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof(buf), f, ap);
    va_end(ap);
    return buf;
}

// ---- experiment scale (pinned; see work dir for artifacts) ----

const char* kWorkDir = "acceptance_work";
constexpr uint64_t kDataSeed = 7;
constexpr long kIterations = 3000;

DatasetConfig acceptance_dataset_config() {
    DatasetConfig dc;
    dc.num_trajectories = 10;
    dc.clips_per_trajectory = 2;
    dc.clip_length = 13;
    dc.past_frames = 5;
    dc.width = 32;
    dc.height = 32;
    dc.landmarks = 8;
    return dc;
}

RunConfig base_run_config(const std::string& dataset) {
    RunConfig c;
    c.dataset = dataset;
    c.seed = 0;
    // patch 1 with d = 192 keeps the output head full-rank over the
    // 192-channel latent tokens; larger patches (or smaller d) floor the EDM
    // loss at the unreachable noise component and samples stay pure noise
    c.d = 192;
    c.r = 32;
    c.heads = 4;
    c.depth = 2;
    c.patch = 1;
    c.step_embed = 32;
    c.batch_size = 2;
    c.lr = 1e-3;
    c.iterations = kIterations;
    c.checkpoint_interval = 1000;
    return c;
}

std::string dataset_dir() { return std::string(kWorkDir) + "/dataset"; }
std::string calib_dataset_dir() { return std::string(kWorkDir) + "/calib_dataset"; }

void ensure_dataset() {
    if (!fs::exists(fs::path(dataset_dir()) / "manifest.json")) {
        fs::create_directories(dataset_dir());
        generate_dataset(acceptance_dataset_config(), dataset_dir(), kDataSeed);
    }
}

// estimator calibration runs at the 48x48 default resolution; 32x32 training
// frames sit on the aliasing floor of the photometric objective
void ensure_calib_dataset() {
    if (!fs::exists(fs::path(calib_dataset_dir()) / "manifest.json")) {
        DatasetConfig dc = acceptance_dataset_config();
        dc.num_trajectories = 6;
        dc.clips_per_trajectory = 1;
        dc.width = 48;
        dc.height = 48;
        fs::create_directories(calib_dataset_dir());
        generate_dataset(dc, calib_dataset_dir(), kDataSeed + 1);
    }
}

RigidTransform random_pose(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Pose6D p;
    p.translation = Eigen::Vector3d(3.0 * u(rng), 3.0 * u(rng), 3.0 * u(rng));
    p.rotation = Eigen::Vector3d(3.0 * u(rng), 1.4 * u(rng), 3.0 * u(rng));
    return pose6d_to_transform(p);
}

// ---- criteria 1-6 ----

void criterion_1() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst_rt = 0.0;
    for (uint64_t s = 0; s < 1000; ++s) {
        std::mt19937_64 rng(mix_seed(11, s));
        const RigidTransform t = random_pose(rng);
        const RigidTransform back = pose6d_to_transform(transform_to_6d(t));
        worst_rt = std::max(worst_rt, (back.matrix() - t.matrix()).cwiseAbs().maxCoeff());
    }

    double worst_chain = 0.0;
    for (long m : {16L, 64L, 256L}) {
        std::mt19937_64 rng(mix_seed(12, static_cast<uint64_t>(m)));
        std::vector<RigidTransform> traj;
        RigidTransform cur;
        for (long i = 0; i <= m; ++i) {
            std::uniform_real_distribution<double> u(-0.05, 0.05);
            cur = compose(RigidTransform(Eigen::AngleAxisd(u(rng), Eigen::Vector3d(u(rng), u(rng), 1.0).normalized())
                                             .toRotationMatrix(),
                                         Eigen::Vector3d(u(rng), u(rng), u(rng))),
                          cur);
            traj.push_back(cur);
        }
        RigidTransform prod;
        for (long i = 1; i <= m; ++i) prod = compose(relative_transform(traj[i], traj[i - 1]), prod);
        const RigidTransform target = compose(traj[m], invert(traj[0]));
        worst_chain = std::max(worst_chain, (prod.matrix() - target.matrix()).cwiseAbs().maxCoeff());
    }

    double worst_inv = 0.0;
    for (uint64_t s = 0; s < 50; ++s) {
        std::mt19937_64 rng(mix_seed(13, s));
        const Scene scene = Scene::generate(100 + s);
        AgentState st = sample_trajectory(scene, 2, 200 + s)[0];
        st.left = {0.8, 0.4};
        st.right = {1.1, 0.2};
        const BodyPoseFrame frame = skeleton_to_body_pose(st);
        const RigidTransform g = random_pose(rng);
        BodyPoseFrame moved = frame;
        for (auto& j : moved.joints) j = compose(g, j);
        worst_inv = std::max(worst_inv, (pelvis_relative_joints(moved) - pelvis_relative_joints(frame))
                                            .cwiseAbs().maxCoeff());
    }

    const double el = seconds_since(t0);
    const bool pass = worst_rt < 1e-9 && worst_chain < 1e-8 && worst_inv < 1e-12 && el < 10.0;
    report(1, pass,
           fmt("SE(3) suite: 6D round trip %.2e (<1e-9), chained deltas %.2e (<1e-8), "
               "pelvis-relative invariance %.2e (<1e-12), %.1f s (<10 s)",
               worst_rt, worst_chain, worst_inv, el));
}

// finite-difference check of d(loss)/d(inputs) for an op under a random
// weighted-sum loss; returns worst relative error
double fd_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                const std::vector<Shape>& shapes, uint64_t seed) {
    std::vector<Tensor> inputs;
    for (size_t i = 0; i < shapes.size(); ++i) {
        inputs.push_back(Tensor::randn(shapes[i], mix_seed(seed, i), 0.5));
        inputs.back().set_requires_grad(true);
    }
    Tensor probe;
    {
        GradientTape warm;  // shape discovery
        probe = Tensor::randn(f(inputs).shape(), mix_seed(seed, 99));
    }
    auto loss_of = [&] { return sum(mul(f(inputs), probe)).scalar(); };
    std::vector<Eigen::ArrayXd> analytic;
    {
        GradientTape tape;
        Tensor loss = sum(mul(f(inputs), probe));
        tape.backward(loss);
        for (const auto& in : inputs) analytic.push_back(tape.grad(in));
    }
    const double h = 1e-6;
    double worst = 0.0;
    for (size_t i = 0; i < inputs.size(); ++i) {
        const Eigen::ArrayXd base = inputs[i].data();
        for (long k = 0; k < base.size(); ++k) {
            Eigen::ArrayXd m = base;
            m[k] = base[k] + h;
            inputs[i].assign(m);
            const double up = loss_of();
            m[k] = base[k] - h;
            inputs[i].assign(m);
            const double down = loss_of();
            inputs[i].assign(base);
            const double num = (up - down) / (2.0 * h);
            const double rel = std::abs(analytic[i][k] - num) / std::max(std::abs(num), 1e-3);
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

DiTConfig grad_check_config() {
    DiTConfig c;
    c.d = 32;
    c.r = 8;
    c.heads = 4;
    c.depth = 2;
    c.patch = 1;
    c.t_lat = 3;
    c.ctx_lat = 1;
    c.c_lat = 4;
    c.h_lat = 2;
    c.w_lat = 2;
    c.step_embed = 8;
    c.future_frames = 2;
    c.past_frames = 5;
    return c;
}

void randomize_zero_params(DenoiserModel& model, uint64_t seed) {
    uint64_t s = 0;
    model.params().for_each([&](const std::string& name, const Tensor& t) {
        if (t.data().abs().maxCoeff() == 0.0) {
            model.params().get(name).assign(Tensor::randn(t.shape(), mix_seed(seed, s++), 0.2).data());
        }
    });
}

ControlTensor random_control(long m, uint64_t seed) {
    ControlTensor ct;
    const Tensor r = Tensor::randn({m * kNumJoints * 6}, seed, 0.3);
    ct.values = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        r.data().data(), m, kNumJoints * 6);
    return ct;
}

void criterion_2() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst_ops = 0.0;
    auto track = [&](double v) { worst_ops = std::max(worst_ops, v); };
    using V = std::vector<Tensor>;
    track(fd_check([](const V& x) { return add(x[0], x[1]); }, {{3, 4}, {3, 4}}, 1));
    track(fd_check([](const V& x) { return sub(x[0], x[1]); }, {{3, 4}, {3, 4}}, 2));
    track(fd_check([](const V& x) { return mul(x[0], x[1]); }, {{3, 4}, {3, 4}}, 3));
    track(fd_check([](const V& x) { return scale(x[0], -1.7); }, {{5}}, 4));
    track(fd_check([](const V& x) { return add_scalar(x[0], 0.3); }, {{5}}, 5));
    track(fd_check([](const V& x) { return silu(x[0]); }, {{7}}, 6));
    track(fd_check([](const V& x) { return gelu(x[0]); }, {{7}}, 7));
    track(fd_check([](const V& x) { return sum(x[0]); }, {{6}}, 8));
    track(fd_check([](const V& x) { return mean(x[0]); }, {{6}}, 9));
    track(fd_check([](const V& x) { return matmul(x[0], x[1]); }, {{3, 4}, {4, 2}}, 10));
    track(fd_check([](const V& x) { return matmul(x[0], x[1]); }, {{2, 3, 4}, {4, 2}}, 11));
    track(fd_check([](const V& x) { return matmul_nt(x[0], x[1]); }, {{3, 4}, {2, 4}}, 12));
    track(fd_check([](const V& x) { return linear(x[0], x[1], x[2]); }, {{3, 4}, {4, 2}, {2}}, 13));
    track(fd_check([](const V& x) { return layer_norm(x[0]); }, {{3, 6}}, 14));
    track(fd_check([](const V& x) { return softmax_lastdim(x[0]); }, {{3, 5}}, 15));
    track(fd_check([](const V& x) { return attention(x[0], x[1], x[2], 2); }, {{4, 6}, {4, 6}, {4, 6}}, 16));
    track(fd_check([](const V& x) { return take_rows(x[0], {2, 0, 2}); }, {{3, 4}}, 17));
    track(fd_check([](const V& x) { return slice_rows(x[0], 1, 3); }, {{4, 3}}, 18));
    track(fd_check([](const V& x) { return concat_rows({x[0], x[1]}); }, {{2, 3}, {1, 3}}, 19));
    track(fd_check([](const V& x) { return slice_cols(x[0], 1, 3); }, {{3, 4}}, 20));
    track(fd_check([](const V& x) { return concat_cols({x[0], x[1]}); }, {{3, 2}, {3, 1}}, 21));
    track(fd_check([](const V& x) { return add_rowvec(x[0], x[1]); }, {{3, 4}, {4}}, 22));
    track(fd_check([](const V& x) { return mul_rowvec(x[0], x[1]); }, {{3, 4}, {4}}, 23));
    track(fd_check([](const V& x) { return layer_norm(gelu(linear(x[0], x[1], x[2]))); },
                   {{3, 4}, {4, 4}, {4}}, 24));
    {
        auto index = std::make_shared<const std::vector<long>>(std::vector<long>{5, 0, 0, 3});
        track(fd_check([index](const V& x) { return gather(x[0], {2, 2}, index); }, {{6}}, 25));
    }

    // full denoiser, depth 2 / d 32: spot checks on every parameter
    const DiTConfig cfg = grad_check_config();
    DenoiserModel model(cfg, 30);
    randomize_zero_params(model, 31);
    NoiseSchedule schedule;
    TrainClip clip;
    clip.latents = LatentVideo::zeros(cfg.t_lat, cfg.c_lat, cfg.h_lat, cfg.w_lat, cfg.ctx_lat);
    clip.latents.data = Tensor::randn({clip.latents.size()}, 32).data();
    clip.control = random_control(cfg.future_frames, 33);
    auto loss_value = [&] { return training_loss_clip(clip, model, schedule, 77).scalar(); };
    std::map<std::string, Eigen::ArrayXd> analytic;
    {
        GradientTape tape;
        Tensor loss = training_loss_clip(clip, model, schedule, 77);
        tape.backward(loss);
        model.params().for_each(
            [&](const std::string& name, const Tensor& t) { analytic.emplace(name, tape.grad(t)); });
    }
    double worst_model = 0.0;
    long checked = 0;
    const double h = 1e-5;
    model.params().for_each([&](const std::string& name, const Tensor& t) {
        const Eigen::ArrayXd base = t.data();
        for (long k : {0L, t.size() / 2, t.size() - 1}) {
            Eigen::ArrayXd m = base;
            m[k] = base[k] + h;
            model.params().get(name).assign(m);
            const double up = loss_value();
            m[k] = base[k] - h;
            model.params().get(name).assign(m);
            const double down = loss_value();
            model.params().get(name).assign(base);
            const double num = (up - down) / (2.0 * h);
            worst_model = std::max(worst_model, std::abs(analytic.at(name)[k] - num) /
                                                    std::max(std::abs(num), 1e-3));
            ++checked;
        }
    });

    const double el = seconds_since(t0);
    const bool pass = worst_ops < 1e-4 && worst_model < 1e-4 && el < 300.0;
    report(2, pass,
           fmt("gradient suite: ops rel err %.2e, depth-2/d-32 denoiser rel err %.2e over %ld "
               "spot checks (<1e-4), %.0f s (<5 min)",
               worst_ops, worst_model, checked, el));
}

void criterion_3() {
    DiTConfig cfg = grad_check_config();
    bool ok = true;
    std::string why;

    {  // zero gates -> identity, bit-exact (freshly initialized model)
        DenoiserModel model(cfg, 40);
        auto [e_t, m_t] = step_conditioning(0.3, model);
        const auto& p = model.params();
        BlockTriples mods{
            modulation_params(e_t, m_t, p.get("blk0.self.w_m2"), p.get("blk0.self.w_m1")),
            modulation_params(e_t, m_t, p.get("blk0.cross.w_m2"), p.get("blk0.cross.w_m1")),
            modulation_params(e_t, m_t, p.get("blk0.mlp.w_m2"), p.get("blk0.mlp.w_m1"))};
        const Tensor u = Tensor::randn({cfg.num_tokens(), cfg.d}, 41);
        const Tensor ctx = pose_tokens(random_control(cfg.future_frames, 42), model);
        const Tensor out = dit_block_forward(u, mods, ctx, model, 0);
        if ((out.data() - u.data()).abs().maxCoeff() != 0.0) {
            ok = false;
            why += " zero-gate identity violated;";
        }
    }
    {  // CFG weight 1 == conditional branch, bit-exact
        DenoiserModel model(cfg, 43);
        randomize_zero_params(model, 44);
        LatentVideo past = LatentVideo::zeros(cfg.ctx_lat, cfg.c_lat, cfg.h_lat, cfg.w_lat, cfg.ctx_lat);
        past.data = Tensor::randn({past.size()}, 45).data();
        LatentVideo z = LatentVideo::zeros(cfg.t_lat, cfg.c_lat, cfg.h_lat, cfg.w_lat, cfg.ctx_lat);
        z.data = Tensor::randn({z.size()}, 46).data();
        const ControlTensor control = random_control(cfg.future_frames, 47);
        const LatentVideo cond = precond_denoise(z, 1.0, past, &control, model, 0.5, false);
        const LatentVideo w1 = cfg_denoise(z, 1.0, past, &control, model, 1.0, 0.5);
        if ((w1.data - cond.data).abs().maxCoeff() != 0.0) {
            ok = false;
            why += " CFG weight-1 identity violated;";
        }
    }
    {  // additive reduction: forced-zero pose conditioning == control-free forward
        DiTConfig ac = cfg;
        ac.cross_attn_pose = false;
        DenoiserModel model(ac, 48);
        randomize_zero_params(model, 49);
        model.params().get("ge.w2").assign(Eigen::ArrayXd::Zero(ac.d * ac.d));
        model.params().get("ge.b2").assign(Eigen::ArrayXd::Zero(ac.d));
        model.params().get("gm.w2").assign(Eigen::ArrayXd::Zero(ac.d * 3 * ac.d));
        model.params().get("gm.b2").assign(Eigen::ArrayXd::Zero(3 * ac.d));
        const Tensor grid = Tensor::randn({ac.t_lat * ac.c_lat * ac.h_lat * ac.w_lat}, 50);
        const ControlTensor control = random_control(ac.future_frames, 51);
        const Tensor with_pose = denoiser_forward(model, grid, 0.7, &control);
        const Tensor without = denoiser_forward(model, grid, 0.7, nullptr);
        if ((with_pose.data() - without.data()).abs().maxCoeff() != 0.0) {
            ok = false;
            why += " additive-reduction identity violated;";
        }
    }
    long rank = -1;
    {  // low-rank property of the modulation bottleneck
        DenoiserModel model(cfg, 52);
        randomize_zero_params(model, 53);
        const auto& p = model.params();
        const Tensor m0 = Tensor::zeros({1, 3 * cfg.d});
        Eigen::MatrixXd probes(2 * cfg.r, 3 * cfg.d);
        for (long i = 0; i < 2 * cfg.r; ++i) {
            const Tensor e = Tensor::randn({1, cfg.d}, 300 + static_cast<uint64_t>(i));
            ModulationTriple tr =
                modulation_params(e, m0, p.get("blk1.self.w_m2"), p.get("blk1.self.w_m1"));
            probes.row(i) << tr.beta.data().matrix().transpose(), tr.gamma.data().matrix().transpose(),
                tr.gate.data().matrix().transpose();
        }
        const Eigen::JacobiSVD<Eigen::MatrixXd> svd(probes);
        const Eigen::VectorXd s = svd.singularValues();
        rank = 0;
        for (long i = 0; i < s.size(); ++i) rank += s[i] > 1e-9 * s[0];
        if (rank > cfg.r) {
            ok = false;
            why += fmt(" modulation rank %ld > r=%ld;", rank, cfg.r);
        }
    }
    report(3, ok,
           fmt("conditioning identities: zero-gate identity, CFG w=1, additive reduction all "
               "bit-exact; modulation rank %ld <= r=%ld%s",
               rank, cfg.r, why.c_str()));
}

void criterion_4() {
    const auto t0 = std::chrono::steady_clock::now();
    const DiTConfig cfg = grad_check_config();
    bool ok = true;
    std::string why;

    LatentVideo z0 = LatentVideo::zeros(cfg.t_lat, cfg.c_lat, cfg.h_lat, cfg.w_lat, cfg.ctx_lat);
    z0.data = Tensor::randn({z0.size()}, 60, 0.5).data();
    if ((perturb(z0, 0.0, 61).data - z0.data).abs().maxCoeff() != 0.0) {
        ok = false;
        why += " sigma=0 perturbation not identity;";
    }
    const auto oracle = [&](const LatentVideo&, double) { return z0; };
    for (uint64_t s : {1ull, 2ull, 3ull}) {
        if (training_loss_with(oracle, z0, NoiseSchedule{}, s) != 0.0) {
            ok = false;
            why += " oracle loss nonzero;";
            break;
        }
    }
    {
        LatentVideo past = LatentVideo::zeros(cfg.ctx_lat, cfg.c_lat, cfg.h_lat, cfg.w_lat, cfg.ctx_lat);
        past.data = z0.data.head(past.size());
        const LatentVideo out = sample_with(oracle, past, cfg, NoiseSchedule{}, 62);
        const double conv = (out.data - z0.data).abs().maxCoeff();
        if (conv >= 1e-6) {
            ok = false;
            why += fmt(" oracle sampling converged to %.2e (>=1e-6);", conv);
        }
    }
    {  // sampler bit-determinism
        DenoiserModel model(cfg, 63);
        randomize_zero_params(model, 64);
        LatentVideo past = LatentVideo::zeros(cfg.ctx_lat, cfg.c_lat, cfg.h_lat, cfg.w_lat, cfg.ctx_lat);
        past.data = Tensor::randn({past.size()}, 65).data();
        const ControlTensor control = random_control(cfg.future_frames, 66);
        NoiseSchedule s;
        s.steps = 6;
        const LatentVideo a = sample(past, &control, model, s, GuidanceConfig{}, 67);
        const LatentVideo b = sample(past, &control, model, s, GuidanceConfig{}, 67);
        if ((a.data - b.data).abs().maxCoeff() != 0.0) {
            ok = false;
            why += " sampler not bit-deterministic;";
        }
    }
    {  // thread-count invariance of the training loop
        ensure_dataset();
        auto run = [&](long threads, const char* dir) {
            RunConfig c = base_run_config(dataset_dir());
            c.out_dir = std::string(kWorkDir) + "/" + dir;
            fs::remove_all(c.out_dir);
            c.iterations = 3;
            c.threads = threads;
            return train(c).final_loss;
        };
        if (run(1, "threads1") != run(2, "threads2")) {
            ok = false;
            why += " training loss depends on thread count;";
        }
    }
    const double el = seconds_since(t0);
    report(4, ok && el < 60.0,
           fmt("diffusion suite: sigma=0 identity, oracle loss exactly 0, oracle sampling <1e-6, "
               "sampler and threaded training bit-deterministic, %.0f s (<60 s)%s",
               el, why.c_str()));
}

void criterion_5() {
    ensure_dataset();
    const DatasetManifest m = load_manifest(dataset_dir());
    const auto test_clips = m.in_split("test");
    bool ok = !test_clips.empty();
    std::string why = ok ? "" : " no test clips;";
    long frames_checked = 0;
    for (const ClipInfo& info : test_clips) {
        const ClipRecord rec = load_clip(dataset_dir(), info);
        const Scene scene = dataset_scene(m, info.trajectory);
        for (size_t i = 0; i < rec.frames.size(); ++i) {
            auto [im, mask] = render_frame(scene, rec.poses.frames[i], m.config.width, m.config.height);
            if ((im.data - rec.frames[i].data).abs().maxCoeff() != 0.0 || mask.data != rec.masks[i].data) {
                ok = false;
                why += fmt(" %s frame %zu not bit-exact;", info.id.c_str(), i);
                break;
            }
            ++frames_checked;
        }
        const LatentVideo lat = tokenize(rec.frames, context_latents_for(m.config.past_frames));
        const std::vector<Image> back = detokenize(lat);
        for (size_t i = 0; i < rec.frames.size(); ++i) {
            if ((back[i].data - rec.frames[i].data).abs().maxCoeff() != 0.0) {
                ok = false;
                why += fmt(" %s tokenizer not bijective;", info.id.c_str());
                break;
            }
        }
    }
    if (latent_frames_for(45) != 12) {
        ok = false;
        why += " latent_frames_for(45) != 12;";
    }
    report(5, ok,
           fmt("toy-world self-certification: %ld stored frames re-rendered bit-exactly, tokenizer "
               "bijective on all %zu test clips, 45 frames -> 12 latent frames%s",
               frames_checked, test_clips.size(), why.c_str()));
}

void criterion_6() {
    ensure_calib_dataset();
    const DatasetManifest cm = load_manifest(calib_dataset_dir());
    double te_sum = 0, re_sum = 0;
    long clips = 0;
    for (const ClipInfo& info : cm.clips) {
        const ClipRecord rec = load_clip(calib_dataset_dir(), info);
        const Scene scene = dataset_scene(cm, info.trajectory);
        std::vector<Image> frames(rec.frames.begin() + 1, rec.frames.end());
        std::vector<RigidTransform> gt;
        for (size_t i = 1; i < rec.poses.frames.size(); ++i) gt.push_back(rec.poses.frames[i].head());
        const auto est = estimate_head_trajectory(frames, scene, rec.poses.frames[0].head());
        std::vector<RigidTransform> poses;
        for (const auto& tp : est) poses.push_back(tp.pose);
        auto [te, re] = trajectory_errors(poses, gt);
        te_sum += te;
        re_sum += re;
        ++clips;
    }
    ensure_dataset();
    const DatasetManifest m = load_manifest(dataset_dir());
    bool masks_exact = true;
    for (const ClipInfo& info : m.in_split("test")) {
        const ClipRecord rec = load_clip(dataset_dir(), info);
        std::vector<BinaryMask> keyed, stored;
        for (size_t i = 0; i < rec.frames.size(); ++i) {
            keyed.push_back(arm_mask_from_frame(rec.frames[i]));
            stored.push_back(rec.masks[i]);
            masks_exact &= keyed.back().data == stored.back().data;
        }
        auto [miou, acc] = body_control_metrics(keyed, stored);
        masks_exact &= miou == 100.0 && acc == 100.0;
    }
    const double te = te_sum / static_cast<double>(clips), re = re_sum / static_cast<double>(clips);
    const bool pass = te < 0.01 && re < 0.5 && masks_exact;
    report(6, pass,
           fmt("oracle calibration: pose recovery %.4f m (<0.01) / %.3f deg (<0.5) over %ld gt "
               "48x48 clips; color-keyed masks mIoU %s 100",
               te, re, clips, masks_exact ? "==" : "!="));
}

// ---- criteria 7-9: the ablation grid ----

struct CellMetrics {
    double ssim = 0, te = 0, re = 0, miou = 0, acc = 0;
};

CellMetrics metrics_from_report(const std::string& path) {
    std::ifstream f(path);
    nlohmann::json j;
    f >> j;
    const auto& a = j.at("aggregate");
    return {a.at("ssim").get<double>(), a.at("trans_error").get<double>(),
            a.at("rot_error").get<double>(), a.at("miou").get<double>(),
            a.at("presence_accuracy").get<double>()};
}

CellMetrics run_cell(const std::string& name, PoseVariant variant, ControlMechanism mechanism,
                     uint64_t seed) {
    ensure_dataset();
    const std::string out_dir = std::string(kWorkDir) + "/runs/" + name;
    const std::string report_path = out_dir + "/report.json";
    if (!fs::exists(report_path)) {
        RunConfig cfg = base_run_config(dataset_dir());
        cfg.out_dir = out_dir;
        cfg.seed = seed;
        cfg.variant = variant;
        cfg.mechanism = mechanism;
        const TrainResult tr = train(cfg);
        EvalOptions opts;
        opts.schedule = cfg.schedule;
        opts.guidance = cfg.guidance;
        opts.split = "test";
        opts.control = control_builder(variant);
        const EvalReport rep = eval_checkpoint(tr.checkpoint_dir, cfg.dataset, opts, mix_seed(900, seed));
        rep.save(report_path);
    }
    return metrics_from_report(report_path);
}

CellMetrics base_cell(uint64_t seed) {  // untrained model
    ensure_dataset();
    const std::string out_dir = std::string(kWorkDir) + "/runs/base_s" + std::to_string(seed);
    const std::string report_path = out_dir + "/report.json";
    if (!fs::exists(report_path)) {
        fs::create_directories(out_dir);
        const DatasetManifest m = load_manifest(dataset_dir());
        RunConfig cfg = base_run_config(dataset_dir());
        cfg.seed = seed;
        DenoiserModel model(model_config_for(cfg, m.config), mix_seed(seed, 100));
        EvalOptions opts;
        opts.split = "test";
        opts.control = control_builder(PoseVariant::full_body);
        const EvalReport rep = evaluate(model, dataset_dir(), opts, mix_seed(900, seed), "untrained");
        rep.save(report_path);
    }
    return metrics_from_report(report_path);
}

struct Margin {
    double mean = 0, sd = 0;
    bool strict() const { return mean > 2.0 * sd; }
    bool no_worse() const { return mean >= -2.0 * sd; }
};

// per-seed differences pick[a_s] - pick[b_s]
Margin margin_of(const std::vector<CellMetrics>& a, const std::vector<CellMetrics>& b,
                 double CellMetrics::*field) {
    Margin m;
    std::vector<double> d;
    for (size_t s = 0; s < a.size(); ++s) d.push_back(a[s].*field - b[s].*field);
    for (double v : d) m.mean += v;
    m.mean /= static_cast<double>(d.size());
    double var = 0;
    for (double v : d) var += (v - m.mean) * (v - m.mean);
    m.sd = std::sqrt(var / static_cast<double>(d.size() - 1));
    return m;
}

const std::vector<uint64_t> kSeeds = {1, 2, 3};

std::vector<CellMetrics> variant_cells(PoseVariant v, ControlMechanism mech) {
    std::vector<CellMetrics> out;
    for (uint64_t s : kSeeds) {
        out.push_back(run_cell(to_string(v) + "_" + to_string(mech) + "_s" + std::to_string(s), v,
                               mech, s));
    }
    return out;
}

void write_table(const std::map<std::string, std::vector<CellMetrics>>& rows) {
    std::ofstream csv(std::string(kWorkDir) + "/ablation_table.csv", std::ios::binary);
    csv << "name,seed,ssim,trans_error,rot_error,miou,presence_accuracy\n";
    char line[256];
    for (const auto& [name, cells] : rows) {
        for (size_t i = 0; i < cells.size(); ++i) {
            std::snprintf(line, sizeof(line), "%s,%llu,%.4f,%.4f,%.4f,%.4f,%.4f\n", name.c_str(),
                          static_cast<unsigned long long>(kSeeds[i]), cells[i].ssim, cells[i].te,
                          cells[i].re, cells[i].miou, cells[i].acc);
            csv << line;
        }
    }
}

void criteria_7_8_9() {
    const auto full = variant_cells(PoseVariant::full_body, ControlMechanism::both);
    const auto head = variant_cells(PoseVariant::head_only, ControlMechanism::both);
    const auto none = variant_cells(PoseVariant::none, ControlMechanism::both);
    const auto cumulative = variant_cells(PoseVariant::cumulative_head, ControlMechanism::both);
    const auto adaln = variant_cells(PoseVariant::full_body, ControlMechanism::adaln);
    const auto ca = variant_cells(PoseVariant::full_body, ControlMechanism::cross_attn);
    std::vector<CellMetrics> base;
    for (uint64_t s : kSeeds) base.push_back(base_cell(s));
    write_table({{"base", base},
                 {"full_body", full},
                 {"head_only", head},
                 {"none", none},
                 {"cumulative_head", cumulative},
                 {"adaln_only", adaln},
                 {"cross_attn_only", ca}});

    {  // criterion 7: Table 1 orderings
        const Margin miou_fh = margin_of(full, head, &CellMetrics::miou);
        const Margin miou_hn = margin_of(head, none, &CellMetrics::miou);
        const Margin te_hf = margin_of(head, full, &CellMetrics::te);   // full <= head
        const Margin te_nh = margin_of(none, head, &CellMetrics::te);   // head < none
        const Margin ssim_fn = margin_of(full, none, &CellMetrics::ssim);
        const bool pass = miou_fh.strict() && miou_hn.strict() && te_hf.no_worse() &&
                          te_nh.strict() && ssim_fn.strict();
        report(7, pass,
               fmt("Table 1 orderings: mIoU full-head %.2f+-%.2f, head-none %.2f+-%.2f; "
                   "TransError head-full %.3f+-%.3f, none-head %.3f+-%.3f; SSIM full-none "
                   "%.2f+-%.2f (margins vs 2x seed sd)",
                   miou_fh.mean, miou_fh.sd, miou_hn.mean, miou_hn.sd, te_hf.mean, te_hf.sd,
                   te_nh.mean, te_nh.sd, ssim_fn.mean, ssim_fn.sd));
    }
    {  // criterion 8: differential vs cumulative head encoding
        const Margin te = margin_of(cumulative, full, &CellMetrics::te);
        report(8, te.strict(),
               fmt("Table 4 ordering: TransError cumulative-differential %.3f+-%.3f m (mean > 2x sd)",
                   te.mean, te.sd));
    }
    {  // criterion 9: control-mechanism grid
        const Margin ssim_ba = margin_of(full, adaln, &CellMetrics::ssim);
        const Margin ssim_bc = margin_of(full, ca, &CellMetrics::ssim);
        const Margin te_ab = margin_of(adaln, full, &CellMetrics::te);
        const Margin te_cb = margin_of(ca, full, &CellMetrics::te);
        const Margin miou_ca = margin_of(ca, adaln, &CellMetrics::miou);
        const Margin miou_ba = margin_of(full, adaln, &CellMetrics::miou);
        const bool pass = ssim_ba.no_worse() && ssim_bc.no_worse() && te_ab.no_worse() &&
                          te_cb.no_worse() && miou_ca.strict() && miou_ba.strict();
        report(9, pass,
               fmt("Table 3 orderings: both no worse than single pathways (SSIM %.2f/%.2f, "
                   "TransError %.3f/%.3f), CA-containing mIoU over AdaLN-only %.2f+-%.2f / "
                   "%.2f+-%.2f",
                   ssim_ba.mean, ssim_bc.mean, te_ab.mean, te_cb.mean, miou_ca.mean, miou_ca.sd,
                   miou_ba.mean, miou_ba.sd));
    }
}

// ---- criterion 10: steerability demo ----

void criterion_10() {
    ensure_dataset();
    const DatasetManifest m = load_manifest(dataset_dir());
    const std::string ckpt = std::string(kWorkDir) + "/runs/full_body_both_s1/checkpoint";
    DenoiserModel model = DenoiserModel::load(ckpt);
    const DiTConfig& mc = model.config();
    const auto test_clips = m.in_split("test");
    const ClipInfo& info = test_clips.front();
    const ClipRecord clip = load_clip(dataset_dir(), info);
    const Scene scene = dataset_scene(m, info.trajectory);
    const long n = m.config.past_frames;

    const LatentVideo fullv = tokenize(clip.frames, mc.ctx_lat);
    LatentVideo past = LatentVideo::zeros(mc.ctx_lat, mc.c_lat, mc.h_lat, mc.w_lat, mc.ctx_lat);
    past.data = fullv.data.head(past.size());

    double x, y, z, yaw0;
    camera_pose_params(clip.poses.frames[static_cast<size_t>(n - 1)].head(), x, y, z, yaw0);
    auto spin_control = [&](double rate) {
        PoseSequence seq;
        for (long i = 0; i <= mc.future_frames; ++i) {
            AgentState st;
            const double yaw = yaw0 + rate * static_cast<double>(i);
            st.head = camera_pose(x, y, z, yaw);
            st.pelvis = RigidTransform(
                Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix(),
                Eigen::Vector3d(x, y, z - 0.62));
            st.left = {0.05, 0.10};
            st.right = {0.05, 0.10};
            seq.frames.push_back(skeleton_to_body_pose(st));
        }
        return assemble_control(seq);
    };
    const ControlTensor turn_left = spin_control(+0.3), turn_right = spin_control(-0.3);

    auto recovered_yaw_change = [&](const ControlTensor& control, uint64_t seed) {
        const LatentVideo gen =
            sample(past, &control, model, NoiseSchedule{}, GuidanceConfig{}, seed);
        const std::vector<Image> decoded = detokenize(gen);
        std::vector<Image> frames(decoded.begin() + n, decoded.end());
        const auto est = estimate_head_trajectory(frames, scene,
                                                  clip.poses.frames[static_cast<size_t>(n - 1)].head());
        double prev = yaw0, total = 0.0;
        for (const auto& tp : est) {
            double ex, ey, ez, eyaw;
            camera_pose_params(tp.pose, ex, ey, ez, eyaw);
            total += std::remainder(eyaw - prev, 2.0 * M_PI);
            prev = eyaw;
        }
        return total;
    };

    long matched = 0;
    for (uint64_t s = 0; s < 10; ++s) {
        const double left = recovered_yaw_change(turn_left, mix_seed(7000, s));
        const double right = recovered_yaw_change(turn_right, mix_seed(8000, s));
        matched += (left > 0.0 && right < 0.0);
    }
    report(10, matched >= 8,
           fmt("steerability: +-0.3 rad/frame head-yaw controls matched recovered yaw sign for "
               "%ld/10 seeds (>=8)",
               matched));
}

}  // namespace

int main() {
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criteria_7_8_9();
    criterion_10();
    std::printf("%s: %d of 10 criteria failed\n", g_failures == 0 ? "OK" : "FAILED", g_failures);
    return g_failures == 0 ? 0 : 1;
}
