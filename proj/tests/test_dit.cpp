#include <doctest.h>

#include "egodiff/dit.hpp"
#include "egodiff/edm.hpp"

#include <Eigen/SVD>

#include <filesystem>
#include <map>

using namespace egodiff;

namespace {

DiTConfig tiny_config() {
    DiTConfig c;
    c.d = 16;
    c.r = 4;
    c.heads = 2;
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

ControlTensor random_control(long m, uint64_t seed) {
    ControlTensor ct;
    const Tensor r = Tensor::randn({m * kNumJoints * 6}, seed, 0.3);
    ct.values = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        r.data().data(), m, kNumJoints * 6);
    return ct;
}

/// Give the zero-initialized parameters random values so every pathway
/// carries signal (used by gradient and rank tests).
void randomize_zero_params(DenoiserModel& model, uint64_t seed) {
    uint64_t s = 0;
    model.params().for_each([&](const std::string& name, const Tensor& t) {
        if (t.data().abs().maxCoeff() == 0.0) {
            model.params().get(name).assign(Tensor::randn(t.shape(), mix_seed(seed, s++), 0.2).data());
        }
    });
}

}  // namespace

TEST_CASE("config validation") {
    DiTConfig c = tiny_config();
    c.r = c.d;
    CHECK_THROWS(c.validate());
    c = tiny_config();
    c.heads = 3;
    CHECK_THROWS(c.validate());
    c = tiny_config();
    c.patch = 3;  // does not divide h_lat
    CHECK_THROWS(c.validate());
    c = tiny_config();
    c.ctx_lat = c.t_lat;
    CHECK_THROWS(c.validate());
    CHECK_NOTHROW(tiny_config().validate());
    const DiTConfig back = DiTConfig::from_json(tiny_config().to_json());
    CHECK(back.d == 16);
    CHECK(back.future_frames == 2);
}

TEST_CASE("zero-initialized output projection makes the untrained network predict zero") {
    const DiTConfig cfg = tiny_config();
    DenoiserModel model(cfg, 1);
    const Tensor grid = Tensor::randn({cfg.t_lat * cfg.c_lat * cfg.h_lat * cfg.w_lat}, 2);
    const ControlTensor control = random_control(cfg.future_frames, 3);
    const Tensor out = denoiser_forward(model, grid, 1.0, &control);
    CHECK(out.data().abs().maxCoeff() == 0.0);
}

TEST_CASE("zero gates reduce a block to the identity bit-exactly") {
    const DiTConfig cfg = tiny_config();
    DenoiserModel model(cfg, 4);
    // at init w_m1 = 0 and m = f(e_t) = 0, so all triples are zero
    auto [e_t, m_t] = step_conditioning(0.3, model);
    const auto& p = model.params();
    BlockTriples mods{modulation_params(e_t, m_t, p.get("blk0.self.w_m2"), p.get("blk0.self.w_m1")),
                      modulation_params(e_t, m_t, p.get("blk0.cross.w_m2"), p.get("blk0.cross.w_m1")),
                      modulation_params(e_t, m_t, p.get("blk0.mlp.w_m2"), p.get("blk0.mlp.w_m1"))};
    CHECK(mods.self_attn.gate.data().abs().maxCoeff() == 0.0);
    const Tensor u = Tensor::randn({cfg.num_tokens(), cfg.d}, 5);
    const Tensor ctx = pose_tokens(random_control(cfg.future_frames, 6), model);
    const Tensor out = dit_block_forward(u, mods, ctx, model, 0);
    CHECK((out.data() - u.data()).abs().maxCoeff() == 0.0);
}

TEST_CASE("additive conditioning with zero pose terms equals the unconditional path bit-exactly") {
    auto [e_t, m_t] = [] {
        DenoiserModel model(tiny_config(), 7);
        return step_conditioning(0.1, model);
    }();
    const Tensor ze = Tensor::zeros({1, 16}), zm = Tensor::zeros({1, 48});
    auto [e, m] = combine_conditioning(e_t, ze, m_t, zm);
    CHECK((e.data() - e_t.data()).abs().maxCoeff() == 0.0);
    CHECK((m.data() - m_t.data()).abs().maxCoeff() == 0.0);

    // whole-forward version: AdaLN-only model whose pose MLP is forced to
    // emit zero must match the control-free forward exactly
    DiTConfig cfg = tiny_config();
    cfg.cross_attn_pose = false;
    DenoiserModel model(cfg, 8);
    randomize_zero_params(model, 9);
    model.params().get("ge.w2").assign(Eigen::ArrayXd::Zero(cfg.d * cfg.d));
    model.params().get("ge.b2").assign(Eigen::ArrayXd::Zero(cfg.d));
    model.params().get("gm.w2").assign(Eigen::ArrayXd::Zero(cfg.d * 3 * cfg.d));
    model.params().get("gm.b2").assign(Eigen::ArrayXd::Zero(3 * cfg.d));
    const Tensor grid = Tensor::randn({cfg.t_lat * cfg.c_lat * cfg.h_lat * cfg.w_lat}, 10);
    const ControlTensor control = random_control(cfg.future_frames, 11);
    const Tensor with_pose = denoiser_forward(model, grid, 0.7, &control);
    const Tensor without = denoiser_forward(model, grid, 0.7, nullptr);
    CHECK((with_pose.data() - without.data()).abs().maxCoeff() == 0.0);
}

TEST_CASE("modulation bottleneck has numerical rank at most r") {
    const DiTConfig cfg = tiny_config();
    DenoiserModel model(cfg, 12);
    randomize_zero_params(model, 13);
    const auto& p = model.params();
    const Tensor m0 = Tensor::zeros({1, 3 * cfg.d});
    Eigen::MatrixXd probes(2 * cfg.r, 3 * cfg.d);
    for (long i = 0; i < 2 * cfg.r; ++i) {
        const Tensor e = Tensor::randn({1, cfg.d}, 100 + static_cast<uint64_t>(i));
        ModulationTriple tr = modulation_params(e, m0, p.get("blk1.self.w_m2"), p.get("blk1.self.w_m1"));
        probes.row(i) << tr.beta.data().matrix().transpose(), tr.gamma.data().matrix().transpose(),
            tr.gate.data().matrix().transpose();
    }
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(probes);
    const Eigen::VectorXd s = svd.singularValues();
    long rank = 0;
    for (long i = 0; i < s.size(); ++i) {
        if (s[i] > 1e-9 * s[0]) ++rank;
    }
    CHECK(rank <= cfg.r);
}

TEST_CASE("patchify index maps are a bijection") {
    const DiTConfig cfg = tiny_config();
    DenoiserModel model(cfg, 14);
    const long n = cfg.t_lat * cfg.c_lat * cfg.h_lat * cfg.w_lat;
    const Tensor grid = Tensor::randn({n}, 15);
    const Tensor tok = gather(grid, {cfg.num_tokens(), cfg.token_dim()}, model.patch_index());
    const Tensor back = gather(tok.reshape({n}), {n}, model.unpatch_index());
    CHECK((back.data() - grid.data()).abs().maxCoeff() == 0.0);
}

TEST_CASE("pose tokens are per-future-frame embeddings") {
    const DiTConfig cfg = tiny_config();
    DenoiserModel model(cfg, 16);
    const ControlTensor control = random_control(cfg.future_frames, 17);
    const Tensor tok = pose_tokens(control, model);
    CHECK(tok.shape() == Shape{cfg.future_frames, cfg.d});
    const Tensor again = pose_tokens(control, model);
    CHECK((tok.data() - again.data()).abs().maxCoeff() == 0.0);
    ControlTensor wrong = random_control(cfg.future_frames + 1, 18);
    CHECK_THROWS(pose_global_conditioning(wrong, model));
}

TEST_CASE("denoise passes context through untouched and null context differs") {
    const DiTConfig cfg = tiny_config();
    DenoiserModel model(cfg, 19);
    randomize_zero_params(model, 20);
    LatentVideo past = LatentVideo::zeros(cfg.ctx_lat, cfg.c_lat, cfg.h_lat, cfg.w_lat, cfg.ctx_lat);
    past.data = Tensor::randn({past.size()}, 21).data();
    LatentVideo z = LatentVideo::zeros(cfg.t_lat, cfg.c_lat, cfg.h_lat, cfg.w_lat, cfg.ctx_lat);
    z.data = Tensor::randn({z.size()}, 22).data();
    const ControlTensor control = random_control(cfg.future_frames, 23);
    const LatentVideo out = denoise(z, 0.5, past, &control, model);
    CHECK((out.data.head(past.size()) - past.data).abs().maxCoeff() == 0.0);
    const LatentVideo nulled = denoise(z, 0.5, past, &control, model, true);
    CHECK((nulled.generated() - out.generated()).abs().maxCoeff() > 0.0);
}

TEST_CASE("model save/load round trip is forward bit-identical") {
    const auto dir = (std::filesystem::temp_directory_path() / "egodiff_dit_ckpt").string();
    std::filesystem::remove_all(dir);
    const DiTConfig cfg = tiny_config();
    DenoiserModel model(cfg, 24);
    randomize_zero_params(model, 25);
    model.save(dir);
    const DenoiserModel loaded = DenoiserModel::load(dir);
    const Tensor grid = Tensor::randn({cfg.t_lat * cfg.c_lat * cfg.h_lat * cfg.w_lat}, 26);
    const ControlTensor control = random_control(cfg.future_frames, 27);
    const Tensor a = denoiser_forward(model, grid, 1.3, &control);
    const Tensor b = denoiser_forward(loaded, grid, 1.3, &control);
    CHECK((a.data() - b.data()).abs().maxCoeff() == 0.0);
}

TEST_CASE("full denoiser training loss passes spot finite-difference gradient checks") {
    const DiTConfig cfg = tiny_config();
    DenoiserModel model(cfg, 28);
    randomize_zero_params(model, 29);
    NoiseSchedule schedule;
    TrainClip clip;
    clip.latents = LatentVideo::zeros(cfg.t_lat, cfg.c_lat, cfg.h_lat, cfg.w_lat, cfg.ctx_lat);
    clip.latents.data = Tensor::randn({clip.latents.size()}, 30).data();
    clip.control = random_control(cfg.future_frames, 31);

    auto loss_value = [&] { return training_loss_clip(clip, model, schedule, 77).scalar(); };

    std::map<std::string, Eigen::ArrayXd> analytic;
    {
        GradientTape tape;
        Tensor loss = training_loss_clip(clip, model, schedule, 77);
        tape.backward(loss);
        model.params().for_each([&](const std::string& name, const Tensor& t) {
            analytic.emplace(name, tape.grad(t));
        });
    }
    const double h = 1e-5;
    long checked = 0;
    model.params().for_each([&](const std::string& name, const Tensor& t) {
        const Eigen::ArrayXd base = t.data();
        for (long k : {0L, t.size() / 2, t.size() - 1}) {
            Eigen::ArrayXd mod = base;
            mod[k] = base[k] + h;
            model.params().get(name).assign(mod);
            const double up = loss_value();
            mod[k] = base[k] - h;
            model.params().get(name).assign(mod);
            const double down = loss_value();
            model.params().get(name).assign(base);
            const double num = (up - down) / (2.0 * h);
            const double ana = analytic.at(name)[k];
            const double rel = std::abs(ana - num) / std::max(std::abs(num), 1e-3);
            INFO(name, "[", k, "] analytic ", ana, " numeric ", num);
            CHECK(rel < 1e-4);
            ++checked;
        }
    });
    CHECK(checked > 100);
}
