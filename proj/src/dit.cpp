#include "egodiff/dit.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace egodiff {

void DiTConfig::validate() const {
    if (r >= d) throw std::invalid_argument("DiTConfig: requires r < d");
    if (d % heads != 0) throw std::invalid_argument("DiTConfig: d must be divisible by heads");
    if (h_lat % patch != 0 || w_lat % patch != 0) {
        throw std::invalid_argument("DiTConfig: latent extent must be divisible by patch size");
    }
    if (ctx_lat <= 0 || ctx_lat >= t_lat) throw std::invalid_argument("DiTConfig: bad context split");
    if (step_embed % 2 != 0) throw std::invalid_argument("DiTConfig: step_embed must be even");
    for (long v : {d, r, heads, depth, patch, t_lat, c_lat, h_lat, w_lat, step_embed, future_frames, past_frames}) {
        if (v <= 0) throw std::invalid_argument("DiTConfig: extents must be positive");
    }
}

std::string DiTConfig::to_json() const {
    nlohmann::json j;
    j["d"] = d;
    j["r"] = r;
    j["heads"] = heads;
    j["depth"] = depth;
    j["patch"] = patch;
    j["t_lat"] = t_lat;
    j["ctx_lat"] = ctx_lat;
    j["c_lat"] = c_lat;
    j["h_lat"] = h_lat;
    j["w_lat"] = w_lat;
    j["step_embed"] = step_embed;
    j["future_frames"] = future_frames;
    j["past_frames"] = past_frames;
    j["adaln_pose"] = adaln_pose;
    j["cross_attn_pose"] = cross_attn_pose;
    return j.dump(2);
}

DiTConfig DiTConfig::from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    DiTConfig c;
    c.d = j.at("d").get<long>();
    c.r = j.at("r").get<long>();
    c.heads = j.at("heads").get<long>();
    c.depth = j.at("depth").get<long>();
    c.patch = j.at("patch").get<long>();
    c.t_lat = j.at("t_lat").get<long>();
    c.ctx_lat = j.at("ctx_lat").get<long>();
    c.c_lat = j.at("c_lat").get<long>();
    c.h_lat = j.at("h_lat").get<long>();
    c.w_lat = j.at("w_lat").get<long>();
    c.step_embed = j.at("step_embed").get<long>();
    c.future_frames = j.at("future_frames").get<long>();
    c.past_frames = j.at("past_frames").get<long>();
    c.adaln_pose = j.at("adaln_pose").get<bool>();
    c.cross_attn_pose = j.at("cross_attn_pose").get<bool>();
    c.validate();
    return c;
}

LatentVideo LatentVideo::zeros(long t, long c, long h, long w, long context_frames) {
    LatentVideo v;
    v.t = t;
    v.c = c;
    v.h = h;
    v.w = w;
    v.context_frames = context_frames;
    v.data = Eigen::ArrayXd::Zero(t * c * h * w);
    return v;
}

DenoiserModel::DenoiserModel(DiTConfig cfg, uint64_t init_seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build_parameters(init_seed);
    build_index_maps();
}

namespace {

Tensor init_weight(Shape shape, uint64_t seed) {
    const double fan_in = static_cast<double>(shape.front());
    return Tensor::randn(std::move(shape), seed, 1.0 / std::sqrt(fan_in));
}

}  // namespace

void DenoiserModel::build_parameters(uint64_t seed) {
    const long d = cfg_.d, r = cfg_.r;
    uint64_t s = 0;
    auto next = [&] { return mix_seed(seed, s++); };

    params_.create("patch.w_in", init_weight({cfg_.token_dim(), d}, next()));
    params_.create("patch.b_in", Tensor::zeros({d}));
    // output projection starts at zero so the untrained model predicts zero
    params_.create("patch.w_out", Tensor::zeros({d, cfg_.token_dim()}));
    params_.create("patch.b_out", Tensor::zeros({cfg_.token_dim()}));

    params_.create("pos.time", Tensor::randn({cfg_.t_lat, d}, next(), 0.02));
    params_.create("pos.row", Tensor::randn({cfg_.h_lat / cfg_.patch, d}, next(), 0.02));
    params_.create("pos.col", Tensor::randn({cfg_.w_lat / cfg_.patch, d}, next(), 0.02));

    params_.create("step.proj", init_weight({cfg_.step_embed, d}, next()));
    params_.create("step.bias", Tensor::zeros({d}));
    params_.create("f.w1", init_weight({d, d}, next()));
    params_.create("f.b1", Tensor::zeros({d}));
    params_.create("f.w2", Tensor::zeros({d, 3 * d}));
    params_.create("f.b2", Tensor::zeros({3 * d}));

    const long pf = cfg_.pose_flat_dim();
    params_.create("ge.w1", init_weight({pf, d}, next()));
    params_.create("ge.b1", Tensor::zeros({d}));
    params_.create("ge.w2", init_weight({d, d}, next()));
    params_.create("ge.b2", Tensor::zeros({d}));
    params_.create("gm.w1", init_weight({pf, d}, next()));
    params_.create("gm.b1", Tensor::zeros({d}));
    params_.create("gm.w2", Tensor::zeros({d, 3 * d}));
    params_.create("gm.b2", Tensor::zeros({3 * d}));

    params_.create("posetok.w", init_weight({kNumJoints * 6, d}, next()));
    params_.create("posetok.b", Tensor::zeros({d}));

    params_.create("null_ctx", Tensor::randn({cfg_.c_lat}, next(), 0.02));

    for (long b = 0; b < cfg_.depth; ++b) {
        const std::string pre = "blk" + std::to_string(b) + ".";
        for (const char* k : {"self", "cross", "mlp"}) {
            const std::string kp = pre + k + ".";
            params_.create(kp + "w_m2", init_weight({d, r}, next()));
            params_.create(kp + "w_m1", Tensor::zeros({r, 3 * d}));
        }
        params_.create(pre + "self.wq", init_weight({d, d}, next()));
        params_.create(pre + "self.bq", Tensor::zeros({d}));
        params_.create(pre + "self.wk", init_weight({d, d}, next()));
        params_.create(pre + "self.bk", Tensor::zeros({d}));
        params_.create(pre + "self.wv", init_weight({d, d}, next()));
        params_.create(pre + "self.bv", Tensor::zeros({d}));
        params_.create(pre + "self.wo", init_weight({d, d}, next()));
        params_.create(pre + "self.bo", Tensor::zeros({d}));
        params_.create(pre + "cross.wq", init_weight({d, d}, next()));
        params_.create(pre + "cross.bq", Tensor::zeros({d}));
        params_.create(pre + "cross.wk", init_weight({d, d}, next()));
        params_.create(pre + "cross.bk", Tensor::zeros({d}));
        params_.create(pre + "cross.wv", init_weight({d, d}, next()));
        params_.create(pre + "cross.bv", Tensor::zeros({d}));
        params_.create(pre + "cross.wo", init_weight({d, d}, next()));
        params_.create(pre + "cross.bo", Tensor::zeros({d}));
        params_.create(pre + "mlp.w1", init_weight({d, 4 * d}, next()));
        params_.create(pre + "mlp.b1", Tensor::zeros({4 * d}));
        params_.create(pre + "mlp.w2", init_weight({4 * d, d}, next()));
        params_.create(pre + "mlp.b2", Tensor::zeros({d}));
    }
}

void DenoiserModel::build_index_maps() {
    const long p = cfg_.patch, c = cfg_.c_lat, h = cfg_.h_lat, w = cfg_.w_lat;
    const long hp = h / p, wp = w / p;
    const long tokens = cfg_.num_tokens(), tokdim = cfg_.token_dim();
    auto fwd = std::make_shared<std::vector<long>>(tokens * tokdim);
    auto inv = std::make_shared<std::vector<long>>(cfg_.t_lat * c * h * w);
    token_time_.resize(static_cast<size_t>(tokens));
    token_row_.resize(static_cast<size_t>(tokens));
    token_col_.resize(static_cast<size_t>(tokens));
    for (long t = 0; t < cfg_.t_lat; ++t) {
        for (long py = 0; py < hp; ++py) {
            for (long px = 0; px < wp; ++px) {
                const long s = (t * hp + py) * wp + px;
                token_time_[static_cast<size_t>(s)] = t;
                token_row_[static_cast<size_t>(s)] = py;
                token_col_[static_cast<size_t>(s)] = px;
                for (long ch = 0; ch < c; ++ch) {
                    for (long dy = 0; dy < p; ++dy) {
                        for (long dx = 0; dx < p; ++dx) {
                            const long f = (ch * p + dy) * p + dx;
                            const long grid = ((t * c + ch) * h + py * p + dy) * w + px * p + dx;
                            (*fwd)[static_cast<size_t>(s * tokdim + f)] = grid;
                            (*inv)[static_cast<size_t>(grid)] = s * tokdim + f;
                        }
                    }
                }
            }
        }
    }
    patch_index_ = fwd;
    unpatch_index_ = inv;
}

void DenoiserModel::save(const std::string& dir, bool with_optimizer_state) const {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    params_.save(dir, with_optimizer_state);
    std::ofstream cf(fs::path(dir) / "config.json", std::ios::binary);
    cf << cfg_.to_json() << '\n';
}

DenoiserModel DenoiserModel::load(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream cf(fs::path(dir) / "config.json");
    if (!cf) throw std::runtime_error("model checkpoint: missing config.json in " + dir);
    std::string text((std::istreambuf_iterator<char>(cf)), std::istreambuf_iterator<char>());
    DenoiserModel model(DiTConfig::from_json(text), 0);
    model.params_.load(dir);
    return model;
}

namespace {

Tensor control_flat_row(const ControlTensor& control) {
    const long m = control.horizon();
    Eigen::ArrayXd flat(m * kNumJoints * 6);
    for (long i = 0; i < m; ++i) {
        flat.segment(i * kNumJoints * 6, kNumJoints * 6) =
            Eigen::Map<const Eigen::ArrayXd>(control.values.row(i).data(), kNumJoints * 6);
    }
    return Tensor::from_data({1, m * kNumJoints * 6}, flat);
}

Tensor two_layer_mlp(const Tensor& x, const ParameterStore& p, const std::string& prefix) {
    Tensor h = silu(linear(x, p.get(prefix + ".w1"), p.get(prefix + ".b1")));
    return linear(h, p.get(prefix + ".w2"), p.get(prefix + ".b2"));
}

}  // namespace

std::pair<Tensor, Tensor> pose_global_conditioning(const ControlTensor& control, const DenoiserModel& model) {
    if (control.horizon() != model.config().future_frames) {
        throw std::invalid_argument("pose_global_conditioning: control horizon mismatch");
    }
    Tensor flat = control_flat_row(control);
    return {two_layer_mlp(flat, model.params(), "ge"), two_layer_mlp(flat, model.params(), "gm")};
}

std::pair<Tensor, Tensor> step_conditioning(double c_noise, const DenoiserModel& model) {
    const auto& p = model.params();
    Tensor emb = Tensor::from_data({1, model.config().step_embed},
                                   sinusoidal_embedding(c_noise, model.config().step_embed));
    Tensor e_t = linear(emb, p.get("step.proj"), p.get("step.bias"));
    return {e_t, two_layer_mlp(e_t, p, "f")};
}

std::pair<Tensor, Tensor> combine_conditioning(const Tensor& e_t, const Tensor& e_p,
                                               const Tensor& m_t, const Tensor& m_p) {
    return {add(e_t, e_p), add(m_t, m_p)};
}

ModulationTriple modulation_params(const Tensor& e, const Tensor& m, const Tensor& w_m2,
                                   const Tensor& w_m1) {
    const long d = e.shape().back();
    Tensor mix = add(matmul(matmul(silu(e), w_m2), w_m1), m);  // [1, 3d]
    ModulationTriple triple;
    triple.beta = slice_cols(mix, 0, d).reshape({d});
    triple.gamma = slice_cols(mix, d, 2 * d).reshape({d});
    triple.gate = slice_cols(mix, 2 * d, 3 * d).reshape({d});
    return triple;
}

Tensor adaln(const Tensor& u, const Tensor& beta, const Tensor& gamma) {
    return add_rowvec(mul_rowvec(layer_norm(u), add_scalar(gamma, 1.0)), beta);
}

Tensor pose_tokens(const ControlTensor& control, const DenoiserModel& model) {
    const long m = control.horizon();
    const long d = model.config().d;
    Eigen::ArrayXd flat(m * kNumJoints * 6);
    for (long i = 0; i < m; ++i) {
        flat.segment(i * kNumJoints * 6, kNumJoints * 6) =
            Eigen::Map<const Eigen::ArrayXd>(control.values.row(i).data(), kNumJoints * 6);
    }
    Tensor per_frame = Tensor::from_data({m, kNumJoints * 6}, flat);
    Tensor x = layer_norm(gelu(linear(per_frame, model.params().get("posetok.w"),
                                      model.params().get("posetok.b"))));
    Eigen::ArrayXd pe(m * d);
    for (long i = 0; i < m; ++i) pe.segment(i * d, d) = sinusoidal_embedding(static_cast<double>(i), d);
    return add(x, Tensor::from_data({m, d}, pe));
}

Tensor dit_block_forward(const Tensor& u, const BlockTriples& mods,
                         const std::optional<Tensor>& context, const DenoiserModel& model, long block) {
    const auto& p = model.params();
    const int heads = static_cast<int>(model.config().heads);
    const std::string pre = "blk" + std::to_string(block) + ".";

    Tensor x = u;
    {
        Tensor t = adaln(x, mods.self_attn.beta, mods.self_attn.gamma);
        Tensor a = attention(linear(t, p.get(pre + "self.wq"), p.get(pre + "self.bq")),
                             linear(t, p.get(pre + "self.wk"), p.get(pre + "self.bk")),
                             linear(t, p.get(pre + "self.wv"), p.get(pre + "self.bv")), heads);
        a = linear(a, p.get(pre + "self.wo"), p.get(pre + "self.bo"));
        x = add(x, mul_rowvec(a, mods.self_attn.gate));
    }
    if (context) {
        Tensor t = adaln(x, mods.cross_attn.beta, mods.cross_attn.gamma);
        Tensor a = attention(linear(t, p.get(pre + "cross.wq"), p.get(pre + "cross.bq")),
                             linear(*context, p.get(pre + "cross.wk"), p.get(pre + "cross.bk")),
                             linear(*context, p.get(pre + "cross.wv"), p.get(pre + "cross.bv")), heads);
        a = linear(a, p.get(pre + "cross.wo"), p.get(pre + "cross.bo"));
        x = add(x, mul_rowvec(a, mods.cross_attn.gate));
    }
    {
        Tensor t = adaln(x, mods.mlp.beta, mods.mlp.gamma);
        Tensor h = gelu(linear(t, p.get(pre + "mlp.w1"), p.get(pre + "mlp.b1")));
        Tensor o = linear(h, p.get(pre + "mlp.w2"), p.get(pre + "mlp.b2"));
        x = add(x, mul_rowvec(o, mods.mlp.gate));
    }
    return x;
}

Tensor assemble_grid(const DenoiserModel& model, const LatentVideo& past,
                     const Eigen::ArrayXd& generated_scaled, bool null_context) {
    const DiTConfig& cfg = model.config();
    const long fs = cfg.c_lat * cfg.h_lat * cfg.w_lat;
    if (past.t != cfg.ctx_lat || past.frame_size() != fs) {
        throw std::invalid_argument("assemble_grid: context geometry mismatch");
    }
    if (generated_scaled.size() != (cfg.t_lat - cfg.ctx_lat) * fs) {
        throw std::invalid_argument("assemble_grid: generated slot size mismatch");
    }
    Tensor gen = Tensor::from_data({cfg.t_lat - cfg.ctx_lat, fs}, generated_scaled);
    Tensor ctx;
    if (null_context) {
        // broadcast the learned per-channel null embedding over the context block
        auto idx = std::make_shared<std::vector<long>>(static_cast<size_t>(cfg.ctx_lat * fs));
        const long hw = cfg.h_lat * cfg.w_lat;
        for (long t = 0; t < cfg.ctx_lat; ++t)
            for (long c = 0; c < cfg.c_lat; ++c)
                for (long i = 0; i < hw; ++i) (*idx)[static_cast<size_t>((t * cfg.c_lat + c) * hw + i)] = c;
        ctx = gather(model.params().get("null_ctx"), {cfg.ctx_lat, fs}, idx);
    } else {
        ctx = Tensor::from_data({cfg.ctx_lat, fs}, past.data);
    }
    return concat_rows({ctx, gen}).reshape({cfg.t_lat * fs});
}

Tensor denoiser_forward(const DenoiserModel& model, const Tensor& grid, double sigma,
                        const ControlTensor* control) {
    const DiTConfig& cfg = model.config();
    if (grid.size() != cfg.t_lat * cfg.c_lat * cfg.h_lat * cfg.w_lat) {
        throw std::invalid_argument("denoiser_forward: grid geometry mismatch");
    }
    const double c_noise = 0.25 * std::log(std::max(sigma, 1e-12));
    const auto& p = model.params();

    auto [e_t, m_t] = step_conditioning(c_noise, model);
    Tensor e = e_t, m = m_t;
    if (control && cfg.adaln_pose) {
        auto [e_p, m_p] = pose_global_conditioning(*control, model);
        std::tie(e, m) = combine_conditioning(e_t, e_p, m_t, m_p);
    }
    std::optional<Tensor> context;
    if (control && cfg.cross_attn_pose) context = pose_tokens(*control, model);

    Tensor x = gather(grid, {cfg.num_tokens(), cfg.token_dim()}, model.patch_index());
    x = linear(x, p.get("patch.w_in"), p.get("patch.b_in"));
    Tensor pos = add(add(take_rows(p.get("pos.time"), model.token_time()),
                         take_rows(p.get("pos.row"), model.token_row())),
                     take_rows(p.get("pos.col"), model.token_col()));
    x = add(x, pos);

    for (long b = 0; b < cfg.depth; ++b) {
        const std::string pre = "blk" + std::to_string(b) + ".";
        BlockTriples mods{
            modulation_params(e, m, p.get(pre + "self.w_m2"), p.get(pre + "self.w_m1")),
            modulation_params(e, m, p.get(pre + "cross.w_m2"), p.get(pre + "cross.w_m1")),
            modulation_params(e, m, p.get(pre + "mlp.w_m2"), p.get(pre + "mlp.w_m1"))};
        x = dit_block_forward(x, mods, context, model, b);
    }
    Tensor y = linear(x, p.get("patch.w_out"), p.get("patch.b_out"));
    return gather(y.reshape({y.size()}), {grid.size()}, model.unpatch_index());
}

LatentVideo denoise(const LatentVideo& z_in, double sigma, const LatentVideo& past,
                    const ControlTensor* control, const DenoiserModel& model, bool null_context) {
    const DiTConfig& cfg = model.config();
    if (z_in.t != cfg.t_lat || z_in.c != cfg.c_lat || z_in.h != cfg.h_lat || z_in.w != cfg.w_lat) {
        throw std::invalid_argument("denoise: latent geometry mismatch");
    }
    Tensor grid = assemble_grid(model, past, z_in.generated(), null_context);
    Tensor out = denoiser_forward(model, grid, sigma, control);
    LatentVideo result = LatentVideo::zeros(z_in.t, z_in.c, z_in.h, z_in.w, z_in.context_frames);
    result.data = out.data();
    // context slots pass through unchanged
    result.data.head(past.size()) = past.data;
    return result;
}

}  // namespace egodiff
