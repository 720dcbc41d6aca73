#include "egodiff/edm.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace egodiff {

void NoiseSchedule::validate() const {
    if (!(sigma_min > 0.0) || !(sigma_max > sigma_min)) {
        throw std::invalid_argument("NoiseSchedule: need 0 < sigma_min < sigma_max");
    }
    if (steps < 1) throw std::invalid_argument("NoiseSchedule: steps must be >= 1");
    if (!(rho > 0.0) || !(sigma_data > 0.0)) throw std::invalid_argument("NoiseSchedule: bad rho/sigma_data");
}

void GuidanceConfig::validate() const {
    if (weight < 0.0) throw std::invalid_argument("GuidanceConfig: weight must be >= 0");
    if (context_dropout_prob < 0.0 || context_dropout_prob > 1.0) {
        throw std::invalid_argument("GuidanceConfig: dropout probability out of [0,1]");
    }
}

Preconditioning edm_preconditioning(double sigma, double sigma_data) {
    const double s2 = sigma * sigma, d2 = sigma_data * sigma_data;
    Preconditioning p;
    p.c_skip = d2 / (s2 + d2);
    p.c_out = sigma * sigma_data / std::sqrt(s2 + d2);
    p.c_in = 1.0 / std::sqrt(s2 + d2);
    p.c_noise = 0.25 * std::log(std::max(sigma, 1e-12));
    return p;
}

double edm_loss_weight(double sigma, double sigma_data) {
    const double s2 = sigma * sigma, d2 = sigma_data * sigma_data;
    return (s2 + d2) / (s2 * d2);
}

double sample_training_sigma(const NoiseSchedule& s, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(s.p_mean, s.p_std);
    return std::exp(dist(rng));
}

std::vector<double> sigma_ladder(const NoiseSchedule& s) {
    s.validate();
    std::vector<double> out;
    if (s.steps == 1) {
        out = {s.sigma_max, 0.0};
        return out;
    }
    const double a = std::pow(s.sigma_max, 1.0 / s.rho);
    const double b = std::pow(s.sigma_min, 1.0 / s.rho);
    for (long i = 0; i < s.steps; ++i) {
        const double u = static_cast<double>(i) / static_cast<double>(s.steps - 1);
        out.push_back(std::pow(a + u * (b - a), s.rho));
    }
    out.push_back(0.0);
    return out;
}

LatentVideo perturb(const LatentVideo& z0, double sigma, uint64_t seed) {
    if (sigma < 0.0) throw std::invalid_argument("perturb: sigma must be >= 0");
    LatentVideo z = z0;
    if (sigma == 0.0) return z;
    const long n = z.generated_frames() * z.frame_size();
    Tensor eps = Tensor::randn({n}, seed);
    z.generated() += sigma * eps.data();
    return z;
}

Tensor training_loss_clip(const TrainClip& clip, const DenoiserModel& model,
                          const NoiseSchedule& schedule, uint64_t seed) {
    const DiTConfig& cfg = model.config();
    const double sigma = sample_training_sigma(schedule, mix_seed(seed, 1));
    const Preconditioning pc = edm_preconditioning(sigma, schedule.sigma_data);
    const LatentVideo z = perturb(clip.latents, sigma, mix_seed(seed, 2));

    LatentVideo past = LatentVideo::zeros(cfg.ctx_lat, cfg.c_lat, cfg.h_lat, cfg.w_lat, cfg.ctx_lat);
    past.data = clip.latents.data.head(past.size());

    Tensor grid = assemble_grid(model, past, (pc.c_in * z.generated()).eval(), clip.null_context);
    Tensor raw = denoiser_forward(model, grid, sigma, clip.has_control ? &clip.control : nullptr);

    const long gen0 = past.size();
    const long gen_n = z.size() - gen0;
    Tensor raw_gen = slice_rows(raw.reshape({z.t, z.frame_size()}), z.context_frames, z.t).reshape({gen_n});
    Tensor d_theta = add(scale(raw_gen, pc.c_out),
                         Tensor::from_data({gen_n}, (pc.c_skip * z.generated()).eval()));
    Tensor target = Tensor::from_data({gen_n}, clip.latents.data.tail(gen_n));
    Tensor diff = sub(d_theta, target);
    return scale(mean(mul(diff, diff)), edm_loss_weight(sigma, schedule.sigma_data));
}

double training_loss(const std::vector<TrainClip>& batch, const DenoiserModel& model,
                     const NoiseSchedule& schedule, uint64_t seed) {
    if (batch.empty()) throw std::invalid_argument("training_loss: empty batch");
    double total = 0.0;
    for (size_t i = 0; i < batch.size(); ++i) {
        total += training_loss_clip(batch[i], model, schedule, mix_seed(seed, i)).scalar();
    }
    return total / static_cast<double>(batch.size());
}

double training_loss_with(const DenoiseFn& den, const LatentVideo& latents,
                          const NoiseSchedule& schedule, uint64_t seed) {
    const double sigma = sample_training_sigma(schedule, mix_seed(seed, 1));
    const LatentVideo z = perturb(latents, sigma, mix_seed(seed, 2));
    const LatentVideo d = den(z, sigma);
    const Eigen::ArrayXd diff = d.generated() - latents.generated();
    return edm_loss_weight(sigma, schedule.sigma_data) * diff.square().mean();
}

void context_dropout(std::vector<TrainClip>& batch, double p, uint64_t seed) {
    if (p < 0.0 || p > 1.0) throw std::invalid_argument("context_dropout: p out of [0,1]");
    for (size_t i = 0; i < batch.size(); ++i) {
        std::mt19937_64 rng(mix_seed(seed, i));
        std::uniform_real_distribution<double> dist(0.0, 1.0);
        if (dist(rng) < p) batch[i].null_context = true;
    }
}

LatentVideo precond_denoise(const LatentVideo& z, double sigma, const LatentVideo& past,
                            const ControlTensor* control, const DenoiserModel& model,
                            double sigma_data, bool null_context) {
    const Preconditioning pc = edm_preconditioning(sigma, sigma_data);
    LatentVideo scaled = z;
    scaled.generated() *= pc.c_in;
    LatentVideo raw = denoise(scaled, sigma, past, control, model, null_context);
    LatentVideo out = z;
    out.generated() = pc.c_skip * z.generated() + pc.c_out * raw.generated();
    out.data.head(past.size()) = past.data;
    return out;
}

LatentVideo cfg_denoise(const LatentVideo& z, double sigma, const LatentVideo& past,
                        const ControlTensor* control, const DenoiserModel& model, double weight,
                        double sigma_data) {
    if (weight < 0.0) throw std::invalid_argument("cfg_denoise: weight must be >= 0");
    LatentVideo cond = precond_denoise(z, sigma, past, control, model, sigma_data, false);
    if (weight == 1.0) return cond;
    LatentVideo uncond = precond_denoise(z, sigma, past, control, model, sigma_data, true);
    LatentVideo out = cond;
    out.generated() = uncond.generated() + weight * (cond.generated() - uncond.generated());
    return out;
}

LatentVideo sample_with(const DenoiseFn& den, const LatentVideo& past, const DiTConfig& cfg,
                        const NoiseSchedule& schedule, uint64_t seed) {
    const auto sigmas = sigma_ladder(schedule);
    LatentVideo x = LatentVideo::zeros(cfg.t_lat, cfg.c_lat, cfg.h_lat, cfg.w_lat, cfg.ctx_lat);
    x.data.head(past.size()) = past.data;
    const long n = x.generated_frames() * x.frame_size();
    x.generated() = sigmas.front() * Tensor::randn({n}, seed).data();

    for (size_t i = 0; i + 1 < sigmas.size(); ++i) {
        const double s0 = sigmas[i], s1 = sigmas[i + 1];
        LatentVideo d0 = den(x, s0);
        Eigen::ArrayXd slope = (x.generated() - d0.generated()) / s0;
        LatentVideo xn = x;
        xn.generated() = x.generated() + (s1 - s0) * slope;
        if (s1 > 0.0) {
            LatentVideo d1 = den(xn, s1);
            Eigen::ArrayXd slope1 = (xn.generated() - d1.generated()) / s1;
            xn.generated() = x.generated() + (s1 - s0) * 0.5 * (slope + slope1);
        }
        x = xn;
        x.data.head(past.size()) = past.data;  // clamp context every step
    }
    return x;
}

LatentVideo sample(const LatentVideo& past, const ControlTensor* control, const DenoiserModel& model,
                   const NoiseSchedule& schedule, const GuidanceConfig& guidance, uint64_t seed) {
    guidance.validate();
    auto den = [&](const LatentVideo& z, double sigma) {
        return cfg_denoise(z, sigma, past, control, model, guidance.weight, schedule.sigma_data);
    };
    return sample_with(den, past, model.config(), schedule, seed);
}

}  // namespace egodiff
