#pragma once

#include "egodiff/dit.hpp"

#include <vector>

namespace egodiff {

struct NoiseSchedule {
    double sigma_min = 0.002;
    double sigma_max = 80.0;
    double rho = 7.0;
    long steps = 18;
    double sigma_data = 0.5;
    // log-sigma sampling for training
    double p_mean = -1.2;
    double p_std = 1.2;

    void validate() const;
};

struct GuidanceConfig {
    double weight = 2.0;
    double context_dropout_prob = 0.2;

    void validate() const;
};

struct Preconditioning {
    double c_skip, c_out, c_in, c_noise;
};
Preconditioning edm_preconditioning(double sigma, double sigma_data);
double edm_loss_weight(double sigma, double sigma_data);
double sample_training_sigma(const NoiseSchedule& s, uint64_t seed);

/// sigma_0 > ... > sigma_{steps-1} = sigma_min, then an appended 0.
std::vector<double> sigma_ladder(const NoiseSchedule& s);

/// z = z0 + sigma * eps on the generated slots; context untouched.
LatentVideo perturb(const LatentVideo& z0, double sigma, uint64_t seed);

/// One training clip: clean latents (context+generated) and its control.
struct TrainClip {
    LatentVideo latents;
    ControlTensor control;
    bool has_control = true;
    bool null_context = false;
};

/// Per-clip EDM loss graph; mean over generated slots of
/// w(sigma) * |D_theta(z, sigma) - z0|^2.
Tensor training_loss_clip(const TrainClip& clip, const DenoiserModel& model,
                          const NoiseSchedule& schedule, uint64_t seed);
/// Mean loss over the batch (value only; use per-clip graphs for training).
double training_loss(const std::vector<TrainClip>& batch, const DenoiserModel& model,
                     const NoiseSchedule& schedule, uint64_t seed);

/// Marks clips for context nulling with probability p (seeded, per clip).
void context_dropout(std::vector<TrainClip>& batch, double p, uint64_t seed);

/// Preconditioned denoiser D_theta = c_skip z + c_out z_theta(c_in z, ...),
/// applied to generated slots; context slots stay clean.
LatentVideo precond_denoise(const LatentVideo& z, double sigma, const LatentVideo& past,
                            const ControlTensor* control, const DenoiserModel& model,
                            double sigma_data = 0.5, bool null_context = false);

/// D_uncond + weight * (D_cond - D_uncond); pose control is kept in both
/// branches, only context frames are nulled for the unconditional branch.
LatentVideo cfg_denoise(const LatentVideo& z, double sigma, const LatentVideo& past,
                        const ControlTensor* control, const DenoiserModel& model, double weight,
                        double sigma_data = 0.5);

/// Hook for substituting the denoiser in sampler and loss tests.
using DenoiseFn = std::function<LatentVideo(const LatentVideo&, double)>;

/// Value-level EDM loss against an arbitrary preconditioned denoiser
/// (oracle injection point; an oracle returning the clean latents gives 0).
double training_loss_with(const DenoiseFn& den, const LatentVideo& latents,
                          const NoiseSchedule& schedule, uint64_t seed);

/// Deterministic Heun sampler over the sigma ladder.
LatentVideo sample(const LatentVideo& past, const ControlTensor* control, const DenoiserModel& model,
                   const NoiseSchedule& schedule, const GuidanceConfig& guidance, uint64_t seed);
LatentVideo sample_with(const DenoiseFn& den, const LatentVideo& past, const DiTConfig& cfg,
                        const NoiseSchedule& schedule, uint64_t seed);

}  // namespace egodiff
