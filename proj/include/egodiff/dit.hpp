#pragma once

#include "egodiff/nn.hpp"
#include "egodiff/se3.hpp"
#include "egodiff/tensor.hpp"

#include <memory>
#include <optional>
#include <string>

namespace egodiff {

struct DiTConfig {
    long d = 128;           // model width
    long r = 32;            // modulation bottleneck rank, r < d
    long heads = 4;
    long depth = 4;
    long patch = 4;         // spatial patch size over latent grid
    long t_lat = 12;        // latent frames (context + generated)
    long ctx_lat = 4;       // leading latent frames carrying clean context
    long c_lat = 192;
    long h_lat = 12;
    long w_lat = 12;
    long step_embed = 64;   // sinusoidal width D for the noise-level code
    long future_frames = 32;  // M, pose rows
    long past_frames = 13;    // N, raw context frames
    bool adaln_pose = true;      // pose -> modulation pathway
    bool cross_attn_pose = true; // pose tokens -> cross-attention pathway

    long pose_flat_dim() const { return future_frames * kNumJoints * 6; }
    long token_dim() const { return c_lat * patch * patch; }
    long tokens_per_frame() const { return (h_lat / patch) * (w_lat / patch); }
    long num_tokens() const { return t_lat * tokens_per_frame(); }
    void validate() const;

    std::string to_json() const;
    static DiTConfig from_json(const std::string& text);
};

/// Latent video grid, [T][C][H][W] flat, context frames first.
struct LatentVideo {
    long t = 0, c = 0, h = 0, w = 0;
    long context_frames = 0;
    Eigen::ArrayXd data;

    static LatentVideo zeros(long t, long c, long h, long w, long context_frames);
    long frame_size() const { return c * h * w; }
    long size() const { return t * c * h * w; }
    long generated_frames() const { return t - context_frames; }
    /// view of the generated-slot block (contiguous tail)
    auto generated() { return data.segment(context_frames * frame_size(), generated_frames() * frame_size()); }
    auto generated() const { return data.segment(context_frames * frame_size(), generated_frames() * frame_size()); }
};

/// Shift / scale / gate for one component of one block.
struct ModulationTriple {
    Tensor beta;
    Tensor gamma;
    Tensor gate;
};

class DenoiserModel {
public:
    DenoiserModel(DiTConfig cfg, uint64_t init_seed);

    const DiTConfig& config() const { return cfg_; }
    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }

    void save(const std::string& dir, bool with_optimizer_state = true) const;
    static DenoiserModel load(const std::string& dir);

    // precomputed patchify / unpatchify index maps
    std::shared_ptr<const std::vector<long>> patch_index() const { return patch_index_; }
    std::shared_ptr<const std::vector<long>> unpatch_index() const { return unpatch_index_; }
    const std::vector<long>& token_time() const { return token_time_; }
    const std::vector<long>& token_row() const { return token_row_; }
    const std::vector<long>& token_col() const { return token_col_; }

private:
    DiTConfig cfg_;
    ParameterStore params_;
    std::shared_ptr<const std::vector<long>> patch_index_;
    std::shared_ptr<const std::vector<long>> unpatch_index_;
    std::vector<long> token_time_, token_row_, token_col_;

    void build_parameters(uint64_t seed);
    void build_index_maps();
};

// conditioning pathway (free functions; all return graph tensors)

/// (e_P [1,d], m_P [1,3d]) from the flattened control block.
std::pair<Tensor, Tensor> pose_global_conditioning(const ControlTensor& control, const DenoiserModel& model);
/// (e_t [1,d], m_t [1,3d]) from the noise-level code.
std::pair<Tensor, Tensor> step_conditioning(double c_noise, const DenoiserModel& model);
std::pair<Tensor, Tensor> combine_conditioning(const Tensor& e_t, const Tensor& e_p,
                                               const Tensor& m_t, const Tensor& m_p);
/// [beta, gamma, gate] = bottleneck(SiLU(e)) + m for one block/component.
ModulationTriple modulation_params(const Tensor& e, const Tensor& m, const Tensor& w_m2,
                                   const Tensor& w_m1);
/// LN(u) * (1 + gamma) + beta, gamma/beta broadcast over tokens.
Tensor adaln(const Tensor& u, const Tensor& beta, const Tensor& gamma);
/// M temporally ordered pose tokens [M, d]: LN(GELU(W_p P_m)) + PE(m).
Tensor pose_tokens(const ControlTensor& control, const DenoiserModel& model);

struct BlockTriples {
    ModulationTriple self_attn, cross_attn, mlp;
};

/// Three gated residual updates (self-attention, cross-attention, MLP).
/// Cross-attention is skipped when `context` is empty.
Tensor dit_block_forward(const Tensor& u, const BlockTriples& mods,
                         const std::optional<Tensor>& context, const DenoiserModel& model, long block);

/// Raw network z_theta over the full latent grid. `grid` must already carry
/// clean context in the leading context frames and the (scaled) noisy input
/// in the generated frames. Returns the predicted latent grid tensor; only
/// the generated slots are meaningful.
Tensor denoiser_forward(const DenoiserModel& model, const Tensor& grid, double sigma,
                        const ControlTensor* control);

/// Builds the full-grid input tensor: clean context frames (or the learned
/// null-context embedding when `null_context`) followed by the generated
/// slots of `z_gen_scaled`.
Tensor assemble_grid(const DenoiserModel& model, const LatentVideo& past,
                     const Eigen::ArrayXd& generated_scaled, bool null_context);

/// Value-level denoise: context slots of the result are the clean past
/// latents, generated slots carry the network prediction.
LatentVideo denoise(const LatentVideo& z_in, double sigma, const LatentVideo& past,
                    const ControlTensor* control, const DenoiserModel& model,
                    bool null_context = false);

}  // namespace egodiff
