#pragma once

#include "egodiff/edm.hpp"
#include "egodiff/eval.hpp"
#include "egodiff/toy_world.hpp"

#include <string>

namespace egodiff {

enum class PoseVariant { full_body, head_only, none, cumulative_head, per_joint_delta };
enum class ControlMechanism { adaln, cross_attn, both };

std::string to_string(PoseVariant v);
std::string to_string(ControlMechanism m);
PoseVariant parse_pose_variant(const std::string& s);
ControlMechanism parse_control_mechanism(const std::string& s);

struct RunConfig {
    std::string dataset;
    std::string out_dir = "run";
    uint64_t seed = 0;

    // model
    long d = 128, r = 32, heads = 4, depth = 4, patch = 4, step_embed = 64;

    // optimizer / loop
    double lr = 3e-4, beta1 = 0.9, beta2 = 0.999;
    double lr_min = 0.0;  // > 0 -> cosine decay from lr to lr_min over `iterations`
    double grad_clip = 0.0;  // > 0 -> clip the global gradient L2 norm
    long batch_size = 16;
    long iterations = 3000;
    long checkpoint_interval = 500;
    long threads = 0;  // 0 -> EGODIFF_THREADS env var, else 1

    NoiseSchedule schedule;
    GuidanceConfig guidance;
    PoseVariant variant = PoseVariant::full_body;
    ControlMechanism mechanism = ControlMechanism::both;

    void validate() const;
    std::string to_json() const;
};

/// Parse + validate + fill defaults; unknown keys are an error.
RunConfig config_from_json(const std::string& text);
RunConfig load_config(const std::string& path);

long resolve_threads(long configured);

/// Model geometry implied by the run config and the dataset it trains on.
DiTConfig model_config_for(const RunConfig& cfg, const DatasetConfig& data);

/// Fills `out` per the variant; returns false when no pose information is
/// fed to the network (`none`).
bool build_variant_control(const PoseSequence& seq, PoseVariant variant, ControlTensor& out);
ControlBuilder control_builder(PoseVariant variant);

struct TrainResult {
    long steps = 0;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::string checkpoint_dir;
};

/// Deterministic, resumable training loop. Checkpoints (model + Adam state)
/// land in <out_dir>/checkpoint; JSON-lines log in <out_dir>/train_log.jsonl.
TrainResult train(const RunConfig& cfg);

/// Cross-paired generation: context frames from `context_clip`, control
/// from `pose_clip` (may be the same id). Writes frames.bin with the M
/// generated frames plus strip.png of the decoded sequence.
void sample_cmd(const RunConfig& cfg, const std::string& checkpoint_dir,
                const std::string& context_clip, const std::string& pose_clip,
                const std::string& out_dir, uint64_t seed);

EvalReport eval_checkpoint(const std::string& checkpoint_dir, const std::string& dataset_dir,
                           const EvalOptions& opts, uint64_t seed);

/// Trains and evaluates every cell of the grid file and writes a CSV with
/// columns name,ssim,trans_error,rot_error,miou,presence_accuracy.
void ablate(const std::string& grid_path, const std::string& out_csv);

}  // namespace egodiff
