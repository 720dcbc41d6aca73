#pragma once

#include "egodiff/edm.hpp"
#include "egodiff/toy_world.hpp"

#include <functional>
#include <string>
#include <vector>

namespace egodiff {

/// Standard SSIM (11x11 Gaussian window, sigma 1.5, C1=1e-4, C2=9e-4 on a
/// [0,1] range), averaged over channels and pixels, scaled by 100.
double ssim(const Image& a, const Image& b);

struct TrackedPose {
    RigidTransform pose;
    bool tracked = false;
    double residual = 0.0;
};

/// Photometric 4-DoF (x, y, z, yaw) head-pose recovery against the known
/// scene: per frame, coarse-to-fine coordinate descent on the masked
/// photometric error of render_scene_only vs the observed frame, seeded
/// from the previous frame's estimate (`init` for the first frame). Arm
/// pixels in the observation are excluded via the color key. Frames whose
/// final residual exceeds the divergence threshold are flagged untracked.
std::vector<TrackedPose> estimate_head_trajectory(const std::vector<Image>& frames,
                                                  const Scene& scene, const RigidTransform& init);

/// (mean Euclidean translation distance in meters,
///  mean geodesic rotation angle in degrees)
std::pair<double, double> trajectory_errors(const std::vector<RigidTransform>& est,
                                            const std::vector<RigidTransform>& gt);

/// Pixels within color distance 0.15 of the reserved arm color.
BinaryMask arm_mask_from_frame(const Image& frame);

/// (mIoU x100 over frames where either mask is non-empty,
///  presence agreement x100 over all frames). Both-empty frames are
/// excluded from the IoU mean and count as correct for presence.
std::pair<double, double> body_control_metrics(const std::vector<BinaryMask>& gen_masks,
                                               const std::vector<BinaryMask>& gt_masks);

/// Builds the control tensor for a clip; returns false when the variant
/// feeds no pose information to the network. Defaults to assemble_control.
using ControlBuilder = std::function<bool(const PoseSequence&, ControlTensor&)>;

struct EvalOptions {
    NoiseSchedule schedule;
    GuidanceConfig guidance;
    std::string split = "test";
    long max_clips = 0;  // 0 = all clips in the split
    ControlBuilder control;
};

struct ClipMetrics {
    std::string id;
    double ssim = 0.0;
    double trans_error = 0.0;
    double rot_error = 0.0;
    double miou = 0.0;
    double presence_accuracy = 0.0;
    long untracked_frames = 0;
    long tracked_frames = 0;
};

struct EvalReport {
    std::string checkpoint_id;
    std::string dataset_id;
    uint64_t seed = 0;
    std::vector<ClipMetrics> clips;
    // aggregate means over clips (trans/rot over clips with tracked frames)
    double ssim = 0.0;
    double trans_error = 0.0;
    double rot_error = 0.0;
    double miou = 0.0;
    double presence_accuracy = 0.0;

    std::string to_json() const;
    void save(const std::string& path) const;
};

/// Samples every clip of the split from its 13 context frames and control,
/// decodes, and scores against ground truth.
EvalReport evaluate(const DenoiserModel& model, const std::string& dataset_dir,
                    const EvalOptions& opts, uint64_t seed,
                    const std::string& checkpoint_id = "");

}  // namespace egodiff
