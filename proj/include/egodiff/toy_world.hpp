#pragma once

#include "egodiff/dit.hpp"
#include "egodiff/se3.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace egodiff {

struct Image {
    long h = 0, w = 0;
    Eigen::ArrayXd data;  // [h][w][3], values in [0,1]

    static Image zeros(long h, long w);
    double& at(long y, long x, int c) { return data[(y * w + x) * 3 + c]; }
    double at(long y, long x, int c) const { return data[(y * w + x) * 3 + c]; }
    Eigen::Vector3d pixel(long y, long x) const {
        return {at(y, x, 0), at(y, x, 1), at(y, x, 2)};
    }
};

struct BinaryMask {
    long h = 0, w = 0;
    std::vector<uint8_t> data;  // [h][w], 0 or 1

    static BinaryMask zeros(long h, long w);
    uint8_t at(long y, long x) const { return data[static_cast<size_t>(y * w + x)]; }
    uint8_t& at(long y, long x) { return data[static_cast<size_t>(y * w + x)]; }
    long count() const;
};

/// Reserved arm color; landmark palette keeps its distance from this.
Eigen::Vector3d arm_color();

struct Landmark {
    int wall = 0;  // 0:+y 1:+x 2:-y 3:-x
    Eigen::Vector3d center;
    double half_w = 0.5, half_h = 0.5;
    Eigen::Vector3d color;
};

struct Scene {
    double xmin = -4, xmax = 4, ymin = -4, ymax = 4;
    double wall_height = 2.6;
    Eigen::Vector3d floor_color, ceiling_color;
    std::array<Eigen::Vector3d, 4> wall_colors;
    std::vector<Landmark> landmarks;
    uint64_t seed = 0;

    static Scene generate(uint64_t seed, int num_landmarks = 10);
    void validate() const;
};

struct ArmPose {
    double shoulder_pitch = 0.0;
    double elbow_bend = 0.0;
};

struct AgentState {
    RigidTransform head;    // camera pose: x right, y down, z forward
    RigidTransform pelvis;  // body frame: x forward, y left, z up
    ArmPose left, right;
};

/// Camera pose from planar position, yaw and height.
RigidTransform camera_pose(double x, double y, double z, double yaw);
/// 4-DoF decomposition of a camera pose (yaw from the forward axis).
void camera_pose_params(const RigidTransform& t, double& x, double& y, double& z, double& yaw);

std::vector<AgentState> sample_trajectory(const Scene& scene, long length, uint64_t seed);

const std::vector<std::string>& joint_names();
BodyPoseFrame skeleton_to_body_pose(const AgentState& state);

/// Pinhole render (90 degree FOV) of the scene plus the arm capsules taken
/// from the given body pose; mask holds exactly the arm pixels.
std::pair<Image, BinaryMask> render_frame(const Scene& scene, const BodyPoseFrame& pose,
                                          long width, long height);
std::pair<Image, BinaryMask> render_frame(const Scene& scene, const AgentState& state,
                                          long width, long height);
/// Scene-only render (no arms), used by the photometric pose estimator.
Image render_scene_only(const Scene& scene, const RigidTransform& camera, long width, long height);

// ---- invertible tokenizer stand-in ----

/// Per-frame 4x4 space-to-depth: HxWx3 -> (H/4)x(W/4)x48, channel-major.
Eigen::ArrayXd space_to_depth(const Image& frame);

/// Frames -> latents: frame 0 alone, then temporal groups of 4 (45 frames
/// -> 12 latent frames); spatial space-to-depth factor 4; fixed affine
/// (v - 0.5) / 0.5 per channel. Exact inverse via detokenize.
LatentVideo tokenize(const std::vector<Image>& frames, long context_latent_frames);
std::vector<Image> detokenize(const LatentVideo& latents);
/// raw frame count <-> latent frame count under the temporal grouping
long latent_frames_for(long raw_frames);
long context_latents_for(long past_frames);

// ---- dataset ----

struct DatasetConfig {
    long num_trajectories = 8;
    long clips_per_trajectory = 4;
    long clip_length = 45;
    long past_frames = 13;
    long width = 48, height = 48;
    int landmarks = 10;
    bool shared_scene = true;  // one scene for all trajectories
    double dt = 1.0 / 16.0;
    double train_fraction = 0.7, val_fraction = 0.1;

    void validate() const;
    std::string to_json() const;
    static DatasetConfig from_json(const std::string& text);
};

struct ClipRecord {
    std::vector<Image> frames;
    std::vector<BinaryMask> masks;
    PoseSequence poses;
    long split_index = 13;  // N past frames
};

struct ClipInfo {
    std::string id;
    long trajectory = 0;
    std::string split;  // train / val / test
    uint64_t seed = 0;
    std::string path;  // relative to dataset root
};

struct DatasetManifest {
    DatasetConfig config;
    uint64_t seed = 0;
    std::vector<ClipInfo> clips;

    std::vector<ClipInfo> in_split(const std::string& split) const;
};

void generate_dataset(const DatasetConfig& config, const std::string& out_dir, uint64_t seed);
DatasetManifest load_manifest(const std::string& dataset_dir);
ClipRecord load_clip(const std::string& dataset_dir, const ClipInfo& info);
Scene dataset_scene(const DatasetManifest& manifest, long trajectory);

void write_frames_bin(const std::vector<Image>& frames, const std::string& path);
std::vector<Image> read_frames_bin(const std::string& path, long t, long h, long w);

}  // namespace egodiff
