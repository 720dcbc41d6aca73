#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace egodiff {

using Vector6d = Eigen::Matrix<double, 6, 1>;

/// Rigid body transform (rotation + translation). Construction validates
/// orthonormality of the rotation to 1e-9.
class RigidTransform {
public:
    RigidTransform();
    RigidTransform(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation);

    static RigidTransform identity();
    static RigidTransform from_translation(const Eigen::Vector3d& t);
    static RigidTransform rot_x(double angle);
    static RigidTransform rot_y(double angle);
    static RigidTransform rot_z(double angle);

    const Eigen::Matrix3d& rotation() const { return rotation_; }
    const Eigen::Vector3d& translation() const { return translation_; }

    Eigen::Matrix4d matrix() const;
    Eigen::Vector3d apply(const Eigen::Vector3d& p) const;

private:
    Eigen::Matrix3d rotation_;
    Eigen::Vector3d translation_;
};

RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
RigidTransform invert(const RigidTransform& t);
RigidTransform operator*(const RigidTransform& a, const RigidTransform& b);

/// current relative to previous: current * previous^-1
RigidTransform relative_transform(const RigidTransform& current, const RigidTransform& previous);

/// Translation plus intrinsic X-Y-Z Euler angles (roll, pitch, yaw), radians.
struct Pose6D {
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
    Eigen::Vector3d rotation = Eigen::Vector3d::Zero();  // (rx, ry, rz)

    Vector6d vec() const {
        Vector6d v;
        v << translation, rotation;
        return v;
    }
};

/// Euler extraction; near-gimbal poses (|pitch| within 1e-6 of pi/2) set yaw
/// to zero and flag `degenerate` when provided.
Pose6D transform_to_6d(const RigidTransform& t, bool* degenerate = nullptr);
RigidTransform pose6d_to_transform(const Pose6D& p);

inline constexpr int kNumJoints = 21 + 2;  // 21 body joints + head + pelvis

struct BodyPoseFrame {
    std::vector<RigidTransform> joints;  // exactly kNumJoints, global frame
    int head_index = 0;
    int pelvis_index = 1;

    const RigidTransform& head() const { return joints[static_cast<size_t>(head_index)]; }
    const RigidTransform& pelvis() const { return joints[static_cast<size_t>(pelvis_index)]; }
    void validate() const;
};

struct PoseSequence {
    // frame 0 = last observed frame, frames 1..M = control targets
    std::vector<BodyPoseFrame> frames;
    double dt = 1.0 / 16.0;

    long horizon() const { return static_cast<long>(frames.size()) - 1; }
    void validate() const;
};

/// M x 23 x 6 control block. Row 0 = head deltas, row 1 = pelvis deltas,
/// rows 2..22 = pelvis-relative joints. Stored as M x 138, joint-major.
struct ControlTensor {
    Eigen::MatrixXd values;  // M x (23*6)

    long horizon() const { return values.rows(); }
    double& at(long frame, int joint, int comp) { return values(frame, joint * 6 + comp); }
    double at(long frame, int joint, int comp) const { return values(frame, joint * 6 + comp); }
};

Eigen::MatrixXd head_deltas(const PoseSequence& seq);    // M x 6
Eigen::MatrixXd pelvis_deltas(const PoseSequence& seq);  // M x 6
Eigen::MatrixXd pelvis_relative_joints(const BodyPoseFrame& frame);  // 21 x 6
ControlTensor assemble_control(const PoseSequence& seq);

// ablation variants
Eigen::MatrixXd cumulative_head_variant(const PoseSequence& seq);  // M x 6
ControlTensor per_joint_delta_variant(const PoseSequence& seq);    // M x 23 x 6

// JSON-lines serialization: one frame per line with fields `joints`
// (23 x 12 floats, row-major rotation then translation), `head_index`,
// `pelvis_index`, `dt`.
void save_pose_sequence(const PoseSequence& seq, std::ostream& out);
PoseSequence load_pose_sequence(std::istream& in);
void save_pose_sequence(const PoseSequence& seq, const std::string& path);
PoseSequence load_pose_sequence(const std::string& path);

}  // namespace egodiff
