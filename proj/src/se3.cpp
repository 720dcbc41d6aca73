#include "egodiff/se3.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace egodiff {

namespace {
constexpr double kOrthoTol = 1e-9;
constexpr double kHalfPi = 1.5707963267948966;
}  // namespace

RigidTransform::RigidTransform()
    : rotation_(Eigen::Matrix3d::Identity()), translation_(Eigen::Vector3d::Zero()) {}

RigidTransform::RigidTransform(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation)
    : rotation_(rotation), translation_(translation) {
    const Eigen::Matrix3d err = rotation * rotation.transpose() - Eigen::Matrix3d::Identity();
    if (err.cwiseAbs().maxCoeff() > 1e-6 || rotation.determinant() < 0.0) {
        throw std::invalid_argument("RigidTransform: rotation is not a proper rotation matrix");
    }
    // Re-orthonormalize so downstream compositions stay within kOrthoTol.
    if (err.cwiseAbs().maxCoeff() > kOrthoTol) {
        Eigen::Quaterniond q(rotation_);
        q.normalize();
        rotation_ = q.toRotationMatrix();
    }
}

RigidTransform RigidTransform::identity() { return RigidTransform(); }

RigidTransform RigidTransform::from_translation(const Eigen::Vector3d& t) {
    return RigidTransform(Eigen::Matrix3d::Identity(), t);
}

RigidTransform RigidTransform::rot_x(double angle) {
    return RigidTransform(Eigen::AngleAxisd(angle, Eigen::Vector3d::UnitX()).toRotationMatrix(),
                          Eigen::Vector3d::Zero());
}

RigidTransform RigidTransform::rot_y(double angle) {
    return RigidTransform(Eigen::AngleAxisd(angle, Eigen::Vector3d::UnitY()).toRotationMatrix(),
                          Eigen::Vector3d::Zero());
}

RigidTransform RigidTransform::rot_z(double angle) {
    return RigidTransform(Eigen::AngleAxisd(angle, Eigen::Vector3d::UnitZ()).toRotationMatrix(),
                          Eigen::Vector3d::Zero());
}

Eigen::Matrix4d RigidTransform::matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation_;
    m.topRightCorner<3, 1>() = translation_;
    return m;
}

Eigen::Vector3d RigidTransform::apply(const Eigen::Vector3d& p) const {
    return rotation_ * p + translation_;
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
    return RigidTransform(a.rotation() * b.rotation(), a.rotation() * b.translation() + a.translation());
}

RigidTransform invert(const RigidTransform& t) {
    const Eigen::Matrix3d rt = t.rotation().transpose();
    return RigidTransform(rt, -(rt * t.translation()));
}

RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) { return compose(a, b); }

RigidTransform relative_transform(const RigidTransform& current, const RigidTransform& previous) {
    return compose(current, invert(previous));
}

Pose6D transform_to_6d(const RigidTransform& t, bool* degenerate) {
    // R = Rx(rx) * Ry(ry) * Rz(rz):
    //   R(0,2) = sin(ry)
    //   R(1,2) = -sin(rx) cos(ry),  R(2,2) = cos(rx) cos(ry)
    //   R(0,1) = -cos(ry) sin(rz),  R(0,0) = cos(ry) cos(rz)
    const Eigen::Matrix3d& r = t.rotation();
    Pose6D p;
    p.translation = t.translation();
    const double sy = std::min(1.0, std::max(-1.0, r(0, 2)));
    double ry = std::asin(sy);
    bool lock = kHalfPi - std::abs(ry) < 1e-6;
    if (degenerate) *degenerate = lock;
    if (lock) {
        // yaw/roll indistinguishable: fix rz = 0, recover rx from the lower block
        p.rotation = Eigen::Vector3d(std::atan2(r(2, 1), r(1, 1)), ry, 0.0);
    } else {
        p.rotation = Eigen::Vector3d(std::atan2(-r(1, 2), r(2, 2)), ry, std::atan2(-r(0, 1), r(0, 0)));
    }
    return p;
}

RigidTransform pose6d_to_transform(const Pose6D& p) {
    for (int i = 0; i < 3; ++i) {
        if (!std::isfinite(p.rotation[i]) || !std::isfinite(p.translation[i])) {
            throw std::invalid_argument("pose6d_to_transform: non-finite component");
        }
    }
    const Eigen::Matrix3d r =
        (Eigen::AngleAxisd(p.rotation[0], Eigen::Vector3d::UnitX()) *
         Eigen::AngleAxisd(p.rotation[1], Eigen::Vector3d::UnitY()) *
         Eigen::AngleAxisd(p.rotation[2], Eigen::Vector3d::UnitZ()))
            .toRotationMatrix();
    return RigidTransform(r, p.translation);
}

void BodyPoseFrame::validate() const {
    if (static_cast<int>(joints.size()) != kNumJoints) {
        throw std::invalid_argument("BodyPoseFrame: expected 23 joints");
    }
    if (head_index == pelvis_index || head_index < 0 || pelvis_index < 0 ||
        head_index >= kNumJoints || pelvis_index >= kNumJoints) {
        throw std::invalid_argument("BodyPoseFrame: bad head/pelvis indices");
    }
}

void PoseSequence::validate() const {
    if (frames.size() < 2) throw std::invalid_argument("PoseSequence: need at least 2 frames");
    if (!(dt > 0.0)) throw std::invalid_argument("PoseSequence: frame interval must be positive");
    for (const auto& f : frames) f.validate();
}

namespace {

Eigen::MatrixXd joint_deltas(const PoseSequence& seq, int joint) {
    seq.validate();
    const long m = seq.horizon();
    Eigen::MatrixXd out(m, 6);
    for (long i = 1; i <= m; ++i) {
        const RigidTransform d = relative_transform(seq.frames[static_cast<size_t>(i)].joints[static_cast<size_t>(joint)],
                                                    seq.frames[static_cast<size_t>(i - 1)].joints[static_cast<size_t>(joint)]);
        out.row(i - 1) = transform_to_6d(d).vec().transpose();
    }
    return out;
}

}  // namespace

Eigen::MatrixXd head_deltas(const PoseSequence& seq) {
    return joint_deltas(seq, seq.frames.front().head_index);
}

Eigen::MatrixXd pelvis_deltas(const PoseSequence& seq) {
    return joint_deltas(seq, seq.frames.front().pelvis_index);
}

Eigen::MatrixXd pelvis_relative_joints(const BodyPoseFrame& frame) {
    frame.validate();
    Eigen::MatrixXd out(kNumJoints - 2, 6);
    const RigidTransform pelvis_inv = invert(frame.pelvis());
    long row = 0;
    for (int j = 0; j < kNumJoints; ++j) {
        if (j == frame.head_index || j == frame.pelvis_index) continue;
        out.row(row++) = transform_to_6d(compose(pelvis_inv, frame.joints[static_cast<size_t>(j)])).vec().transpose();
    }
    return out;
}

ControlTensor assemble_control(const PoseSequence& seq) {
    seq.validate();
    const long m = seq.horizon();
    const Eigen::MatrixXd dh = head_deltas(seq);
    const Eigen::MatrixXd dr = pelvis_deltas(seq);
    ControlTensor ct;
    ct.values.resize(m, kNumJoints * 6);
    for (long i = 0; i < m; ++i) {
        ct.values.block(i, 0, 1, 6) = dh.row(i);
        ct.values.block(i, 6, 1, 6) = dr.row(i);
        const Eigen::MatrixXd rel = pelvis_relative_joints(seq.frames[static_cast<size_t>(i + 1)]);
        for (long j = 0; j < rel.rows(); ++j) {
            ct.values.block(i, (j + 2) * 6, 1, 6) = rel.row(j);
        }
    }
    return ct;
}

Eigen::MatrixXd cumulative_head_variant(const PoseSequence& seq) {
    seq.validate();
    const long m = seq.horizon();
    const int head = seq.frames.front().head_index;
    const RigidTransform base_inv = invert(seq.frames.front().joints[static_cast<size_t>(head)]);
    Eigen::MatrixXd out(m, 6);
    for (long i = 1; i <= m; ++i) {
        const RigidTransform d = compose(seq.frames[static_cast<size_t>(i)].joints[static_cast<size_t>(head)], base_inv);
        out.row(i - 1) = transform_to_6d(d).vec().transpose();
    }
    return out;
}

ControlTensor per_joint_delta_variant(const PoseSequence& seq) {
    seq.validate();
    const long m = seq.horizon();
    ControlTensor ct;
    ct.values.resize(m, kNumJoints * 6);
    for (int j = 0; j < kNumJoints; ++j) {
        const Eigen::MatrixXd d = joint_deltas(seq, j);
        for (long i = 0; i < m; ++i) ct.values.block(i, j * 6, 1, 6) = d.row(i);
    }
    return ct;
}

void save_pose_sequence(const PoseSequence& seq, std::ostream& out) {
    for (const auto& frame : seq.frames) {
        nlohmann::json j;
        auto& joints = j["joints"];
        for (const auto& t : frame.joints) {
            std::vector<double> v(12);
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) v[static_cast<size_t>(r * 3 + c)] = t.rotation()(r, c);
            for (int r = 0; r < 3; ++r) v[static_cast<size_t>(9 + r)] = t.translation()[r];
            joints.push_back(v);
        }
        j["head_index"] = frame.head_index;
        j["pelvis_index"] = frame.pelvis_index;
        j["dt"] = seq.dt;
        out << j.dump() << '\n';
    }
}

PoseSequence load_pose_sequence(std::istream& in) {
    PoseSequence seq;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const nlohmann::json j = nlohmann::json::parse(line);
        BodyPoseFrame frame;
        frame.head_index = j.at("head_index").get<int>();
        frame.pelvis_index = j.at("pelvis_index").get<int>();
        seq.dt = j.at("dt").get<double>();
        for (const auto& jv : j.at("joints")) {
            const auto v = jv.get<std::vector<double>>();
            if (v.size() != 12) throw std::runtime_error("pose jsonl: joint entry must have 12 floats");
            Eigen::Matrix3d r;
            for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 3; ++b) r(a, b) = v[static_cast<size_t>(a * 3 + b)];
            frame.joints.emplace_back(r, Eigen::Vector3d(v[9], v[10], v[11]));
        }
        frame.validate();
        seq.frames.push_back(std::move(frame));
    }
    seq.validate();
    return seq;
}

void save_pose_sequence(const PoseSequence& seq, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    save_pose_sequence(seq, f);
}

PoseSequence load_pose_sequence(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    return load_pose_sequence(f);
}

}  // namespace egodiff
