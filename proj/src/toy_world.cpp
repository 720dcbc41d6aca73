#include "egodiff/toy_world.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>

namespace egodiff {

namespace fs = std::filesystem;

Image Image::zeros(long h, long w) {
    Image im;
    im.h = h;
    im.w = w;
    im.data = Eigen::ArrayXd::Zero(h * w * 3);
    return im;
}

BinaryMask BinaryMask::zeros(long h, long w) {
    BinaryMask m;
    m.h = h;
    m.w = w;
    m.data.assign(static_cast<size_t>(h * w), 0);
    return m;
}

long BinaryMask::count() const {
    long n = 0;
    for (uint8_t v : data) n += v;
    return n;
}

Eigen::Vector3d arm_color() { return {0.85, 0.08, 0.08}; }

void Scene::validate() const {
    if (!(xmax > xmin && ymax > ymin && wall_height > 0.0)) {
        throw std::invalid_argument("Scene: degenerate bounds");
    }
    for (const auto& lm : landmarks) {
        if ((lm.color - arm_color()).norm() < 0.3) {
            throw std::invalid_argument("Scene: landmark color too close to the reserved arm color");
        }
    }
}

Scene Scene::generate(uint64_t seed, int num_landmarks) {
    Scene s;
    s.seed = seed;
    s.floor_color = {0.32, 0.29, 0.24};
    s.ceiling_color = {0.82, 0.82, 0.78};
    s.wall_colors = {Eigen::Vector3d{0.22, 0.40, 0.68}, Eigen::Vector3d{0.68, 0.58, 0.22},
                     Eigen::Vector3d{0.30, 0.62, 0.36}, Eigen::Vector3d{0.58, 0.30, 0.60}};
    static const std::array<Eigen::Vector3d, 8> palette = {
        Eigen::Vector3d{0.95, 0.85, 0.15}, Eigen::Vector3d{0.15, 0.85, 0.85},
        Eigen::Vector3d{0.25, 0.25, 0.95}, Eigen::Vector3d{0.95, 0.45, 0.75},
        Eigen::Vector3d{0.55, 0.95, 0.25}, Eigen::Vector3d{0.95, 0.60, 0.10},
        Eigen::Vector3d{0.10, 0.55, 0.25}, Eigen::Vector3d{0.85, 0.90, 0.90}};
    std::mt19937_64 rng(mix_seed(seed, 77));
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (int i = 0; i < num_landmarks; ++i) {
        Landmark lm;
        lm.wall = static_cast<int>(rng() % 4);
        const double lateral_lo = (lm.wall % 2 == 0 ? s.xmin : s.ymin) + 1.0;
        const double lateral_hi = (lm.wall % 2 == 0 ? s.xmax : s.ymax) - 1.0;
        const double lat = lateral_lo + uni(rng) * (lateral_hi - lateral_lo);
        const double z = 0.8 + uni(rng) * 1.2;
        switch (lm.wall) {
            case 0: lm.center = {lat, s.ymax, z}; break;
            case 1: lm.center = {s.xmax, lat, z}; break;
            case 2: lm.center = {lat, s.ymin, z}; break;
            default: lm.center = {s.xmin, lat, z}; break;
        }
        lm.half_w = 0.25 + uni(rng) * 0.45;
        lm.half_h = 0.25 + uni(rng) * 0.4;
        lm.color = palette[i % palette.size()];
        s.landmarks.push_back(lm);
    }
    s.validate();
    return s;
}

RigidTransform camera_pose(double x, double y, double z, double yaw) {
    const double c = std::cos(yaw), sn = std::sin(yaw);
    Eigen::Matrix3d r;
    // columns: camera right, camera down, camera forward (world coords)
    r.col(0) = Eigen::Vector3d(sn, -c, 0.0);
    r.col(1) = Eigen::Vector3d(0.0, 0.0, -1.0);
    r.col(2) = Eigen::Vector3d(c, sn, 0.0);
    return RigidTransform(r, Eigen::Vector3d(x, y, z));
}

void camera_pose_params(const RigidTransform& t, double& x, double& y, double& z, double& yaw) {
    x = t.translation()[0];
    y = t.translation()[1];
    z = t.translation()[2];
    const Eigen::Vector3d fwd = t.rotation().col(2);
    yaw = std::atan2(fwd[1], fwd[0]);
}

// ---- trajectory ----

std::vector<AgentState> sample_trajectory(const Scene& scene, long length, uint64_t seed) {
    scene.validate();
    if (length < 2) throw std::invalid_argument("sample_trajectory: length must be >= 2");
    const double dt = 1.0 / 16.0;
    std::mt19937_64 rng(mix_seed(seed, 11));
    std::uniform_real_distribution<double> uni(0.0, 1.0);

    const double margin = 0.8;
    double x = scene.xmin + margin + uni(rng) * (scene.xmax - scene.xmin - 2 * margin);
    double y = scene.ymin + margin + uni(rng) * (scene.ymax - scene.ymin - 2 * margin);
    double yaw = uni(rng) * 2.0 * M_PI - M_PI;
    const double zphase = uni(rng) * 2.0 * M_PI;

    // piecewise-linear targets for turn rate and speed, cosine-eased gestures
    // turn targets up to +-4 rad/s keep brisk head turns (~0.25 rad/frame at
    // the 16 Hz frame rate) inside the training distribution
    const long seg = 12;
    double turn0 = 0.0, turn1 = (uni(rng) - 0.5) * 8.0;
    double speed0 = 0.3, speed1 = 0.2 + uni(rng) * 0.7;

    static const std::array<ArmPose, 4> gestures = {
        ArmPose{0.05, 0.10},   // rest (arm out of view)
        ArmPose{1.35, 0.55},   // raise
        ArmPose{1.00, 0.15},   // extend
        ArmPose{1.20, 1.15}};  // cross
    // gestures follow locomotion, so head motion carries arm information:
    // the left arm tracks the turn-rate target, the right arm the speed target
    auto gesture_for_turn = [&] {
        const long gi = std::clamp(static_cast<long>((turn1 / 8.0 + 0.5) * 4.0), 0L, 3L);
        return gestures[static_cast<size_t>(gi)];
    };
    auto gesture_for_speed = [&] {
        const long gi = std::clamp(static_cast<long>((speed1 - 0.2) / 0.7 * 4.0), 0L, 3L);
        return gestures[static_cast<size_t>(gi)];
    };
    const long gseg = 14;
    ArmPose l0 = gestures[0], l1 = gesture_for_turn();
    ArmPose r0 = gestures[0], r1 = gesture_for_speed();

    std::vector<AgentState> out;
    out.reserve(static_cast<size_t>(length));
    for (long i = 0; i < length; ++i) {
        const double su = static_cast<double>(i % seg) / static_cast<double>(seg);
        const double turn = turn0 + su * (turn1 - turn0);
        const double speed = speed0 + su * (speed1 - speed0);
        if (i > 0 && i % seg == 0) {
            turn0 = turn1;
            turn1 = (uni(rng) - 0.5) * 8.0;
            speed0 = speed1;
            speed1 = 0.2 + uni(rng) * 0.7;
        }
        yaw += turn * dt;
        double dx = std::cos(yaw) * speed * dt;
        double dy = std::sin(yaw) * speed * dt;
        const double step = std::hypot(dx, dy);
        if (step > 0.15) {
            dx *= 0.15 / step;
            dy *= 0.15 / step;
        }
        x += dx;
        y += dy;
        // steer back toward the room center near walls
        if (x < scene.xmin + margin || x > scene.xmax - margin || y < scene.ymin + margin ||
            y > scene.ymax - margin) {
            x = std::min(std::max(x, scene.xmin + 0.3), scene.xmax - 0.3);
            y = std::min(std::max(y, scene.ymin + 0.3), scene.ymax - 0.3);
            const double cx = 0.5 * (scene.xmin + scene.xmax), cy = 0.5 * (scene.ymin + scene.ymax);
            const double target = std::atan2(cy - y, cx - x);
            double diff = std::remainder(target - yaw, 2.0 * M_PI);
            yaw += 0.25 * diff;
        }
        const double z = 1.6 + 0.06 * std::sin(2.0 * M_PI * 0.4 * static_cast<double>(i) * dt + zphase);

        const double gu = 0.5 - 0.5 * std::cos(M_PI * static_cast<double>(i % gseg) / static_cast<double>(gseg));
        AgentState st;
        st.left.shoulder_pitch = l0.shoulder_pitch + gu * (l1.shoulder_pitch - l0.shoulder_pitch);
        st.left.elbow_bend = l0.elbow_bend + gu * (l1.elbow_bend - l0.elbow_bend);
        st.right.shoulder_pitch = r0.shoulder_pitch + gu * (r1.shoulder_pitch - r0.shoulder_pitch);
        st.right.elbow_bend = r0.elbow_bend + gu * (r1.elbow_bend - r0.elbow_bend);
        if (i > 0 && i % gseg == 0) {
            l0 = l1;
            l1 = gesture_for_turn();
            r0 = r1;
            r1 = gesture_for_speed();
        }
        st.head = camera_pose(x, y, z, yaw);
        const double body_yaw = yaw;
        st.pelvis = RigidTransform(
            Eigen::AngleAxisd(body_yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix(),
            Eigen::Vector3d(x, y, z - 0.62));
        out.push_back(st);
    }
    return out;
}

// ---- skeleton ----

const std::vector<std::string>& joint_names() {
    static const std::vector<std::string> names = {
        "head",      "pelvis",   "l_shoulder", "l_elbow",  "l_wrist", "r_shoulder",
        "r_elbow",   "r_wrist",  "spine1",     "spine2",   "spine3",  "neck",
        "l_collar",  "r_collar", "l_hip",      "l_knee",   "l_ankle", "l_toe",
        "r_hip",     "r_knee",   "r_ankle",    "r_toe",    "chest"};
    return names;
}

namespace {

constexpr double kUpperArmLen = 0.30;
constexpr double kForearmLen = 0.28;
constexpr double kArmRadius = 0.05;

Eigen::Vector3d arm_dir_local(double pitch) { return {std::sin(pitch), 0.0, -std::cos(pitch)}; }

void arm_chain(const RigidTransform& pelvis, double side, const ArmPose& arm,
               Eigen::Vector3d& shoulder, Eigen::Vector3d& elbow, Eigen::Vector3d& wrist) {
    shoulder = pelvis.apply({0.05, side * 0.22, 0.45});
    elbow = shoulder + pelvis.rotation() * (kUpperArmLen * arm_dir_local(arm.shoulder_pitch));
    wrist = elbow + pelvis.rotation() * (kForearmLen * arm_dir_local(arm.shoulder_pitch + arm.elbow_bend));
}

}  // namespace

BodyPoseFrame skeleton_to_body_pose(const AgentState& state) {
    BodyPoseFrame frame;
    frame.head_index = 0;
    frame.pelvis_index = 1;
    frame.joints.resize(static_cast<size_t>(kNumJoints));
    frame.joints[0] = state.head;
    frame.joints[1] = state.pelvis;

    Eigen::Vector3d sh, el, wr;
    arm_chain(state.pelvis, +1.0, state.left, sh, el, wr);
    frame.joints[2] = RigidTransform(state.pelvis.rotation(), sh);
    frame.joints[3] = RigidTransform(state.pelvis.rotation(), el);
    frame.joints[4] = RigidTransform(state.pelvis.rotation(), wr);
    arm_chain(state.pelvis, -1.0, state.right, sh, el, wr);
    frame.joints[5] = RigidTransform(state.pelvis.rotation(), sh);
    frame.joints[6] = RigidTransform(state.pelvis.rotation(), el);
    frame.joints[7] = RigidTransform(state.pelvis.rotation(), wr);

    // remaining joints ride rigidly with the pelvis
    static const std::array<Eigen::Vector3d, 15> offsets = {
        Eigen::Vector3d{0.00, 0.00, 0.12},  Eigen::Vector3d{0.00, 0.00, 0.24},
        Eigen::Vector3d{0.00, 0.00, 0.36},  Eigen::Vector3d{0.00, 0.00, 0.52},
        Eigen::Vector3d{0.02, 0.10, 0.48},  Eigen::Vector3d{0.02, -0.10, 0.48},
        Eigen::Vector3d{0.00, 0.10, -0.05}, Eigen::Vector3d{0.00, 0.10, -0.50},
        Eigen::Vector3d{0.00, 0.10, -0.95}, Eigen::Vector3d{0.12, 0.10, -0.98},
        Eigen::Vector3d{0.00, -0.10, -0.05}, Eigen::Vector3d{0.00, -0.10, -0.50},
        Eigen::Vector3d{0.00, -0.10, -0.95}, Eigen::Vector3d{0.12, -0.10, -0.98},
        Eigen::Vector3d{0.00, 0.00, 0.42}};
    for (size_t i = 0; i < offsets.size(); ++i) {
        frame.joints[8 + i] = RigidTransform(state.pelvis.rotation(), state.pelvis.apply(offsets[i]));
    }
    frame.validate();
    return frame;
}

// ---- renderer ----

namespace {

struct Hit {
    double t = std::numeric_limits<double>::infinity();
    Eigen::Vector3d color = Eigen::Vector3d::Zero();
    bool arm = false;
};

void hit_update(Hit& best, double t, const Eigen::Vector3d& color, bool arm) {
    if (t > 1e-6 && t < best.t) {
        best.t = t;
        best.color = color;
        best.arm = arm;
    }
}

double checker_shade(double u, double v, double cell) {
    const long a = static_cast<long>(std::floor(u / cell));
    const long b = static_cast<long>(std::floor(v / cell));
    return ((a + b) & 1) ? 0.82 : 1.0;
}

struct ArmSegment {
    Eigen::Vector3d a, b;
};

// smallest positive t with |ray(t) - segment| = r
double ray_capsule(const Eigen::Vector3d& o, const Eigen::Vector3d& d, const ArmSegment& s, double r) {
    const Eigen::Vector3d ab = s.b - s.a;
    const double ab2 = ab.squaredNorm();
    double best = std::numeric_limits<double>::infinity();
    // infinite cylinder around the axis
    if (ab2 > 1e-12) {
        const Eigen::Vector3d ao = o - s.a;
        const Eigen::Vector3d dxa = d - (d.dot(ab) / ab2) * ab;
        const Eigen::Vector3d oxa = ao - (ao.dot(ab) / ab2) * ab;
        const double qa = dxa.squaredNorm();
        const double qb = 2.0 * dxa.dot(oxa);
        const double qc = oxa.squaredNorm() - r * r;
        const double disc = qb * qb - 4.0 * qa * qc;
        if (qa > 1e-12 && disc >= 0.0) {
            const double t = (-qb - std::sqrt(disc)) / (2.0 * qa);
            if (t > 1e-6) {
                const double proj = (o + t * d - s.a).dot(ab) / ab2;
                if (proj >= 0.0 && proj <= 1.0) best = t;
            }
        }
    }
    // end spheres
    for (const Eigen::Vector3d& c : {s.a, s.b}) {
        const Eigen::Vector3d oc = o - c;
        const double qb = 2.0 * d.dot(oc);
        const double qc = oc.squaredNorm() - r * r;
        const double disc = qb * qb - 4.0 * qc;
        if (disc >= 0.0) {
            const double t = (-qb - std::sqrt(disc)) / 2.0;
            if (t > 1e-6) best = std::min(best, t);
        }
    }
    return best;
}

Hit cast_ray(const Scene& scene, const Eigen::Vector3d& o, const Eigen::Vector3d& d,
             const std::vector<ArmSegment>& arms) {
    Hit best;
    // floor / ceiling with checker shading
    if (d[2] < -1e-9) {
        const double t = -o[2] / d[2];
        const Eigen::Vector3d p = o + t * d;
        hit_update(best, t, scene.floor_color * checker_shade(p[0], p[1], 0.5), false);
    } else if (d[2] > 1e-9) {
        const double t = (scene.wall_height - o[2]) / d[2];
        hit_update(best, t, scene.ceiling_color, false);
    }
    // walls, striped along the lateral coordinate
    struct WallDef {
        int axis;      // 0 = plane of constant x, 1 = plane of constant y
        double value;
        int color_index;
    };
    const WallDef walls[4] = {{1, scene.ymax, 0}, {0, scene.xmax, 1}, {1, scene.ymin, 2}, {0, scene.xmin, 3}};
    for (const auto& wdef : walls) {
        const double dv = wdef.axis == 0 ? d[0] : d[1];
        if (std::abs(dv) < 1e-9) continue;
        const double ov = wdef.axis == 0 ? o[0] : o[1];
        const double t = (wdef.value - ov) / dv;
        if (t <= 1e-6) continue;
        const Eigen::Vector3d p = o + t * d;
        if (p[2] < 0.0 || p[2] > scene.wall_height) continue;
        const double lat = wdef.axis == 0 ? p[1] : p[0];
        const double lo = wdef.axis == 0 ? scene.ymin : scene.xmin;
        const double hi = wdef.axis == 0 ? scene.ymax : scene.xmax;
        if (lat < lo - 1e-9 || lat > hi + 1e-9) continue;
        const double shade = checker_shade(lat, p[2], 1.0);
        hit_update(best, t, scene.wall_colors[static_cast<size_t>(wdef.color_index)] * shade, false);
    }
    // landmark quads, slightly in front of their wall
    for (const auto& lm : scene.landmarks) {
        const int axis = (lm.wall % 2 == 0) ? 1 : 0;  // wall 0/2 are constant-y
        const double inset = (lm.wall == 0 || lm.wall == 1) ? -1e-3 : 1e-3;
        const double plane = (axis == 0 ? lm.center[0] : lm.center[1]) + inset;
        const double dv = axis == 0 ? d[0] : d[1];
        if (std::abs(dv) < 1e-9) continue;
        const double ov = axis == 0 ? o[0] : o[1];
        const double t = (plane - ov) / dv;
        if (t <= 1e-6) continue;
        const Eigen::Vector3d p = o + t * d;
        const double lat = axis == 0 ? p[1] : p[0];
        const double lat_c = axis == 0 ? lm.center[1] : lm.center[0];
        if (std::abs(lat - lat_c) > lm.half_w || std::abs(p[2] - lm.center[2]) > lm.half_h) continue;
        hit_update(best, t, lm.color, false);
    }
    // arms
    for (const auto& seg : arms) {
        const double t = ray_capsule(o, d, seg, kArmRadius);
        if (std::isfinite(t)) hit_update(best, t, arm_color(), true);
    }
    return best;
}

std::vector<ArmSegment> arm_segments(const BodyPoseFrame& pose) {
    auto pos = [&](int j) { return pose.joints[static_cast<size_t>(j)].translation(); };
    return {{pos(2), pos(3)}, {pos(3), pos(4)}, {pos(5), pos(6)}, {pos(6), pos(7)}};
}

std::pair<Image, BinaryMask> render_impl(const Scene& scene, const RigidTransform& cam,
                                         const std::vector<ArmSegment>& arms, long width, long height) {
    if (width < 16 || height < 16) throw std::invalid_argument("render_frame: resolution must be >= 16x16");
    Image im = Image::zeros(height, width);
    BinaryMask mask = BinaryMask::zeros(height, width);
    const double f = static_cast<double>(width) / 2.0;  // 90 degree horizontal FOV
    const Eigen::Vector3d o = cam.translation();
    for (long yp = 0; yp < height; ++yp) {
        for (long xp = 0; xp < width; ++xp) {
            Eigen::Vector3d dc((static_cast<double>(xp) + 0.5 - static_cast<double>(width) / 2.0) / f,
                               (static_cast<double>(yp) + 0.5 - static_cast<double>(height) / 2.0) / f, 1.0);
            const Eigen::Vector3d d = (cam.rotation() * dc).normalized();
            const Hit hit = cast_ray(scene, o, d, arms);
            if (std::isfinite(hit.t)) {
                for (int c = 0; c < 3; ++c) im.at(yp, xp, c) = hit.color[c];
                if (hit.arm) mask.at(yp, xp) = 1;
            }
        }
    }
    // quantize to f32 so frames.bin storage and the tokenizer's affine map
    // are both exactly lossless
    im.data = im.data.cast<float>().cast<double>();
    return {std::move(im), std::move(mask)};
}

}  // namespace

std::pair<Image, BinaryMask> render_frame(const Scene& scene, const BodyPoseFrame& pose,
                                          long width, long height) {
    return render_impl(scene, pose.head(), arm_segments(pose), width, height);
}

std::pair<Image, BinaryMask> render_frame(const Scene& scene, const AgentState& state,
                                          long width, long height) {
    return render_frame(scene, skeleton_to_body_pose(state), width, height);
}

Image render_scene_only(const Scene& scene, const RigidTransform& camera, long width, long height) {
    return render_impl(scene, camera, {}, width, height).first;
}

// ---- tokenizer ----

namespace {
constexpr long kSpatial = 4;
constexpr long kTemporal = 4;
constexpr double kShift = 0.5;
constexpr double kScale = 0.5;
}  // namespace

long latent_frames_for(long raw_frames) {
    if (raw_frames < 1 || (raw_frames - 1) % kTemporal != 0) {
        throw std::invalid_argument("tokenize: frame count must be 1 mod 4");
    }
    return 1 + (raw_frames - 1) / kTemporal;
}

long context_latents_for(long past_frames) { return latent_frames_for(past_frames); }

Eigen::ArrayXd space_to_depth(const Image& frame) {
    if (frame.h % kSpatial != 0 || frame.w % kSpatial != 0) {
        throw std::invalid_argument("space_to_depth: resolution must be divisible by 4");
    }
    const long hl = frame.h / kSpatial, wl = frame.w / kSpatial;
    Eigen::ArrayXd out(48 * hl * wl);  // [48][hl][wl]
    for (int c = 0; c < 3; ++c) {
        for (long dy = 0; dy < kSpatial; ++dy) {
            for (long dx = 0; dx < kSpatial; ++dx) {
                const long ch = c * 16 + dy * 4 + dx;
                for (long y = 0; y < hl; ++y) {
                    for (long x = 0; x < wl; ++x) {
                        out[(ch * hl + y) * wl + x] = frame.at(y * kSpatial + dy, x * kSpatial + dx, c);
                    }
                }
            }
        }
    }
    return out;
}

LatentVideo tokenize(const std::vector<Image>& frames, long context_latent_frames) {
    const long t_raw = static_cast<long>(frames.size());
    const long t_lat = latent_frames_for(t_raw);
    const long h = frames.front().h, w = frames.front().w;
    const long hl = h / kSpatial, wl = w / kSpatial;
    const long per_frame = 48 * hl * wl;
    LatentVideo lat = LatentVideo::zeros(t_lat, 48 * kTemporal, hl, wl, context_latent_frames);
    for (long tl = 0; tl < t_lat; ++tl) {
        for (long g = 0; g < kTemporal; ++g) {
            // latent frame 0 replicates the lone first frame into all groups
            const long src = tl == 0 ? 0 : 1 + (tl - 1) * kTemporal + g;
            const Eigen::ArrayXd sd = space_to_depth(frames[static_cast<size_t>(src)]);
            lat.data.segment(tl * kTemporal * per_frame + g * per_frame, per_frame) = (sd - kShift) / kScale;
        }
    }
    return lat;
}

std::vector<Image> detokenize(const LatentVideo& latents) {
    const long hl = latents.h, wl = latents.w;
    if (latents.c != 48 * kTemporal) throw std::invalid_argument("detokenize: unexpected channel count");
    const long per_frame = 48 * hl * wl;
    const long t_raw = 1 + (latents.t - 1) * kTemporal;
    std::vector<Image> frames;
    frames.reserve(static_cast<size_t>(t_raw));
    auto depth_to_space = [&](const Eigen::ArrayXd& sd) {
        Image im = Image::zeros(hl * kSpatial, wl * kSpatial);
        for (int c = 0; c < 3; ++c) {
            for (long dy = 0; dy < kSpatial; ++dy) {
                for (long dx = 0; dx < kSpatial; ++dx) {
                    const long ch = c * 16 + dy * 4 + dx;
                    for (long y = 0; y < hl; ++y) {
                        for (long x = 0; x < wl; ++x) {
                            im.at(y * kSpatial + dy, x * kSpatial + dx, c) = sd[(ch * hl + y) * wl + x];
                        }
                    }
                }
            }
        }
        return im;
    };
    for (long t = 0; t < t_raw; ++t) {
        long tl, g;
        if (t == 0) {
            tl = 0;
            g = 0;
        } else {
            tl = 1 + (t - 1) / kTemporal;
            g = (t - 1) % kTemporal;
        }
        Eigen::ArrayXd sd =
            latents.data.segment(tl * kTemporal * per_frame + g * per_frame, per_frame) * kScale + kShift;
        frames.push_back(depth_to_space(sd));
    }
    return frames;
}

// ---- dataset ----

void DatasetConfig::validate() const {
    if (num_trajectories < 1 || clips_per_trajectory < 1) {
        throw std::invalid_argument("DatasetConfig: need at least one trajectory and clip");
    }
    if ((clip_length - 1) % 4 != 0 || (past_frames - 1) % 4 != 0 || past_frames >= clip_length) {
        throw std::invalid_argument("DatasetConfig: clip_length and past_frames must be 1 mod 4, past < clip");
    }
    if (width % 4 != 0 || height % 4 != 0 || width < 16 || height < 16) {
        throw std::invalid_argument("DatasetConfig: resolution must be >= 16 and divisible by 4");
    }
    if (train_fraction < 0 || val_fraction < 0 || train_fraction + val_fraction > 1.0) {
        throw std::invalid_argument("DatasetConfig: bad split fractions");
    }
}

std::string DatasetConfig::to_json() const {
    nlohmann::json j;
    j["num_trajectories"] = num_trajectories;
    j["clips_per_trajectory"] = clips_per_trajectory;
    j["clip_length"] = clip_length;
    j["past_frames"] = past_frames;
    j["width"] = width;
    j["height"] = height;
    j["landmarks"] = landmarks;
    j["shared_scene"] = shared_scene;
    j["dt"] = dt;
    j["train_fraction"] = train_fraction;
    j["val_fraction"] = val_fraction;
    return j.dump();
}

DatasetConfig DatasetConfig::from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    DatasetConfig c;
    c.num_trajectories = j.at("num_trajectories").get<long>();
    c.clips_per_trajectory = j.at("clips_per_trajectory").get<long>();
    c.clip_length = j.at("clip_length").get<long>();
    c.past_frames = j.at("past_frames").get<long>();
    c.width = j.at("width").get<long>();
    c.height = j.at("height").get<long>();
    c.landmarks = j.at("landmarks").get<int>();
    c.shared_scene = j.at("shared_scene").get<bool>();
    c.dt = j.at("dt").get<double>();
    c.train_fraction = j.at("train_fraction").get<double>();
    c.val_fraction = j.at("val_fraction").get<double>();
    c.validate();
    return c;
}

void write_frames_bin(const std::vector<Image>& frames, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    for (const auto& im : frames) {
        std::vector<float> buf(static_cast<size_t>(im.data.size()));
        for (long i = 0; i < im.data.size(); ++i) buf[static_cast<size_t>(i)] = static_cast<float>(im.data[i]);
        f.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
}

std::vector<Image> read_frames_bin(const std::string& path, long t, long h, long w) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path);
    std::vector<Image> frames;
    std::vector<float> buf(static_cast<size_t>(h * w * 3));
    for (long i = 0; i < t; ++i) {
        f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!f) throw std::runtime_error("frames.bin truncated: " + path);
        Image im = Image::zeros(h, w);
        for (long k = 0; k < im.data.size(); ++k) im.data[k] = static_cast<double>(buf[static_cast<size_t>(k)]);
        frames.push_back(std::move(im));
    }
    return frames;
}

namespace {

void write_masks_bin(const std::vector<BinaryMask>& masks, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    for (const auto& m : masks) {
        f.write(reinterpret_cast<const char*>(m.data.data()), static_cast<std::streamsize>(m.data.size()));
    }
}

std::vector<BinaryMask> read_masks_bin(const std::string& path, long t, long h, long w) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path);
    std::vector<BinaryMask> masks;
    for (long i = 0; i < t; ++i) {
        BinaryMask m = BinaryMask::zeros(h, w);
        f.read(reinterpret_cast<char*>(m.data.data()), static_cast<std::streamsize>(m.data.size()));
        if (!f) throw std::runtime_error("masks.bin truncated: " + path);
        masks.push_back(std::move(m));
    }
    return masks;
}

uint64_t scene_seed_for(uint64_t dataset_seed, const DatasetConfig& cfg, long trajectory) {
    return cfg.shared_scene ? mix_seed(dataset_seed, 1000) : mix_seed(dataset_seed, 1000 + trajectory);
}

}  // namespace

void generate_dataset(const DatasetConfig& config, const std::string& out_dir, uint64_t seed) {
    config.validate();
    fs::create_directories(fs::path(out_dir) / "clips");
    nlohmann::json manifest;
    manifest["format_version"] = 1;
    manifest["seed"] = seed;
    manifest["config"] = nlohmann::json::parse(config.to_json());
    auto& clips = manifest["clips"];

    long clip_counter = 0;
    for (long traj = 0; traj < config.num_trajectories; ++traj) {
        const Scene scene = Scene::generate(scene_seed_for(seed, config, traj), config.landmarks);
        const uint64_t traj_seed = mix_seed(seed, 2000 + traj);
        const long total = config.clips_per_trajectory * config.clip_length;
        const auto states = sample_trajectory(scene, total, traj_seed);
        const double tf = config.train_fraction, vf = config.val_fraction;
        const double pos = config.num_trajectories == 1
                               ? 0.0
                               : static_cast<double>(traj) / static_cast<double>(config.num_trajectories);
        const std::string split = pos < tf ? "train" : (pos < tf + vf ? "val" : "test");
        for (long k = 0; k < config.clips_per_trajectory; ++k) {
            char idbuf[32];
            std::snprintf(idbuf, sizeof(idbuf), "clip_%04ld", clip_counter);
            const std::string rel = std::string("clips/") + idbuf;
            const fs::path dir = fs::path(out_dir) / rel;
            fs::create_directories(dir);

            std::vector<Image> frames;
            std::vector<BinaryMask> masks;
            PoseSequence poses;
            poses.dt = config.dt;
            for (long i = 0; i < config.clip_length; ++i) {
                const AgentState& st = states[static_cast<size_t>(k * config.clip_length + i)];
                const BodyPoseFrame pose = skeleton_to_body_pose(st);
                auto [im, mask] = render_frame(scene, pose, config.width, config.height);
                frames.push_back(std::move(im));
                masks.push_back(std::move(mask));
                poses.frames.push_back(pose);
            }
            write_frames_bin(frames, (dir / "frames.bin").string());
            write_masks_bin(masks, (dir / "masks.bin").string());
            save_pose_sequence(poses, (dir / "poses.jsonl").string());

            clips.push_back({{"id", idbuf},
                             {"trajectory", traj},
                             {"split", split},
                             {"seed", traj_seed},
                             {"path", rel}});
            ++clip_counter;
        }
    }
    std::ofstream mf(fs::path(out_dir) / "manifest.json", std::ios::binary);
    if (!mf) throw std::runtime_error("cannot write manifest in " + out_dir);
    mf << manifest.dump(2) << '\n';
}

DatasetManifest load_manifest(const std::string& dataset_dir) {
    std::ifstream mf(fs::path(dataset_dir) / "manifest.json");
    if (!mf) throw std::runtime_error("missing manifest.json in " + dataset_dir);
    nlohmann::json j;
    mf >> j;
    DatasetManifest m;
    m.config = DatasetConfig::from_json(j.at("config").dump());
    m.seed = j.at("seed").get<uint64_t>();
    for (const auto& jc : j.at("clips")) {
        ClipInfo info;
        info.id = jc.at("id").get<std::string>();
        info.trajectory = jc.at("trajectory").get<long>();
        info.split = jc.at("split").get<std::string>();
        info.seed = jc.at("seed").get<uint64_t>();
        info.path = jc.at("path").get<std::string>();
        m.clips.push_back(std::move(info));
    }
    return m;
}

std::vector<ClipInfo> DatasetManifest::in_split(const std::string& split) const {
    std::vector<ClipInfo> out;
    for (const auto& c : clips) {
        if (c.split == split) out.push_back(c);
    }
    return out;
}

ClipRecord load_clip(const std::string& dataset_dir, const ClipInfo& info) {
    const fs::path dir = fs::path(dataset_dir) / info.path;
    const DatasetManifest m = load_manifest(dataset_dir);
    ClipRecord rec;
    rec.frames = read_frames_bin((dir / "frames.bin").string(), m.config.clip_length, m.config.height,
                                 m.config.width);
    rec.masks = read_masks_bin((dir / "masks.bin").string(), m.config.clip_length, m.config.height,
                               m.config.width);
    rec.poses = load_pose_sequence((dir / "poses.jsonl").string());
    rec.split_index = m.config.past_frames;
    return rec;
}

Scene dataset_scene(const DatasetManifest& manifest, long trajectory) {
    return Scene::generate(scene_seed_for(manifest.seed, manifest.config, trajectory),
                           manifest.config.landmarks);
}

}  // namespace egodiff
