#include "egodiff/eval.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <limits>
#include <fstream>
#include <stdexcept>

namespace egodiff {

namespace {

constexpr int kWin = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kC1 = 1e-4;  // (0.01)^2, L = 1
constexpr double kC2 = 9e-4;  // (0.03)^2

const Eigen::ArrayXd& ssim_kernel() {
    static const Eigen::ArrayXd k = [] {
        Eigen::ArrayXd v(kWin);
        for (int i = 0; i < kWin; ++i) {
            const double d = static_cast<double>(i - kWin / 2);
            v[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        }
        return v;
    }();
    return k;
}

// Gaussian-weighted local mean of per-channel image planes; truncated
// windows at the border are renormalized.
Eigen::ArrayXXd local_mean(const Eigen::ArrayXXd& plane) {
    const Eigen::ArrayXd& k = ssim_kernel();
    const long h = plane.rows(), w = plane.cols();
    Eigen::ArrayXXd tmp(h, w), out(h, w);
    for (long y = 0; y < h; ++y) {
        for (long x = 0; x < w; ++x) {
            double s = 0.0, wsum = 0.0;
            for (int i = 0; i < kWin; ++i) {
                const long xx = x + i - kWin / 2;
                if (xx < 0 || xx >= w) continue;
                s += k[i] * plane(y, xx);
                wsum += k[i];
            }
            tmp(y, x) = s / wsum;
        }
    }
    for (long y = 0; y < h; ++y) {
        for (long x = 0; x < w; ++x) {
            double s = 0.0, wsum = 0.0;
            for (int i = 0; i < kWin; ++i) {
                const long yy = y + i - kWin / 2;
                if (yy < 0 || yy >= h) continue;
                s += k[i] * tmp(yy, x);
                wsum += k[i];
            }
            out(y, x) = s / wsum;
        }
    }
    return out;
}

Eigen::ArrayXXd channel_plane(const Image& im, int c) {
    Eigen::ArrayXXd p(im.h, im.w);
    for (long y = 0; y < im.h; ++y) {
        for (long x = 0; x < im.w; ++x) p(y, x) = im.at(y, x, c);
    }
    return p;
}

}  // namespace

double ssim(const Image& a, const Image& b) {
    if (a.h != b.h || a.w != b.w) throw std::invalid_argument("ssim: shape mismatch");
    double total = 0.0;
    for (int c = 0; c < 3; ++c) {
        const Eigen::ArrayXXd pa = channel_plane(a, c), pb = channel_plane(b, c);
        const Eigen::ArrayXXd mua = local_mean(pa), mub = local_mean(pb);
        const Eigen::ArrayXXd va = local_mean(pa * pa) - mua * mua;
        const Eigen::ArrayXXd vb = local_mean(pb * pb) - mub * mub;
        const Eigen::ArrayXXd cov = local_mean(pa * pb) - mua * mub;
        const Eigen::ArrayXXd num = (2.0 * mua * mub + kC1) * (2.0 * cov + kC2);
        const Eigen::ArrayXXd den = (mua.square() + mub.square() + kC1) * (va + vb + kC2);
        total += (num / den).mean();
    }
    return 100.0 * total / 3.0;
}

namespace {

constexpr double kArmKeyDist = 0.15;
constexpr double kDivergenceThreshold = 0.02;  // mean squared RGB distance

double photometric_residual(const Image& obs, const BinaryMask& arm, const Scene& scene,
                            double x, double y, double z, double yaw) {
    const Image ren = render_scene_only(scene, camera_pose(x, y, z, yaw), obs.w, obs.h);
    double sum = 0.0;
    long n = 0;
    for (long py = 0; py < obs.h; ++py) {
        for (long px = 0; px < obs.w; ++px) {
            if (arm.at(py, px)) continue;
            sum += (obs.pixel(py, px) - ren.pixel(py, px)).squaredNorm();
            ++n;
        }
    }
    if (n == 0) return std::numeric_limits<double>::infinity();
    return sum / static_cast<double>(n);
}

}  // namespace

std::vector<TrackedPose> estimate_head_trajectory(const std::vector<Image>& frames,
                                                  const Scene& scene, const RigidTransform& init) {
    std::vector<TrackedPose> out;
    double x, y, z, yaw;
    camera_pose_params(init, x, y, z, yaw);
    double vx = 0, vy = 0, vz = 0, vyaw = 0;
    for (const Image& obs : frames) {
        const BinaryMask arm = arm_mask_from_frame(obs);
        // seed from whichever of hold / constant-velocity prediction fits
        // better; fast head turns put the previous pose far off
        double best = photometric_residual(obs, arm, scene, x, y, z, yaw);
        const double px = x + vx, py = y + vy, pyaw = yaw + vyaw;
        const double pz = std::min(std::max(z + vz, 1.2), 2.0);
        const double pred = photometric_residual(obs, arm, scene, px, py, pz, pyaw);
        const double x_prev = x, y_prev = y, z_prev = z, yaw_prev = yaw;
        if (pred < best) {
            best = pred;
            x = px;
            y = py;
            z = pz;
            yaw = pyaw;
        }
        auto run_ladder = [&](const std::vector<double>& levels) {
        for (double step : levels) {
            for (int sweep = 0; sweep < 16; ++sweep) {
                // combined moves over (x, y, yaw) so diagonal error valleys
                // do not trap the descent; z moves on its own axis
                bool improved = false;
                double bx = x, by = y, bz = z, byaw = yaw;
                for (int dx = -1; dx <= 1; ++dx) {
                    for (int dy = -1; dy <= 1; ++dy) {
                        for (int dw = -1; dw <= 1; ++dw) {
                            if (dx == 0 && dy == 0 && dw == 0) continue;
                            const double r = photometric_residual(obs, arm, scene, x + dx * step,
                                                                  y + dy * step, z, yaw + dw * step);
                            if (r + 1e-15 < best) {
                                best = r;
                                bx = x + dx * step;
                                by = y + dy * step;
                                byaw = yaw + dw * step;
                                improved = true;
                            }
                        }
                    }
                }
                for (int dz = -1; dz <= 1; dz += 2) {
                    const double cz = std::min(std::max(z + dz * step, 1.2), 2.0);
                    const double r = photometric_residual(obs, arm, scene, x, y, cz, yaw);
                    if (r + 1e-15 < best) {
                        best = r;
                        bx = x;
                        by = y;
                        byaw = yaw;
                        bz = cz;
                        improved = true;
                    }
                }
                x = bx;
                y = by;
                z = bz;
                yaw = byaw;
                if (!improved) break;
            }
        }
        };
        // two coarse-to-fine passes per ladder: the second pass escapes
        // shallow minima the first one settles into
        static const std::vector<double> fine = {0.02, 0.01, 0.005, 0.0025, 0.00125,
                                                 0.02, 0.01, 0.005, 0.0025, 0.00125};
        static const std::vector<double> coarse = {0.16, 0.08, 0.04, 0.02, 0.01, 0.005, 0.0025, 0.00125,
                                                   0.16, 0.08, 0.04, 0.02, 0.01, 0.005, 0.0025, 0.00125};
        // fine-only first: coarse moves from a near-exact seed can jump the
        // narrow true basin into an aliased valley of the point-sampled render
        const double sx = x, sy = y, sz = z, syaw = yaw, seed_res = best;
        run_ladder(fine);
        if (best > 1e-9) {
            double fx = x, fy = y, fz = z, fyaw = yaw, fbest = best;
            // dense grid around the seed, then local refinement: coordinate
            // descent alone strands in aliased valleys of the staircase
            // objective 10-15 cm from the true pose
            double gx = sx, gy = sy, gyaw = syaw, gbest = seed_res;
            for (double dx = -0.12; dx <= 0.121; dx += 0.03) {
                for (double dy = -0.12; dy <= 0.121; dy += 0.03) {
                    for (double dw = -0.35; dw <= 0.351; dw += 0.025) {
                        const double r =
                            photometric_residual(obs, arm, scene, sx + dx, sy + dy, sz, syaw + dw);
                        if (r + 1e-15 < gbest) {
                            gbest = r;
                            gx = sx + dx;
                            gy = sy + dy;
                            gyaw = syaw + dw;
                        }
                    }
                }
            }
            x = gx;
            y = gy;
            z = sz;
            yaw = gyaw;
            best = gbest;
            run_ladder(fine);
            // near-exact fits get a second, finer grid: ground-truth frames
            // have an exact-zero pose that the descent alone rarely pins
            if (best > 1e-9 && best < 1e-3) {
                double hx = x, hy = y, hyaw = yaw, hbest = best;
                for (double dx = -0.09; dx <= 0.0901; dx += 0.0075) {
                    for (double dy = -0.09; dy <= 0.0901; dy += 0.0075) {
                        for (double dw = -0.03; dw <= 0.0301; dw += 0.0075) {
                            const double r =
                                photometric_residual(obs, arm, scene, hx + dx, hy + dy, z, hyaw + dw);
                            if (r + 1e-15 < best) {
                                best = r;
                                x = hx + dx;
                                y = hy + dy;
                                yaw = hyaw + dw;
                            }
                        }
                    }
                }
                if (best < hbest) {
                    static const std::vector<double> polish = {0.005, 0.0025, 0.00125,
                                                               0.005, 0.0025, 0.00125};
                    run_ladder(polish);
                }
            }
            if (best < fbest) {
                fx = x;
                fy = y;
                fz = z;
                fyaw = yaw;
                fbest = best;
            }
            if (fbest > 1e-9) {
                x = sx;
                y = sy;
                z = sz;
                yaw = syaw;
                best = seed_res;
                run_ladder(coarse);
                // re-acquire the heading when tracking slipped: a fast turn
                // can leave both seeds outside the true pose's basin
                if (best > 2e-3) {
                    for (int k = 0; k < 32; ++k) {
                        const double cand = -M_PI + (2.0 * M_PI * static_cast<double>(k)) / 32.0;
                        const double r = photometric_residual(obs, arm, scene, x, y, z, cand);
                        if (r + 1e-15 < best) {
                            best = r;
                            yaw = cand;
                        }
                    }
                    run_ladder(coarse);
                }
            } else {
                best = std::numeric_limits<double>::infinity();  // keep the exact grid result
            }
            if (fbest < best) {
                x = fx;
                y = fy;
                z = fz;
                yaw = fyaw;
                best = fbest;
            }
        }
        vx = x - x_prev;
        vy = y - y_prev;
        vz = z - z_prev;
        vyaw = std::remainder(yaw - yaw_prev, 2.0 * M_PI);
        TrackedPose tp;
        tp.pose = camera_pose(x, y, z, yaw);
        tp.residual = best;
        tp.tracked = best < kDivergenceThreshold;
        out.push_back(tp);
    }
    return out;
}

std::pair<double, double> trajectory_errors(const std::vector<RigidTransform>& est,
                                            const std::vector<RigidTransform>& gt) {
    if (est.size() != gt.size()) throw std::invalid_argument("trajectory_errors: length mismatch");
    if (est.empty()) return {0.0, 0.0};
    double trans = 0.0, rot = 0.0;
    for (size_t i = 0; i < est.size(); ++i) {
        trans += (est[i].translation() - gt[i].translation()).norm();
        const double tr = (est[i].rotation().transpose() * gt[i].rotation()).trace();
        const double c = std::min(1.0, std::max(-1.0, (tr - 1.0) / 2.0));
        rot += std::acos(c) * 180.0 / M_PI;
    }
    const double n = static_cast<double>(est.size());
    return {trans / n, rot / n};
}

BinaryMask arm_mask_from_frame(const Image& frame) {
    BinaryMask m = BinaryMask::zeros(frame.h, frame.w);
    const Eigen::Vector3d key = arm_color();
    for (long y = 0; y < frame.h; ++y) {
        for (long x = 0; x < frame.w; ++x) {
            if ((frame.pixel(y, x) - key).norm() < kArmKeyDist) m.at(y, x) = 1;
        }
    }
    return m;
}

std::pair<double, double> body_control_metrics(const std::vector<BinaryMask>& gen_masks,
                                               const std::vector<BinaryMask>& gt_masks) {
    if (gen_masks.size() != gt_masks.size()) {
        throw std::invalid_argument("body_control_metrics: length mismatch");
    }
    double iou_sum = 0.0;
    long iou_frames = 0, presence_ok = 0;
    for (size_t i = 0; i < gen_masks.size(); ++i) {
        const BinaryMask& a = gen_masks[i];
        const BinaryMask& b = gt_masks[i];
        if (a.h != b.h || a.w != b.w) throw std::invalid_argument("body_control_metrics: shape mismatch");
        long inter = 0, uni = 0;
        for (size_t k = 0; k < a.data.size(); ++k) {
            const bool pa = a.data[k] != 0, pb = b.data[k] != 0;
            inter += (pa && pb);
            uni += (pa || pb);
        }
        const bool ea = a.count() == 0, eb = b.count() == 0;
        if (ea == eb) ++presence_ok;
        if (uni > 0) {
            iou_sum += static_cast<double>(inter) / static_cast<double>(uni);
            ++iou_frames;
        }
    }
    const double miou = iou_frames > 0 ? 100.0 * iou_sum / static_cast<double>(iou_frames) : 100.0;
    const double acc = gen_masks.empty()
                           ? 100.0
                           : 100.0 * static_cast<double>(presence_ok) / static_cast<double>(gen_masks.size());
    return {miou, acc};
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["format_version"] = 1;
    j["checkpoint_id"] = checkpoint_id;
    j["dataset_id"] = dataset_id;
    j["seed"] = seed;
    j["aggregate"] = {{"ssim", ssim},
                      {"trans_error", trans_error},
                      {"rot_error", rot_error},
                      {"miou", miou},
                      {"presence_accuracy", presence_accuracy}};
    auto& jc = j["clips"];
    for (const auto& c : clips) {
        jc.push_back({{"id", c.id},
                      {"ssim", c.ssim},
                      {"trans_error", c.trans_error},
                      {"rot_error", c.rot_error},
                      {"miou", c.miou},
                      {"presence_accuracy", c.presence_accuracy},
                      {"untracked_frames", c.untracked_frames},
                      {"tracked_frames", c.tracked_frames}});
    }
    return j.dump(2);
}

void EvalReport::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << to_json() << '\n';
}

EvalReport evaluate(const DenoiserModel& model, const std::string& dataset_dir,
                    const EvalOptions& opts, uint64_t seed, const std::string& checkpoint_id) {
    const DatasetManifest manifest = load_manifest(dataset_dir);
    const DatasetConfig& dc = manifest.config;
    const DiTConfig& mc = model.config();
    if (mc.t_lat != latent_frames_for(dc.clip_length) || mc.ctx_lat != context_latents_for(dc.past_frames) ||
        mc.past_frames != dc.past_frames || mc.future_frames != dc.clip_length - dc.past_frames) {
        throw std::invalid_argument("evaluate: model/dataset geometry mismatch");
    }
    ControlBuilder build = opts.control;
    if (!build) {
        build = [](const PoseSequence& seq, ControlTensor& out) {
            out = assemble_control(seq);
            return true;
        };
    }
    std::vector<ClipInfo> infos = manifest.in_split(opts.split);
    if (opts.max_clips > 0 && static_cast<long>(infos.size()) > opts.max_clips) {
        infos.resize(static_cast<size_t>(opts.max_clips));
    }
    if (infos.empty()) throw std::invalid_argument("evaluate: no clips in split " + opts.split);

    EvalReport rep;
    rep.checkpoint_id = checkpoint_id;
    rep.dataset_id = dataset_dir;
    rep.seed = seed;

    double s_ssim = 0, s_te = 0, s_re = 0, s_miou = 0, s_acc = 0;
    long traj_clips = 0;
    for (size_t ci = 0; ci < infos.size(); ++ci) {
        const ClipInfo& info = infos[ci];
        const ClipRecord clip = load_clip(dataset_dir, info);
        const Scene scene = dataset_scene(manifest, info.trajectory);
        const long n = dc.past_frames, t = dc.clip_length;

        const LatentVideo full = tokenize(clip.frames, mc.ctx_lat);
        LatentVideo past = LatentVideo::zeros(mc.ctx_lat, mc.c_lat, mc.h_lat, mc.w_lat, mc.ctx_lat);
        past.data = full.data.head(past.size());

        PoseSequence seq;
        seq.dt = clip.poses.dt;
        seq.frames.assign(clip.poses.frames.begin() + (n - 1), clip.poses.frames.end());
        ControlTensor control;
        const bool has_control = build(seq, control);

        const LatentVideo gen = sample(past, has_control ? &control : nullptr, model, opts.schedule,
                                       opts.guidance, mix_seed(seed, 500 + ci));
        const std::vector<Image> decoded = detokenize(gen);

        ClipMetrics m;
        m.id = info.id;

        std::vector<Image> gen_frames(decoded.begin() + n, decoded.end());
        double ssim_sum = 0.0;
        std::vector<BinaryMask> gen_masks, gt_masks;
        std::vector<RigidTransform> gt_traj;
        for (long i = n; i < t; ++i) {
            ssim_sum += ssim(gen_frames[static_cast<size_t>(i - n)], clip.frames[static_cast<size_t>(i)]);
            gen_masks.push_back(arm_mask_from_frame(gen_frames[static_cast<size_t>(i - n)]));
            gt_masks.push_back(clip.masks[static_cast<size_t>(i)]);
            gt_traj.push_back(clip.poses.frames[static_cast<size_t>(i)].head());
        }
        m.ssim = ssim_sum / static_cast<double>(t - n);
        std::tie(m.miou, m.presence_accuracy) = body_control_metrics(gen_masks, gt_masks);

        // errors use the estimator's pose for every frame (untracked ones
        // included) so undecodable frames penalize rather than vanish
        const auto tracked = estimate_head_trajectory(
            gen_frames, scene, clip.poses.frames[static_cast<size_t>(n - 1)].head());
        std::vector<RigidTransform> est;
        for (const auto& tp : tracked) {
            est.push_back(tp.pose);
            tp.tracked ? ++m.tracked_frames : ++m.untracked_frames;
        }
        std::tie(m.trans_error, m.rot_error) = trajectory_errors(est, gt_traj);
        s_te += m.trans_error;
        s_re += m.rot_error;
        ++traj_clips;
        s_ssim += m.ssim;
        s_miou += m.miou;
        s_acc += m.presence_accuracy;
        rep.clips.push_back(std::move(m));
    }
    const double nc = static_cast<double>(infos.size());
    rep.ssim = s_ssim / nc;
    rep.miou = s_miou / nc;
    rep.presence_accuracy = s_acc / nc;
    rep.trans_error = traj_clips > 0 ? s_te / static_cast<double>(traj_clips) : 0.0;
    rep.rot_error = traj_clips > 0 ? s_re / static_cast<double>(traj_clips) : 0.0;
    return rep;
}

}  // namespace egodiff
