#include "egodiff/harness.hpp"
#include "egodiff/image_io.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <exception>

using namespace egodiff;

int main(int argc, char** argv) {
    CLI::App app{"pose-controllable egocentric video diffusion on a procedural toy world"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a toy-world dataset");
    DatasetConfig dcfg;
    std::string gen_out = "dataset";
    uint64_t gen_seed = 0;
    gen->add_option("--out", gen_out, "output directory");
    gen->add_option("--seed", gen_seed, "dataset seed");
    gen->add_option("--trajectories", dcfg.num_trajectories, "number of trajectories");
    gen->add_option("--clips-per-trajectory", dcfg.clips_per_trajectory, "clips per trajectory");
    gen->add_option("--clip-length", dcfg.clip_length, "frames per clip (1 mod 4)");
    gen->add_option("--past-frames", dcfg.past_frames, "context frames N (1 mod 4)");
    gen->add_option("--width", dcfg.width, "frame width");
    gen->add_option("--height", dcfg.height, "frame height");
    gen->add_option("--landmarks", dcfg.landmarks, "wall landmarks per scene");
    gen->add_flag("--per-trajectory-scene{false}", dcfg.shared_scene,
                  "give each trajectory its own scene");

    // train
    auto* tr = app.add_subcommand("train", "train a denoiser from a run config");
    std::string tr_config;
    tr->add_option("--config", tr_config, "run config JSON")->required();

    // sample
    auto* sm = app.add_subcommand("sample", "generate frames from context + pose control");
    std::string sm_config, sm_ckpt, sm_context, sm_pose, sm_out = "sample_out";
    uint64_t sm_seed = 0;
    sm->add_option("--config", sm_config, "run config JSON")->required();
    sm->add_option("--ckpt", sm_ckpt, "checkpoint dir (default <out_dir>/checkpoint)");
    sm->add_option("--context", sm_context, "clip id providing the context frames")->required();
    sm->add_option("--pose", sm_pose, "clip id providing the control poses (default: context clip)");
    sm->add_option("--out", sm_out, "output directory");
    sm->add_option("--seed", sm_seed, "sampling seed");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
    std::string ev_ckpt, ev_data, ev_out = "report.json", ev_split = "test", ev_variant = "full_body";
    uint64_t ev_seed = 0;
    long ev_steps = 18, ev_max_clips = 0;
    double ev_guidance = 2.0;
    ev->add_option("--ckpt", ev_ckpt, "checkpoint dir")->required();
    ev->add_option("--data", ev_data, "dataset dir")->required();
    ev->add_option("--out", ev_out, "report path");
    ev->add_option("--seed", ev_seed, "evaluation seed");
    ev->add_option("--steps", ev_steps, "sampler steps");
    ev->add_option("--guidance", ev_guidance, "guidance weight");
    ev->add_option("--split", ev_split, "dataset split");
    ev->add_option("--max-clips", ev_max_clips, "cap on evaluated clips (0 = all)");
    ev->add_option("--variant", ev_variant, "pose variant used to build control");

    // ablate
    auto* ab = app.add_subcommand("ablate", "train + evaluate a grid of variants");
    std::string ab_grid, ab_out = "ablation.csv";
    ab->add_option("--grid", ab_grid, "grid JSON")->required();
    ab->add_option("--out", ab_out, "output CSV");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            dcfg.validate();
            generate_dataset(dcfg, gen_out, gen_seed);
            std::printf("dataset written to %s\n", gen_out.c_str());
        } else if (tr->parsed()) {
            const RunConfig cfg = load_config(tr_config);
            const TrainResult res = train(cfg);
            std::printf("trained %ld steps, loss %.6f -> %.6f, checkpoint %s\n", res.steps,
                        res.initial_loss, res.final_loss, res.checkpoint_dir.c_str());
        } else if (sm->parsed()) {
            const RunConfig cfg = load_config(sm_config);
            if (sm_ckpt.empty()) sm_ckpt = cfg.out_dir + "/checkpoint";
            if (sm_pose.empty()) sm_pose = sm_context;
            sample_cmd(cfg, sm_ckpt, sm_context, sm_pose, sm_out, sm_seed);
            std::printf("wrote %s/frames.bin and strip.png\n", sm_out.c_str());
        } else if (ev->parsed()) {
            EvalOptions opts;
            opts.schedule.steps = ev_steps;
            opts.guidance.weight = ev_guidance;
            opts.split = ev_split;
            opts.max_clips = ev_max_clips;
            opts.control = control_builder(parse_pose_variant(ev_variant));
            const EvalReport rep = eval_checkpoint(ev_ckpt, ev_data, opts, ev_seed);
            rep.save(ev_out);
            std::printf("ssim %.2f  trans %.4f m  rot %.2f deg  miou %.2f  acc %.2f -> %s\n",
                        rep.ssim, rep.trans_error, rep.rot_error, rep.miou, rep.presence_accuracy,
                        ev_out.c_str());
        } else if (ab->parsed()) {
            ablate(ab_grid, ab_out);
            std::printf("ablation table written to %s\n", ab_out.c_str());
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
