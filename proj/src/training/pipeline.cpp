#include "mori/training/pipeline.hpp"

namespace mori::training {

std::uint64_t eval_seed(const RunConfig& cfg) { return episode_seed(cfg.seed, 0, 2); }

ArmResult run_arm(const RunConfig& cfg, const ArmOptions& options) {
    cfg.validate();
    const auto task = cfg.task_spec();
    ArmResult r;
    r.config = cfg;
    const auto demos = collect_demos(task, cfg.n_demos, cfg.demo_noise, cfg.seed);
    buffers::BufferSet buffers(cfg.buffer_capacity);
    buffers.load_offline(demos);
    r.pretrained = pretrain(cfg, buffers);
    if (options.run_dir) {
        std::filesystem::create_directories(*options.run_dir);
        buffers::save_episodes(*options.run_dir / "demos.jsonl", demos);
        experts::save_bundle(*options.run_dir / "pretrained", r.pretrained, 0, {{"task", env::to_string(cfg.task)}});
    }
    TrainOptions topt;
    topt.run_dir = options.run_dir;
    topt.source = options.source;
    topt.observer = options.observer;
    r.trained = train_online(cfg, r.pretrained, buffers, topt);
    r.eval = evaluate(r.trained.bundle, task, options.eval_episodes, eval_seed(cfg), cfg.selection(),
                      cfg.gripper_source());
    return r;
}

}  // namespace mori::training
