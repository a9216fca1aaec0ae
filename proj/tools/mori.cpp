#include "mori/labd/session.hpp"
#include "mori/training/pipeline.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <cstdio>
#include <iostream>
#include <thread>

using namespace mori;
namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Common {
    std::string config_file;
    std::vector<std::string> sets;
    std::string task;
    std::string task_file;
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config_file, "JSON run configuration")->check(CLI::ExistingFile);
    app->add_option("--set", c.sets, "override a config key, e.g. --set lr.critic=1e-3")->take_all();
    app->add_option("--task", c.task, "drawer_place, lid_box, dual_insert or double_fold");
    app->add_option("--task-file", c.task_file, "JSON task definition")->check(CLI::ExistingFile);
    app->add_option("--seed", c.seed, "run seed");
}

training::RunConfig resolve(const Common& c) {
    training::RunConfig cfg = c.config_file.empty() ? training::RunConfig{} : training::load_config(c.config_file);
    if (!c.task.empty()) training::apply_override(cfg, "task=" + c.task);
    if (!c.task_file.empty()) cfg.task_file = c.task_file;
    if (c.seed) cfg.seed = *c.seed;
    for (const auto& s : c.sets) training::apply_override(cfg, s);
    cfg.validate();
    return cfg;
}

fs::path demos_file(const fs::path& p) { return fs::is_directory(p) ? p / "demos.jsonl" : p; }

std::vector<buffers::Episode> demos_for(const training::RunConfig& cfg, const std::string& demos) {
    if (demos.empty()) return training::collect_demos(cfg.task_spec(), cfg.n_demos, cfg.demo_noise, cfg.seed);
    const auto file = demos_file(demos);
    if (!fs::exists(file)) throw UsageError("no demonstrations at " + file.string());
    return buffers::load_episodes(file);
}

experts::ExpertBundle load_checked(const std::string& dir, training::RunConfig& cfg, bool task_given) {
    if (!fs::exists(dir)) throw UsageError("checkpoint " + dir + " does not exist");
    std::map<std::string, std::string> meta;
    auto bundle = experts::load_bundle(dir, nullptr, &meta);
    auto it = meta.find("task");
    if (it != meta.end()) {
        const auto ck_task = env::task_from_string(it->second);
        if (task_given && ck_task != cfg.task)
            throw UsageError("checkpoint " + dir + " was trained on " + it->second + ", not " + env::to_string(cfg.task));
        if (!task_given) training::apply_override(cfg, "task=" + it->second);
    }
    if (bundle.arch.obs_dim != env::observation_dim(cfg.task))
        throw UsageError("checkpoint " + dir + " expects observations of size " + std::to_string(bundle.arch.obs_dim));
    if (cfg.ablation.gripper_dqn && !bundle.has_dqn)
        throw UsageError("checkpoint " + dir + " has no gripper Q-network for the gripper_dqn variant");
    cfg.arch = bundle.arch;
    return bundle;
}

void print_eval(const training::EvalResult& e) {
    std::printf("success_rate %.4f\n", e.success_rate);
    std::printf("mean_length %.2f\n", e.mean_length);
    std::printf("rl_ratio %.4f\n", e.rl_ratio);
    std::printf("switch_stats switch_mean %.6f switch_std %.6f steady_mean %.6f steady_std %.6f switch_steps %lld "
                "steady_steps %lld ratio %.4f\n",
                e.switches.switch_mean, e.switches.switch_std, e.switches.steady_mean, e.switches.steady_std,
                static_cast<long long>(e.switches.switch_steps), static_cast<long long>(e.switches.steady_steps),
                e.switches.ratio());
}

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mori: offline pre-training, online fine-tuning and live intervention sessions"};
    app.require_subcommand(1);

    Common common;
    std::string out, demos, ckpt, variant = "base", selection = "config", listen;
    int n = -1, episodes = -1, step_ms = 50;
    bool start_paused = false;

    auto* collect = app.add_subcommand("collect-demos", "record scripted demonstrations");
    add_common(collect, common);
    collect->add_option("--out", out, "output directory")->required();
    collect->add_option("--n", n, "number of demonstrations (defaults to n_demos)");

    auto* pre = app.add_subcommand("pretrain", "offline pre-training on demonstrations");
    add_common(pre, common);
    pre->add_option("--demos", demos, "demos.jsonl or a directory holding it; collected when omitted");
    pre->add_option("--out", out, "checkpoint directory")->required();

    auto* online = app.add_subcommand("train-online", "online fine-tuning from a checkpoint");
    add_common(online, common);
    online->add_option("--ckpt", ckpt, "pre-trained checkpoint")->required();
    online->add_option("--demos", demos, "demonstrations that seed the demo buffer; collected when omitted");
    online->add_option("--out", out, "run directory")->required();

    auto* ev = app.add_subcommand("eval", "deterministic evaluation of a checkpoint");
    add_common(ev, common);
    ev->add_option("--ckpt", ckpt, "checkpoint directory")->required();
    ev->add_option("--episodes", episodes, "evaluation episodes (defaults to eval_episodes)");
    ev->add_option("--selection", selection, "gated, bc or rl (defaults to the configured ablation)")
        ->check(CLI::IsMember({"config", "gated", "bc", "rl"}));

    auto* abl = app.add_subcommand("ablate", "run one ablation arm end to end");
    add_common(abl, common);
    abl->add_option("--variant", variant, "base, no_bc_reg, gripper_dqn, bc_only or rl_only")
        ->check(CLI::IsMember({"base", "no_bc_reg", "gripper_dqn", "bc_only", "rl_only"}));
    abl->add_option("--out", out, "run directory");
    abl->add_option("--episodes", episodes, "evaluation episodes (defaults to eval_episodes)");

    auto* serve = app.add_subcommand("serve", "online fine-tuning driven by a live intervention session");
    add_common(serve, common);
    serve->add_option("--ckpt", ckpt, "pre-trained checkpoint; pre-trains from demonstrations when omitted");
    serve->add_option("--demos", demos, "demonstrations that seed the demo buffer");
    serve->add_option("--out", out, "run directory")->required();
    serve->add_option("--listen", listen, "host:port (defaults to MORI_LISTEN, then 127.0.0.1:8765)");
    serve->add_option("--step-ms", step_ms, "milliseconds per environment step")->check(CLI::NonNegativeNumber);
    serve->add_flag("--start-paused", start_paused, "wait for a resume message before the first step");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        auto cfg = resolve(common);
        const bool task_given = !common.task.empty() || !common.config_file.empty();

        if (*collect) {
            if (n >= 0) cfg.n_demos = n;
            cfg.validate();
            const auto eps = training::collect_demos(cfg.task_spec(), cfg.n_demos, cfg.demo_noise, cfg.seed);
            fs::create_directories(out);
            buffers::save_episodes(fs::path(out) / "demos.jsonl", eps);
            training::save_config(fs::path(out) / "config.json", cfg);
            std::size_t steps = 0, ok = 0;
            for (const auto& e : eps) {
                steps += e.size();
                ok += (!e.empty() && e.back().reward > 0.0) ? 1 : 0;
            }
            std::printf("episodes %zu successful %zu transitions %zu\n", eps.size(), ok, steps);
        } else if (*pre) {
            const auto eps = demos_for(cfg, demos);
            buffers::BufferSet buffers(cfg.buffer_capacity);
            buffers.load_offline(eps);
            const auto bundle = training::pretrain(cfg, buffers);
            experts::save_bundle(out, bundle, cfg.n_offline, {{"task", env::to_string(cfg.task)}});
            training::save_config(fs::path(out) / "config.json", cfg);
            std::printf("checkpoint %s iterations %d\n", out.c_str(), cfg.n_offline);
        } else if (*online) {
            auto bundle = load_checked(ckpt, cfg, task_given);
            buffers::BufferSet buffers(cfg.buffer_capacity);
            buffers.load_offline(demos_for(cfg, demos));
            training::TrainOptions opt;
            opt.run_dir = fs::path(out);
            const auto res = training::train_online(cfg, std::move(bundle), buffers, opt);
            const auto r = buffers.ratios();
            int successes = 0;
            for (const auto& e : res.metrics.episodes) successes += e.success ? 1 : 0;
            std::printf("episodes %zu successes %d demo_ratio %.4f auto_success_ratio %.4f wall_clock_s %.1f\n",
                        res.metrics.episodes.size(), successes, r.demo_ratio, r.auto_success_ratio,
                        res.metrics.wall_clock_s);
        } else if (*ev) {
            const auto bundle = load_checked(ckpt, cfg, task_given);
            auto sel = cfg.selection();
            if (selection == "gated") sel = experts::Selection::gated;
            if (selection == "bc") sel = experts::Selection::bc_only;
            if (selection == "rl") sel = experts::Selection::rl_only;
            const int eps = episodes > 0 ? episodes : cfg.eval_episodes;
            print_eval(training::evaluate(bundle, cfg.task_spec(), eps, training::eval_seed(cfg), sel,
                                          cfg.gripper_source()));
        } else if (*abl) {
            training::apply_variant(cfg, variant);
            training::ArmOptions opt;
            if (!out.empty()) opt.run_dir = fs::path(out);
            opt.eval_episodes = episodes > 0 ? episodes : cfg.eval_episodes;
            const auto r = training::run_arm(cfg, opt);
            const auto& last = r.trained.metrics.episodes.back();
            std::printf("variant %s task %s\n", variant.c_str(), env::to_string(cfg.task).c_str());
            std::printf("demo_ratio %.4f\nauto_success_ratio %.4f\n", last.demo_ratio, last.auto_success_ratio);
            print_eval(r.eval);
        } else if (*serve) {
            const auto ep = listen.empty() ? labd::ws::listen_endpoint_from_env() : labd::ws::parse_endpoint(listen);
            experts::ExpertBundle bundle;
            const auto eps = demos_for(cfg, demos);
            buffers::BufferSet buffers(cfg.buffer_capacity);
            buffers.load_offline(eps);
            if (ckpt.empty()) {
                std::printf("pre-training for %d iterations\n", cfg.n_offline);
                std::fflush(stdout);
                bundle = training::pretrain(cfg, buffers);
            } else {
                bundle = load_checked(ckpt, cfg, task_given);
            }
            labd::Session::Options sopt;
            sopt.task = env::to_string(cfg.task);
            sopt.start_paused = start_paused;
            sopt.step_interval = std::chrono::milliseconds(step_ms);
            labd::Session session(sopt);
            labd::SessionServer server(session, ep);
            std::printf("listening on ws://%s:%d\n", ep.host.c_str(), server.port());
            std::fflush(stdout);

            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            std::atomic<bool> done{false};
            std::thread watcher([&] {
                while (!done) {
                    if (g_interrupted) session.shutdown();
                    std::this_thread::sleep_for(std::chrono::milliseconds(50));
                }
            });
            training::TrainOptions opt;
            opt.run_dir = fs::path(out);
            opt.source = &session;
            opt.observer = &session;
            try {
                const auto res = training::train_online(cfg, std::move(bundle), buffers, opt);
                std::printf("episodes %zu\n", res.metrics.episodes.size());
            } catch (...) {
                done = true;
                watcher.join();
                throw;
            }
            done = true;
            watcher.join();
            session.shutdown();
            server.stop();
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const nn::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
