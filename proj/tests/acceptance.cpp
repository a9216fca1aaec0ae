#include "checks/checks.hpp"
#include "mori/training/pipeline.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

using namespace mori;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;
int verdicts = 0;

void verdict(const std::string& name, bool pass, const std::string& detail) {
    std::printf("%s %s: %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    std::fflush(stdout);
    ++verdicts;
    if (!pass) ++failures;
}

void info(const std::string& text) {
    std::printf("  info: %s\n", text.c_str());
    std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct Arm {
    training::ArmResult result;
    double seconds = 0.0;
    fs::path dir;
};

Arm run(const training::RunConfig& base, env::TaskId task, const std::string& variant, const fs::path& dir,
        int eval_episodes) {
    auto cfg = base;
    training::apply_override(cfg, "task=" + env::to_string(task));
    training::apply_variant(cfg, variant);
    fs::remove_all(dir);
    const auto t0 = Clock::now();
    training::ArmOptions opt;
    opt.run_dir = dir;
    opt.eval_episodes = eval_episodes;
    Arm a{training::run_arm(cfg, opt), 0.0, dir};
    a.seconds = seconds_since(t0);
    const auto& last = a.result.trained.metrics.episodes.back();
    info(env::to_string(task) + "/" + variant + ": eval success " + fmt("%.3f", a.result.eval.success_rate) +
         ", rl ratio " + fmt("%.3f", a.result.eval.rl_ratio) + ", demo ratio " + fmt("%.4f", last.demo_ratio) +
         ", auto-success ratio " + fmt("%.4f", last.auto_success_ratio) + ", " + fmt("%.0f s", a.seconds));
    return a;
}

std::vector<fs::path> checkpoints(const fs::path& run_dir) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(run_dir / "checkpoints")) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

struct Pooled {
    double switch_sum = 0, steady_sum = 0;
    std::int64_t switch_n = 0, steady_n = 0;
    void add(const training::SwitchStats& s) {
        switch_sum += s.switch_mean * static_cast<double>(s.switch_steps);
        steady_sum += s.steady_mean * static_cast<double>(s.steady_steps);
        switch_n += s.switch_steps;
        steady_n += s.steady_steps;
    }
    double ratio() const {
        if (switch_n == 0 || steady_n == 0 || steady_sum == 0) return 0.0;
        return (switch_sum / static_cast<double>(switch_n)) / (steady_sum / static_cast<double>(steady_n));
    }
};

Pooled pooled_switches(const Arm& arm, const env::TaskSpec& task, int episodes, std::uint64_t seed) {
    Pooled p;
    for (const auto& ck : checkpoints(arm.dir)) {
        const auto b = experts::load_bundle(ck);
        const auto e = training::evaluate(b, task, episodes, seed, experts::Selection::gated,
                                          arm.result.config.gripper_source());
        info(arm.dir.filename().string() + " " + ck.filename().string() + ": switch/steady " +
             fmt("%.3f", e.switches.ratio()) + " over " + std::to_string(e.switches.switch_steps) + " switches");
        p.add(e.switches);
    }
    return p;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance report: one PASS/FAIL line per criterion"};
    std::string config_file, out = "acceptance_runs", only;
    app.add_option("--config", config_file, "run configuration for the training studies")->check(CLI::ExistingFile);
    app.add_option("--out", out, "directory for run artifacts");
    app.add_option("--only", only, "comma-separated subset: gradients,gate,buffers,success,regularizer,smoothness,drift,gripper,repro");
    CLI11_PARSE(app, argc, argv);

    std::set<std::string> selected;
    {
        std::stringstream ss(only);
        std::string item;
        while (std::getline(ss, item, ',')) selected.insert(item);
    }
    auto want = [&](const std::string& k) { return selected.empty() || selected.count(k) > 0; };

    const auto cfg = config_file.empty() ? training::RunConfig{} : training::load_config(config_file);
    const fs::path root(out);
    fs::create_directories(root);

    if (want("gradients")) {
        const auto t0 = Clock::now();
        const auto cases = checks::gradient_suite(20, 17);
        double worst = 0.0;
        std::string worst_loss;
        for (const auto& c : cases) {
            info(c.loss + ": worst relative error " + fmt("%.2e", c.worst_relative_error) + " over " +
                 std::to_string(c.trials) + " instances");
            if (c.worst_relative_error >= worst) {
                worst = c.worst_relative_error;
                worst_loss = c.loss;
            }
        }
        const double secs = seconds_since(t0);
        verdict("gradient suite", worst < checks::kGradientTolerance && secs < 60.0,
                "worst relative error " + fmt("%.2e", worst) + " (" + worst_loss + ") < 1e-4, " + fmt("%.1f s", secs) +
                    " < 60 s");
    }

    if (want("gate")) {
        const auto t0 = Clock::now();
        const auto r = checks::gate_algebra(1000, 23);
        const double secs = seconds_since(t0);
        const bool ent_ok = std::abs(r.entropy_at_half - r.expected_entropy_at_half) <= 1e-12;
        const bool spec_ok = r.spec_at_zero == 0.0 && r.spec_at_one == 0.0 && r.spec_peaks_at_half;
        verdict("gate-loss algebra",
                r.worst_sum_error <= checks::kGateSumTolerance && spec_ok && ent_ok && secs < 60.0,
                "component sum error " + fmt("%.2e", r.worst_sum_error) + " <= 1e-6 over " +
                    std::to_string(r.batches) + " batches; specialization 0 at w=0 and w=1, peak " +
                    fmt("%.4f", r.spec_at_half) + " at w=0.5" + (r.spec_peaks_at_half ? "" : " (not the maximum)") +
                    "; entropy at w=0.5 " + fmt("%.8f", r.entropy_at_half) + " vs " +
                    fmt("%.8f", r.expected_entropy_at_half) + "; " + fmt("%.1f s", secs));
    }

    if (want("buffers")) {
        const auto t0 = Clock::now();
        const auto r = checks::buffer_routing(31, 100000);
        const double secs = seconds_since(t0);
        const bool ratios = std::abs(r.bc_success_fraction - 0.5) <= checks::kSamplerTolerance &&
                            std::abs(r.rl_replay_fraction - 0.5) <= checks::kSamplerTolerance;
        verdict("buffer routing", r.violations == 0 && ratios && secs < 60.0,
                std::to_string(r.violations) + " partition violations over " + std::to_string(r.episodes) +
                    " episodes; sampler fractions " + fmt("%.4f", r.bc_success_fraction) + " (success) and " +
                    fmt("%.4f", r.rl_replay_fraction) + " (replay) over " + std::to_string(r.draws) +
                    " draws, 0.5 +- 0.01; " + fmt("%.1f s", secs) +
                    (r.violations ? "; first: " + r.first_violation : std::string()));
    }

    const int eval_n = 50;
    std::optional<Arm> drawer_base, drawer_no_reg;
    auto need_drawer_base = want("success") || want("regularizer") || want("smoothness") || want("drift") || want("repro");
    if (need_drawer_base) drawer_base = run(cfg, env::TaskId::drawer_place, "base", root / "drawer_place" / "base", eval_n);

    if (want("success")) {
        for (auto task : {env::TaskId::drawer_place, env::TaskId::dual_insert}) {
            const auto name = env::to_string(task);
            Arm base = task == env::TaskId::drawer_place ? *drawer_base
                                                         : run(cfg, task, "base", root / name / "base", eval_n);
            const Arm bc = run(cfg, task, "bc_only", root / name / "bc_only", eval_n);
            const Arm rl = run(cfg, task, "rl_only", root / name / "rl_only", eval_n);
            const double m = base.result.eval.success_rate;
            const double b = bc.result.eval.success_rate;
            const double r = rl.result.eval.success_rate;
            const double minutes = (base.seconds + bc.seconds + rl.seconds) / 60.0;
            verdict("ablation success " + name, m >= b && m >= r && m >= 0.9 && minutes <= 30.0,
                    "MoRI " + fmt("%.2f", m) + " >= bc_only " + fmt("%.2f", b) + " and rl_only " + fmt("%.2f", r) +
                        ", MoRI >= 0.90 over " + std::to_string(eval_n) + " episodes; " + fmt("%.1f", minutes) +
                        " min <= 30");
        }
    }

    if (want("regularizer") || want("smoothness"))
        drawer_no_reg = run(cfg, env::TaskId::drawer_place, "no_bc_reg", root / "drawer_place" / "no_bc_reg", eval_n);

    if (want("regularizer")) {
        const auto& b = drawer_base->result.trained.metrics.episodes.back();
        const auto& n = drawer_no_reg->result.trained.metrics.episodes.back();
        const double minutes = (drawer_base->seconds + drawer_no_reg->seconds) / 60.0;
        verdict("bc regularizer ablation drawer_place",
                n.demo_ratio > b.demo_ratio && n.auto_success_ratio < b.auto_success_ratio && minutes <= 30.0,
                "demo ratio no_bc_reg " + fmt("%.4f", n.demo_ratio) + " > base " + fmt("%.4f", b.demo_ratio) +
                    "; auto-success no_bc_reg " + fmt("%.4f", n.auto_success_ratio) + " < base " +
                    fmt("%.4f", b.auto_success_ratio) + "; " + fmt("%.1f", minutes) + " min <= 30");
    }

    if (want("smoothness")) {
        const auto t0 = Clock::now();
        const auto task = drawer_base->result.config.task_spec();
        const auto seed = training::eval_seed(cfg);
        const auto pb = pooled_switches(*drawer_base, task, 20, seed);
        const auto pn = pooled_switches(*drawer_no_reg, task, 20, seed);
        const double minutes = seconds_since(t0) / 60.0;
        info("final checkpoint only: base " + fmt("%.3f", drawer_base->result.eval.switches.ratio()) +
             ", no_bc_reg " + fmt("%.3f", drawer_no_reg->result.eval.switches.ratio()));
        verdict("switching smoothness", pb.ratio() <= 1.5 && pn.ratio() > pb.ratio() && minutes <= 10.0,
                "pooled over stored checkpoints: base switch/non-switch displacement " + fmt("%.3f", pb.ratio()) +
                    " <= 1.5 (" + std::to_string(pb.switch_n) + " switch steps); no_bc_reg " + fmt("%.3f", pn.ratio()) +
                    " > base (" + std::to_string(pn.switch_n) + " switch steps); " + fmt("%.1f", minutes) +
                    " min <= 10");
    }

    if (want("drift")) {
        const auto t0 = Clock::now();
        const auto cks = checkpoints(drawer_base->dir);
        const auto task = drawer_base->result.config.task_spec();
        if (cks.size() < 3) {
            verdict("rl-selection drift", false,
                    "needs three stored checkpoints, found " + std::to_string(cks.size()));
        } else {
            const std::array<fs::path, 3> picks{cks.front(), cks[(cks.size() - 1) / 2], cks.back()};
            std::array<double, 3> ratio{};
            std::string detail;
            for (int i = 0; i < 3; ++i) {
                const auto b = experts::load_bundle(picks[i]);
                ratio[i] = training::evaluate(b, task, 5, training::eval_seed(cfg)).rl_ratio;
                detail += (i ? " -> " : "") + picks[i].filename().string() + " " + fmt("%.3f", ratio[i]);
            }
            const double minutes = seconds_since(t0) / 60.0;
            const bool ok = ratio[1] >= ratio[0] - 0.05 && ratio[2] >= ratio[1] - 0.05;
            verdict("rl-selection drift", ok && minutes <= 5.0,
                    "rl selection ratio over 5 evaluation episodes " + detail +
                        ", nondecreasing within 0.05; " + fmt("%.1f", minutes) + " min <= 5");
        }
    }

    if (want("gripper")) {
        const auto base = run(cfg, env::TaskId::lid_box, "base", root / "lid_box" / "base", eval_n);
        const auto dqn = run(cfg, env::TaskId::lid_box, "gripper_dqn", root / "lid_box" / "gripper_dqn", eval_n);
        const double minutes = (base.seconds + dqn.seconds) / 60.0;
        verdict("gripper head ablation lid_box", dqn.result.eval.success_rate < base.result.eval.success_rate && minutes <= 45.0,
                "gripper_dqn " + fmt("%.2f", dqn.result.eval.success_rate) + " < DBC " +
                    fmt("%.2f", base.result.eval.success_rate) + " over " + std::to_string(eval_n) + " episodes; " +
                    fmt("%.1f", minutes) + " min <= 45");
    }

    if (want("repro")) {
        const auto again = run(cfg, env::TaskId::drawer_place, "base", root / "repro" / "drawer_place", eval_n);
        const auto a = read_file(drawer_base->dir / "metrics.jsonl");
        const auto b = read_file(again.dir / "metrics.jsonl");
        const bool same = !a.empty() && a == b;
        const double minutes = again.seconds / 60.0;
        verdict("reproducibility", same && minutes <= 10.0,
                std::string("metrics.jsonl of two identical runs ") + (same ? "bit-identical" : "differ") + " (" +
                    std::to_string(a.size()) + " bytes); " + fmt("%.1f", minutes) + " min per run <= 10");
    }

    std::printf("summary: %d of %d criteria failed\n", failures, verdicts);
    return failures ? 1 : 0;
}
