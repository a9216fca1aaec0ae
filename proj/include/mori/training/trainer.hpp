#pragma once

#include "mori/buffers/buffers.hpp"
#include "mori/experts/experts.hpp"
#include "mori/nn/adam.hpp"
#include "mori/training/config.hpp"
#include "mori/training/losses.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <random>

namespace mori::training {

struct Batch {
    Matrix<float> s, a, r, s2, done;
    std::vector<int> g;
};

Batch make_batch(const std::vector<buffers::Sample>& samples);
Batch make_batch(const std::vector<buffers::Transition>& transitions);

// Mean losses over the updates performed since the last reset.
struct LossLog {
    double bc = 0, dbc = 0, critic = 0, actor = 0, gate = 0, alpha = 0, dqn = 0;
    double gate_variance = 0, gate_specialization = 0, gate_load = 0, gate_entropy = 0;
    double awac = 0, alpha_value = 0;
    int updates = 0;

    void add(const LossLog& o);
    LossLog mean() const;
};

// Owns the bundle, optimizer states and the learner RNG. A loss that turns
// non-finite skips its step; three consecutive skips raise NumericalError.
class Learner {
public:
    Learner(const RunConfig& config, experts::ExpertBundle bundle);

    LossLog offline_iteration(const buffers::BufferSet& buffers);
    LossLog online_update(buffers::BufferSet& buffers);

    experts::ExpertBundle& bundle() { return bundle_; }
    const experts::ExpertBundle& bundle() const { return bundle_; }
    std::int64_t updates() const { return updates_; }
    std::int64_t skipped() const { return skipped_; }
    const RunConfig& config() const { return cfg_; }

private:
    struct Opt {
        nn::AdamState adam;
    };

    Batch demo_batch(const buffers::BufferSet& b);
    Matrix<float> noise(Eigen::Index rows);
    void critic_step(const Batch& b, LossLog& log);
    void awac_step(const Batch& b, LossLog& log);
    void sac_step(const Batch& b, LossLog& log);
    void bc_step(const Batch& b, LossLog& log);
    void dbc_step(const Batch& b, LossLog& log);
    void gate_step(const Batch& b, LossLog& log);
    void dqn_step(const Batch& b, LossLog& log);
    void polyak();
    template <typename Fn>
    void guarded(const char* term, Fn&& fn);

    RunConfig cfg_;
    experts::ExpertBundle bundle_;
    std::mt19937_64 rng_;
    Opt bc_, rl_, q1_, q2_, dbc_, gate_, alpha_, dqn_;
    std::int64_t updates_ = 0;
    std::int64_t skipped_ = 0;
    int consecutive_skips_ = 0;
};

// ---- rollouts ----

struct Override {
    env::ArmAction arm;
    env::GripperAction grip;
};

// Anything allowed to take over the arm and gripper for a step: the scripted
// oracle, a live session controller, or nothing.
class InterventionSource {
public:
    virtual ~InterventionSource() = default;
    virtual void begin_episode(const env::EnvState&) {}
    virtual std::optional<Override> poll(const env::EnvState& state, const env::TaskSpec& task) = 0;
    // Tag recorded on the transitions this source produces.
    virtual buffers::Actor actor() const { return buffers::Actor::oracle; }
};

class NoInterventions : public InterventionSource {
public:
    std::optional<Override> poll(const env::EnvState&, const env::TaskSpec&) override { return std::nullopt; }
};

class OracleInterventions : public InterventionSource {
public:
    explicit OracleInterventions(oracle::InterventionRule rule, env::TaskId task);
    void begin_episode(const env::EnvState& state) override;
    std::optional<Override> poll(const env::EnvState& state, const env::TaskSpec& task) override;

private:
    oracle::InterventionTracker tracker_;
    oracle::OraclePolicy policy_;
};

struct StepView {
    int episode = 0;
    int step = 0;
    const env::EnvState* before = nullptr;
    const env::EnvState* after = nullptr;
    const buffers::Transition* transition = nullptr;
    experts::GateDecision decision;
};

struct EpisodeRecord {
    int episode = 0;
    std::uint64_t env_seed = 0;
    bool success = false;
    int length = 0;
    int intervened_steps = 0;
    double rl_ratio = 0.0;  // over policy-controlled steps
    double demo_ratio = 0.0;
    double auto_success_ratio = 0.0;
    std::size_t replay_size = 0;
    LossLog losses;
};

// Callbacks for live observers such as the session server. paused() is
// polled between steps; while it returns true the learner keeps training.
class RolloutObserver {
public:
    virtual ~RolloutObserver() = default;
    virtual void on_episode_start(int /*episode*/, const env::EnvState&) {}
    virtual void on_step(const StepView&) {}
    virtual void on_episode_end(const EpisodeRecord&) {}
    virtual bool paused() { return false; }
    virtual bool stop_requested() { return false; }
};

struct RolloutResult {
    buffers::Episode episode;
    std::vector<experts::GateDecision> decisions;  // one per step
    std::vector<double> displacement;              // end-effector travel per step
    bool success = false;
};

// One episode. `between_steps` runs after every environment step (the
// interleaved learner hook).
RolloutResult rollout(const experts::ExpertBundle& bundle, const env::TaskSpec& task, std::uint64_t env_seed,
                      const experts::ActOptions& opt, std::mt19937_64& rng, InterventionSource& source,
                      const std::function<void(const StepView&)>& on_step = {},
                      const std::function<void()>& between_steps = {});

// ---- pipelines ----

std::uint64_t episode_seed(std::uint64_t run_seed, std::uint64_t index, std::uint64_t stream);

std::vector<buffers::Episode> collect_demos(const env::TaskSpec& task, int n, double noise, std::uint64_t seed);

struct PretrainLog {
    std::vector<LossLog> iterations;  // one entry per offline iteration
};

experts::ExpertBundle pretrain(const RunConfig& cfg, const buffers::BufferSet& buffers, PretrainLog* log = nullptr);
experts::ExpertBundle pretrain(const RunConfig& cfg, const std::vector<buffers::Episode>& demos,
                               PretrainLog* log = nullptr);

struct TrainMetrics {
    std::vector<EpisodeRecord> episodes;
    std::vector<std::pair<std::int64_t, LossLog>> updates;  // (update index, window mean)
    double wall_clock_s = 0.0;
    std::int64_t skipped_steps = 0;
};

struct TrainOptions {
    std::optional<std::filesystem::path> run_dir;  // metrics, checkpoints, trajectories
    InterventionSource* source = nullptr;          // defaults to the configured oracle rule
    RolloutObserver* observer = nullptr;
};

struct TrainResult {
    experts::ExpertBundle bundle;
    TrainMetrics metrics;
};

TrainResult train_online(const RunConfig& cfg, experts::ExpertBundle bundle, buffers::BufferSet& buffers,
                         const TrainOptions& options = {});

struct SwitchStats {
    double switch_mean = 0.0, switch_std = 0.0;
    double steady_mean = 0.0, steady_std = 0.0;
    std::int64_t switch_steps = 0, steady_steps = 0;
    double ratio() const { return steady_mean > 0.0 ? switch_mean / steady_mean : 0.0; }
};

struct EvalResult {
    double success_rate = 0.0;
    double mean_length = 0.0;
    double rl_ratio = 0.0;
    SwitchStats switches;
    std::vector<RolloutResult> rollouts;
};

// Deterministic-mode rollouts without interventions or learning.
EvalResult evaluate(const experts::ExpertBundle& bundle, const env::TaskSpec& task, int n_episodes,
                    std::uint64_t seed, experts::Selection selection = experts::Selection::gated,
                    experts::GripperSource gripper = experts::GripperSource::dbc);

std::string episode_record_json(const EpisodeRecord& r);
std::string update_record_json(std::int64_t update, const LossLog& l);

}  // namespace mori::training
