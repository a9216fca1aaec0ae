#pragma once

#include "mori/env/env.hpp"
#include "mori/experts/experts.hpp"
#include "mori/oracle/oracle.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mori::training {

struct Ablation {
    bool no_bc_reg = false;
    bool gripper_dqn = false;
    bool bc_only = false;
    bool rl_only = false;
    bool operator==(const Ablation&) const = default;
};

struct LearningRates {
    double bc = 3e-4;
    double rl = 3e-4;
    double critic = 3e-4;
    double dbc = 3e-4;
    double gate = 3e-4;
    double alpha = 3e-4;
    double dqn = 3e-4;
    bool operator==(const LearningRates&) const = default;
};

struct RunConfig {
    env::TaskId task = env::TaskId::drawer_place;
    std::string task_file;  // optional JSON task definition for `task`; empty uses the defaults
    std::uint64_t seed = 0;

    experts::Architecture arch;

    int n_demos = 20;
    double demo_noise = 0.02;
    int n_offline = 5000;
    int online_episodes = 100;

    int batch = 256;
    LearningRates lr;
    double gamma = 0.97;
    double lambda = 1.0;
    double beta_reg = 0.1;
    double alpha_spec = 0.1;
    double beta_load = 0.05;
    double gamma_ent = 0.01;
    double tau = 0.005;
    double target_entropy = -2.0;
    double init_alpha = 0.1;
    int utd = 2;
    int awac_samples = 4;
    double awac_clip = 20.0;
    double bc_nll_weight = 0.1;
    double dqn_epsilon = 0.1;
    bool stochastic_rollouts = true;

    Ablation ablation;
    oracle::InterventionRule intervention;

    std::size_t buffer_capacity = 500000;
    int checkpoint_every = 0;  // online episodes between checkpoints, 0 disables
    int metrics_every = 100;   // learner updates between update records
    int eval_episodes = 20;

    // Derived from the ablation flags.
    double effective_beta_reg() const { return ablation.no_bc_reg ? 0.0 : beta_reg; }
    experts::Selection selection() const;
    experts::GripperSource gripper_source() const;

    void validate() const;
    env::TaskSpec task_spec() const;
    bool operator==(const RunConfig&) const = default;
};

// Key-value view used for configuration files and dot-path overrides, e.g.
// "lr.critic=1e-3" or "intervention.trigger=off".
std::string to_json(const RunConfig& c, int indent = 2);
RunConfig config_from_json(const std::string& text);
RunConfig load_config(const std::filesystem::path& file);
void save_config(const std::filesystem::path& file, const RunConfig& c);
void apply_override(RunConfig& c, const std::string& assignment);

// Applies one of the named variants: base, no_bc_reg, gripper_dqn, bc_only, rl_only.
void apply_variant(RunConfig& c, const std::string& variant);

}  // namespace mori::training
