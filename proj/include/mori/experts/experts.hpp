#pragma once

#include "mori/env/env.hpp"
#include "mori/nn/checkpoint.hpp"
#include "mori/nn/heads.hpp"
#include "mori/nn/mlp.hpp"

#include <array>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <vector>

namespace mori::experts {

using nn::MlpSpec;
using nn::ParamVector;

struct Architecture {
    int obs_dim = 25;
    std::vector<int> hidden{256, 256};
    std::vector<int> gate_hidden{64, 64};
    bool operator==(const Architecture&) const = default;
};

// Actor outputs are [mean(2) | log_std(2)]; BC means are tanh-bounded, RL
// means are pre-squash.
struct ExpertBundle {
    Architecture arch;
    MlpSpec actor_spec, critic_spec, dbc_spec, gate_spec, dqn_spec;

    ParamVector bc, rl;
    ParamVector q1, q2, q1_targ, q2_targ;
    ParamVector dbc;
    ParamVector gate;
    ParamVector alpha_log;  // single scalar
    bool has_dqn = false;
    ParamVector dqn, dqn_targ;

    double alpha() const { return std::exp(static_cast<double>(alpha_log.values()[0])); }
    bool operator==(const ExpertBundle&) const = default;
};

MlpSpec actor_spec(const Architecture& a);
MlpSpec critic_spec(const Architecture& a);
MlpSpec dbc_spec(const Architecture& a);
MlpSpec gate_spec(const Architecture& a);
ParamVector scalar_param(const std::string& name, float value);

// Fresh bundle: targets copy the critics, the gate's output layer is zeroed.
ExpertBundle make_bundle(const Architecture& arch, std::uint64_t seed, double init_alpha, bool with_dqn);

using Arm = std::array<double, 2>;

struct BcOutput {
    Arm action{};
    double sigma = 0.0;
};

struct RlOutput {
    Arm action{};
    double logprob = 0.0;
    double sigma = 0.0;
};

// Stochastic modes draw from `rng`; deterministic modes ignore it.
BcOutput bc_act(const ExpertBundle& b, std::span<const float> state, bool stochastic, std::mt19937_64& rng);
RlOutput rl_act(const ExpertBundle& b, std::span<const float> state, bool stochastic, std::mt19937_64& rng);
nn::GaussianHead bc_head(const ExpertBundle& b, std::span<const float> state);
nn::GaussianHead rl_head(const ExpertBundle& b, std::span<const float> state);

double q_min(const ExpertBundle& b, std::span<const float> state, const Arm& action, bool use_targets);

// Ties resolve to the earlier class in open < hold < closed.
env::GripperMode argmax_mode(std::span<const double> scores);
env::GripperMode dbc_act(const ExpertBundle& b, std::span<const float> state);
std::array<double, 3> dqn_values(const ExpertBundle& b, std::span<const float> state);

enum class Expert { bc, rl };
std::string to_string(Expert e);

struct GateDecision {
    double w_bc = 0.5;
    double w_rl = 0.5;
    double sigma_bc = 0.0;
    double sigma_rl = 0.0;
    Expert selected = Expert::rl;
};

// Hard selection: bc iff w_bc > w_rl.
Expert select(double w_bc, double w_rl);
GateDecision decide(double logit_bc, double logit_rl, double sigma_bc, double sigma_rl);
GateDecision gate(const ExpertBundle& b, std::span<const float> state);

enum class Selection { gated, bc_only, rl_only };
enum class GripperSource { dbc, dqn };

struct ActOptions {
    bool stochastic = false;
    Selection selection = Selection::gated;
    GripperSource gripper = GripperSource::dbc;
    double dqn_epsilon = 0.0;  // applied only when stochastic
};

struct Composed {
    env::ArmAction arm;
    env::GripperAction grip;
    GateDecision decision;
};

Composed compose_action(const ExpertBundle& b, std::span<const float> state, const ActOptions& opt,
                        std::mt19937_64& rng);

void save_bundle(const std::filesystem::path& dir, const ExpertBundle& b, std::int64_t step,
                 const std::map<std::string, std::string>& meta = {});
ExpertBundle load_bundle(const std::filesystem::path& dir, std::int64_t* step = nullptr,
                         std::map<std::string, std::string>* meta = nullptr);

}  // namespace mori::experts
