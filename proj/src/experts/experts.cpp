#include "mori/experts/experts.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mori::experts {

using env::kArmDims;
using env::kGripperModes;

MlpSpec actor_spec(const Architecture& a) { return {a.obs_dim, a.hidden, nn::Activation::relu, 2 * kArmDims}; }
MlpSpec critic_spec(const Architecture& a) {
    return {a.obs_dim + kArmDims, a.hidden, nn::Activation::relu, 1};
}
MlpSpec dbc_spec(const Architecture& a) { return {a.obs_dim, a.hidden, nn::Activation::relu, kGripperModes}; }
MlpSpec gate_spec(const Architecture& a) { return {a.obs_dim, a.gate_hidden, nn::Activation::relu, 2}; }

ParamVector scalar_param(const std::string& name, float value) {
    ParamVector p({nn::TensorLayout{name, {1}}});
    p.values()[0] = value;
    return p;
}

ExpertBundle make_bundle(const Architecture& arch, std::uint64_t seed, double init_alpha, bool with_dqn) {
    if (arch.obs_dim < 1) throw nn::ConfigError("observation dimension must be >= 1");
    if (!(init_alpha > 0.0)) throw nn::ConfigError("initial temperature must be > 0");
    ExpertBundle b;
    b.arch = arch;
    b.actor_spec = actor_spec(arch);
    b.critic_spec = critic_spec(arch);
    b.dbc_spec = dbc_spec(arch);
    b.gate_spec = gate_spec(arch);
    b.dqn_spec = b.dbc_spec;
    for (const auto* s : {&b.actor_spec, &b.critic_spec, &b.gate_spec}) s->validate();

    std::mt19937_64 rng(seed);
    b.bc = nn::init_mlp(b.actor_spec, rng);
    b.rl = nn::init_mlp(b.actor_spec, rng);
    b.q1 = nn::init_mlp(b.critic_spec, rng);
    b.q2 = nn::init_mlp(b.critic_spec, rng);
    b.q1_targ = b.q1;
    b.q2_targ = b.q2;
    b.dbc = nn::init_mlp(b.dbc_spec, rng);
    b.gate = nn::init_mlp(b.gate_spec, rng);
    nn::zero_output_layer(b.gate_spec, b.gate);
    b.alpha_log = scalar_param("alpha_log", static_cast<float>(std::log(init_alpha)));
    b.has_dqn = with_dqn;
    if (with_dqn) {
        b.dqn = nn::init_mlp(b.dqn_spec, rng);
        b.dqn_targ = b.dqn;
    }
    return b;
}

namespace {

nn::GaussianHead head_from(const std::vector<float>& out, bool tanh_mean) {
    nn::GaussianHead h;
    for (int i = 0; i < kArmDims; ++i) {
        const double m = out[i];
        h.mean.push_back(tanh_mean ? std::tanh(m) : m);
        h.log_std.push_back(nn::clamp_log_std(out[kArmDims + i]));
    }
    return h;
}

std::vector<float> critic_input(std::span<const float> state, const Arm& a) {
    std::vector<float> x(state.begin(), state.end());
    for (double v : a) x.push_back(static_cast<float>(v));
    return x;
}

}  // namespace

nn::GaussianHead bc_head(const ExpertBundle& b, std::span<const float> state) {
    return head_from(nn::forward(b.bc, b.actor_spec, state), true);
}

nn::GaussianHead rl_head(const ExpertBundle& b, std::span<const float> state) {
    return head_from(nn::forward(b.rl, b.actor_spec, state), false);
}

BcOutput bc_act(const ExpertBundle& b, std::span<const float> state, bool stochastic, std::mt19937_64& rng) {
    const auto h = bc_head(b, state);
    BcOutput out;
    out.sigma = h.variance();
    std::normal_distribution<double> n(0.0, 1.0);
    for (int i = 0; i < kArmDims; ++i) {
        double a = h.mean[i];
        if (stochastic) a += std::exp(h.log_std[i]) * n(rng);
        out.action[i] = std::clamp(a, -1.0, 1.0);
    }
    return out;
}

RlOutput rl_act(const ExpertBundle& b, std::span<const float> state, bool stochastic, std::mt19937_64& rng) {
    const auto h = rl_head(b, state);
    RlOutput out;
    out.sigma = h.variance();
    std::normal_distribution<double> n(0.0, 1.0);
    for (int i = 0; i < kArmDims; ++i) {
        double u = h.mean[i];
        if (stochastic) u += std::exp(h.log_std[i]) * n(rng);
        out.action[i] = std::tanh(u);
    }
    out.logprob = nn::gaussian_logprob(h, out.action, true);
    return out;
}

double q_min(const ExpertBundle& b, std::span<const float> state, const Arm& action, bool use_targets) {
    const auto x = critic_input(state, action);
    const double v1 = nn::forward(use_targets ? b.q1_targ : b.q1, b.critic_spec, x)[0];
    const double v2 = nn::forward(use_targets ? b.q2_targ : b.q2, b.critic_spec, x)[0];
    return std::min(v1, v2);
}

env::GripperMode argmax_mode(std::span<const double> scores) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(scores.size()); ++i)
        if (scores[i] > scores[best]) best = i;
    return static_cast<env::GripperMode>(best);
}

env::GripperMode dbc_act(const ExpertBundle& b, std::span<const float> state) {
    const auto out = nn::forward(b.dbc, b.dbc_spec, state);
    const std::vector<double> logits(out.begin(), out.end());
    return argmax_mode(logits);
}

std::array<double, 3> dqn_values(const ExpertBundle& b, std::span<const float> state) {
    if (!b.has_dqn) throw nn::ConfigError("bundle has no gripper Q network");
    const auto out = nn::forward(b.dqn, b.dqn_spec, state);
    return {out[0], out[1], out[2]};
}

std::string to_string(Expert e) { return e == Expert::bc ? "bc" : "rl"; }

Expert select(double w_bc, double w_rl) { return w_bc > w_rl ? Expert::bc : Expert::rl; }

GateDecision decide(double logit_bc, double logit_rl, double sigma_bc, double sigma_rl) {
    const double m = std::max(logit_bc, logit_rl);
    const double e_bc = std::exp(logit_bc - m);
    const double e_rl = std::exp(logit_rl - m);
    GateDecision d;
    d.w_bc = e_bc / (e_bc + e_rl);
    d.w_rl = 1.0 - d.w_bc;
    d.sigma_bc = sigma_bc;
    d.sigma_rl = sigma_rl;
    d.selected = select(d.w_bc, d.w_rl);
    return d;
}

GateDecision gate(const ExpertBundle& b, std::span<const float> state) {
    const auto logits = nn::forward(b.gate, b.gate_spec, state);
    return decide(logits[0], logits[1], bc_head(b, state).variance(), rl_head(b, state).variance());
}

Composed compose_action(const ExpertBundle& b, std::span<const float> state, const ActOptions& opt,
                        std::mt19937_64& rng) {
    Composed c;
    c.decision = gate(b, state);
    if (opt.selection == Selection::bc_only) c.decision.selected = Expert::bc;
    if (opt.selection == Selection::rl_only) c.decision.selected = Expert::rl;

    const Arm a = c.decision.selected == Expert::bc ? bc_act(b, state, opt.stochastic, rng).action
                                                    : rl_act(b, state, opt.stochastic, rng).action;
    c.arm = env::ArmAction(a[0], a[1]);

    if (opt.gripper == GripperSource::dqn) {
        const auto q = dqn_values(b, state);
        env::GripperMode m = argmax_mode(q);
        if (opt.stochastic && opt.dqn_epsilon > 0.0) {
            std::uniform_real_distribution<double> u(0.0, 1.0);
            if (u(rng) < opt.dqn_epsilon) m = static_cast<env::GripperMode>(std::uniform_int_distribution<int>(0, 2)(rng));
        }
        c.grip = {m};
    } else {
        c.grip = {dbc_act(b, state)};
    }
    return c;
}

namespace {

std::string join(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "x" : "") + std::to_string(v[i]);
    return s;
}

std::vector<int> split_dims(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, 'x')) out.push_back(std::stoi(tok));
    return out;
}

}  // namespace

void save_bundle(const std::filesystem::path& dir, const ExpertBundle& b, std::int64_t step,
                 const std::map<std::string, std::string>& meta) {
    nn::Checkpoint ck;
    ck.step = step;
    ck.meta = meta;
    ck.meta["arch.obs_dim"] = std::to_string(b.arch.obs_dim);
    ck.meta["arch.hidden"] = join(b.arch.hidden);
    ck.meta["arch.gate_hidden"] = join(b.arch.gate_hidden);
    const auto actor = b.actor_spec.signature();
    const auto critic = b.critic_spec.signature();
    ck.nets = {{"bc_actor", actor, b.bc},          {"rl_actor", actor, b.rl},
               {"q1", critic, b.q1},               {"q2", critic, b.q2},
               {"q1_target", critic, b.q1_targ},   {"q2_target", critic, b.q2_targ},
               {"dbc", b.dbc_spec.signature(), b.dbc}, {"gate", b.gate_spec.signature(), b.gate},
               {"alpha_log", "scalar", b.alpha_log}};
    if (b.has_dqn) {
        ck.nets.push_back({"gripper_q", b.dqn_spec.signature(), b.dqn});
        ck.nets.push_back({"gripper_q_target", b.dqn_spec.signature(), b.dqn_targ});
    }
    nn::save_checkpoint(dir, ck);
}

ExpertBundle load_bundle(const std::filesystem::path& dir, std::int64_t* step,
                         std::map<std::string, std::string>* meta) {
    const auto ck = nn::load_checkpoint(dir);
    auto get = [&](const std::string& k) {
        auto it = ck.meta.find(k);
        if (it == ck.meta.end()) throw nn::ConfigError("checkpoint " + dir.string() + " lacks " + k);
        return it->second;
    };
    Architecture arch;
    arch.obs_dim = std::stoi(get("arch.obs_dim"));
    arch.hidden = split_dims(get("arch.hidden"));
    arch.gate_hidden = split_dims(get("arch.gate_hidden"));

    ExpertBundle b;
    b.arch = arch;
    b.actor_spec = actor_spec(arch);
    b.critic_spec = critic_spec(arch);
    b.dbc_spec = dbc_spec(arch);
    b.gate_spec = gate_spec(arch);
    b.dqn_spec = b.dbc_spec;

    auto take = [&](const std::string& name, const MlpSpec& spec) {
        const auto& n = ck.net(name);
        if (n.signature != spec.signature())
            throw nn::ConfigError("network " + name + " has signature " + n.signature + ", expected " +
                                  spec.signature());
        if (n.params.layout() != spec.layout()) throw nn::ConfigError("network " + name + " layout mismatch");
        return n.params;
    };
    b.bc = take("bc_actor", b.actor_spec);
    b.rl = take("rl_actor", b.actor_spec);
    b.q1 = take("q1", b.critic_spec);
    b.q2 = take("q2", b.critic_spec);
    b.q1_targ = take("q1_target", b.critic_spec);
    b.q2_targ = take("q2_target", b.critic_spec);
    b.dbc = take("dbc", b.dbc_spec);
    b.gate = take("gate", b.gate_spec);
    b.alpha_log = ck.net("alpha_log").params;
    if (b.alpha_log.size() != 1) throw nn::ConfigError("alpha_log must hold one value");
    for (const auto& n : ck.nets)
        if (n.name == "gripper_q") b.has_dqn = true;
    if (b.has_dqn) {
        b.dqn = take("gripper_q", b.dqn_spec);
        b.dqn_targ = take("gripper_q_target", b.dqn_spec);
    }
    if (step) *step = ck.step;
    if (meta) *meta = ck.meta;
    return b;
}

}  // namespace mori::experts
