#include "mori/training/config.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace mori::training {

using nlohmann::json;
using nn::ConfigError;

experts::Selection RunConfig::selection() const {
    if (ablation.bc_only) return experts::Selection::bc_only;
    if (ablation.rl_only) return experts::Selection::rl_only;
    return experts::Selection::gated;
}

experts::GripperSource RunConfig::gripper_source() const {
    return ablation.gripper_dqn ? experts::GripperSource::dqn : experts::GripperSource::dbc;
}

void RunConfig::validate() const {
    auto need = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError("invalid config: " + what);
    };
    need(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0, 1)");
    need(lambda > 0.0, "lambda must be > 0");
    need(beta_reg >= 0.0 && alpha_spec >= 0.0 && beta_load >= 0.0 && gamma_ent >= 0.0,
         "loss coefficients must be >= 0");
    need(tau >= 0.0 && tau <= 1.0, "tau must lie in [0, 1]");
    need(utd >= 1, "utd must be >= 1");
    need(batch >= 2, "batch must be >= 2");
    need(n_demos >= 1, "n_demos must be >= 1");
    need(n_offline >= 0 && online_episodes >= 0, "iteration counts must be >= 0");
    need(awac_samples >= 1 && awac_clip > 0.0, "awac_samples >= 1 and awac_clip > 0");
    need(init_alpha > 0.0, "init_alpha must be > 0");
    need(dqn_epsilon >= 0.0 && dqn_epsilon <= 1.0, "dqn_epsilon must lie in [0, 1]");
    need(!(ablation.bc_only && ablation.rl_only), "bc_only and rl_only are mutually exclusive");
    need(metrics_every >= 1 && checkpoint_every >= 0 && eval_episodes >= 1, "cadences must be positive");
    need(buffer_capacity >= 1, "buffer_capacity must be >= 1");
    for (double v : {lr.bc, lr.rl, lr.critic, lr.dbc, lr.gate, lr.alpha, lr.dqn}) need(v > 0.0, "learning rates must be > 0");
    need(arch.obs_dim == env::observation_dim(task), "arch.obs_dim does not match the task observation");
    need(!arch.hidden.empty() && !arch.gate_hidden.empty(), "hidden layer lists must be non-empty");
    intervention.validate();
}

env::TaskSpec RunConfig::task_spec() const {
    if (task_file.empty()) return env::default_task(task);
    env::TaskSpec t;
    try {
        t = env::load_task(task_file);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (t.id != task)
        throw ConfigError("task file " + task_file + " defines " + env::to_string(t.id) + " but the run is for " +
                          env::to_string(task));
    return t;
}

namespace {

json encode(const RunConfig& c) {
    return json{
        {"task", env::to_string(c.task)},
        {"task_file", c.task_file},
        {"seed", c.seed},
        {"arch", {{"obs_dim", c.arch.obs_dim}, {"hidden", c.arch.hidden}, {"gate_hidden", c.arch.gate_hidden}}},
        {"n_demos", c.n_demos},
        {"demo_noise", c.demo_noise},
        {"n_offline", c.n_offline},
        {"online_episodes", c.online_episodes},
        {"batch", c.batch},
        {"lr",
         {{"bc", c.lr.bc},
          {"rl", c.lr.rl},
          {"critic", c.lr.critic},
          {"dbc", c.lr.dbc},
          {"gate", c.lr.gate},
          {"alpha", c.lr.alpha},
          {"dqn", c.lr.dqn}}},
        {"gamma", c.gamma},
        {"lambda", c.lambda},
        {"beta_reg", c.beta_reg},
        {"alpha_spec", c.alpha_spec},
        {"beta_load", c.beta_load},
        {"gamma_ent", c.gamma_ent},
        {"tau", c.tau},
        {"target_entropy", c.target_entropy},
        {"init_alpha", c.init_alpha},
        {"utd", c.utd},
        {"awac_samples", c.awac_samples},
        {"awac_clip", c.awac_clip},
        {"bc_nll_weight", c.bc_nll_weight},
        {"dqn_epsilon", c.dqn_epsilon},
        {"stochastic_rollouts", c.stochastic_rollouts},
        {"ablation",
         {{"no_bc_reg", c.ablation.no_bc_reg},
          {"gripper_dqn", c.ablation.gripper_dqn},
          {"bc_only", c.ablation.bc_only},
          {"rl_only", c.ablation.rl_only}}},
        {"intervention",
         {{"trigger", oracle::to_string(c.intervention.trigger)},
          {"stuck_steps", c.intervention.stuck_steps},
          {"progress_eps", c.intervention.progress_eps},
          {"region_margin", c.intervention.region_margin},
          {"max_per_episode", c.intervention.max_per_episode},
          {"handover_steps", c.intervention.handover_steps}}},
        {"buffer_capacity", c.buffer_capacity},
        {"checkpoint_every", c.checkpoint_every},
        {"metrics_every", c.metrics_every},
        {"eval_episodes", c.eval_episodes},
    };
}

RunConfig decode(const json& j) {
    RunConfig c;
    c.task = env::task_from_string(j.at("task").get<std::string>());
    c.task_file = j.at("task_file").get<std::string>();
    c.seed = j.at("seed").get<std::uint64_t>();
    const auto& a = j.at("arch");
    c.arch.obs_dim = a.at("obs_dim").get<int>();
    c.arch.hidden = a.at("hidden").get<std::vector<int>>();
    c.arch.gate_hidden = a.at("gate_hidden").get<std::vector<int>>();
    c.n_demos = j.at("n_demos").get<int>();
    c.demo_noise = j.at("demo_noise").get<double>();
    c.n_offline = j.at("n_offline").get<int>();
    c.online_episodes = j.at("online_episodes").get<int>();
    c.batch = j.at("batch").get<int>();
    const auto& lr = j.at("lr");
    c.lr = {lr.at("bc"), lr.at("rl"), lr.at("critic"), lr.at("dbc"), lr.at("gate"), lr.at("alpha"), lr.at("dqn")};
    c.gamma = j.at("gamma").get<double>();
    c.lambda = j.at("lambda").get<double>();
    c.beta_reg = j.at("beta_reg").get<double>();
    c.alpha_spec = j.at("alpha_spec").get<double>();
    c.beta_load = j.at("beta_load").get<double>();
    c.gamma_ent = j.at("gamma_ent").get<double>();
    c.tau = j.at("tau").get<double>();
    c.target_entropy = j.at("target_entropy").get<double>();
    c.init_alpha = j.at("init_alpha").get<double>();
    c.utd = j.at("utd").get<int>();
    c.awac_samples = j.at("awac_samples").get<int>();
    c.awac_clip = j.at("awac_clip").get<double>();
    c.bc_nll_weight = j.at("bc_nll_weight").get<double>();
    c.dqn_epsilon = j.at("dqn_epsilon").get<double>();
    c.stochastic_rollouts = j.at("stochastic_rollouts").get<bool>();
    const auto& ab = j.at("ablation");
    c.ablation = {ab.at("no_bc_reg"), ab.at("gripper_dqn"), ab.at("bc_only"), ab.at("rl_only")};
    const auto& iv = j.at("intervention");
    c.intervention.trigger = oracle::trigger_from_string(iv.at("trigger").get<std::string>());
    c.intervention.stuck_steps = iv.at("stuck_steps").get<int>();
    c.intervention.progress_eps = iv.at("progress_eps").get<double>();
    c.intervention.region_margin = iv.at("region_margin").get<double>();
    c.intervention.max_per_episode = iv.at("max_per_episode").get<int>();
    c.intervention.handover_steps = iv.at("handover_steps").get<int>();
    c.buffer_capacity = j.at("buffer_capacity").get<std::size_t>();
    c.checkpoint_every = j.at("checkpoint_every").get<int>();
    c.metrics_every = j.at("metrics_every").get<int>();
    c.eval_episodes = j.at("eval_episodes").get<int>();
    return c;
}

// Overlays `patch` onto `base`, rejecting keys absent from the schema.
void merge_checked(json& base, const json& patch, const std::string& prefix) {
    if (!patch.is_object()) throw ConfigError("config section '" + prefix + "' must be an object");
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!base.contains(it.key())) throw ConfigError("unknown config key '" + path + "'");
        json& dst = base[it.key()];
        if (dst.is_object())
            merge_checked(dst, it.value(), path);
        else
            dst = it.value();
    }
}

RunConfig decode_checked(const json& j) {
    try {
        return decode(j);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config value has the wrong type: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("invalid config value: ") + e.what());
    }
}

}  // namespace

std::string to_json(const RunConfig& c, int indent) { return encode(c).dump(indent); }

RunConfig config_from_json(const std::string& text) {
    json patch;
    try {
        patch = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    json base = encode(RunConfig{});
    merge_checked(base, patch, "");
    RunConfig c = decode_checked(base);
    if (!patch.contains("arch") || !patch["arch"].contains("obs_dim")) c.arch.obs_dim = env::observation_dim(c.task);
    c.validate();
    return c;
}

RunConfig load_config(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot read config " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_json(ss.str());
}

void save_config(const std::filesystem::path& file, const RunConfig& c) {
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    std::ofstream out(file);
    if (!out) throw ConfigError("cannot write config " + file.string());
    out << to_json(c) << "\n";
}

void apply_override(RunConfig& c, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + assignment);
    const std::string path = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::parse_error&) {
        value = raw;  // bare strings such as task names
    }
    json base = encode(c);
    json* node = &base;
    std::stringstream ss(path);
    std::string key;
    std::vector<std::string> keys;
    while (std::getline(ss, key, '.')) keys.push_back(key);
    for (std::size_t i = 0; i < keys.size(); ++i) {
        if (!node->is_object() || !node->contains(keys[i])) throw ConfigError("unknown config key '" + path + "'");
        node = &(*node)[keys[i]];
        if (i + 1 < keys.size() && !node->is_object()) throw ConfigError("unknown config key '" + path + "'");
    }
    if (node->is_object()) throw ConfigError("override must name a leaf key: " + path);
    *node = value;
    RunConfig out = decode_checked(base);
    if (path == "task") out.arch.obs_dim = env::observation_dim(out.task);
    out.validate();
    c = out;
}

void apply_variant(RunConfig& c, const std::string& variant) {
    c.ablation = Ablation{};
    if (variant == "base" || variant == "mori") return;
    if (variant == "no_bc_reg") c.ablation.no_bc_reg = true;
    else if (variant == "gripper_dqn") c.ablation.gripper_dqn = true;
    else if (variant == "bc_only") c.ablation.bc_only = true;
    else if (variant == "rl_only") c.ablation.rl_only = true;
    else throw ConfigError("unknown variant '" + variant + "' (expected base, no_bc_reg, gripper_dqn, bc_only, rl_only)");
}

}  // namespace mori::training
