#include "mori/training/trainer.hpp"

#include "mori/training/losses.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <thread>

namespace mori::training {

using buffers::BufferSet;
using buffers::Transition;
using experts::ExpertBundle;
using nlohmann::json;
using nn::ParamVector;

// ---- batches ----

namespace {

template <typename Get>
Batch build_batch(std::size_t n, Get get) {
    if (n == 0) throw nn::ConfigError("empty batch");
    const auto dim = static_cast<Eigen::Index>(get(0).state.size());
    const auto rows = static_cast<Eigen::Index>(n);
    Batch b;
    b.s.resize(rows, dim);
    b.s2.resize(rows, dim);
    b.a.resize(rows, kArm);
    b.r.resize(rows, 1);
    b.done.resize(rows, 1);
    b.g.resize(n);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const Transition& t = get(static_cast<std::size_t>(i));
        if (static_cast<Eigen::Index>(t.state.size()) != dim || static_cast<Eigen::Index>(t.next_state.size()) != dim)
            throw nn::ConfigError("transitions in one batch have different state sizes");
        for (Eigen::Index j = 0; j < dim; ++j) {
            b.s(i, j) = t.state[j];
            b.s2(i, j) = t.next_state[j];
        }
        b.a(i, 0) = t.arm_action[0];
        b.a(i, 1) = t.arm_action[1];
        b.r(i, 0) = t.reward;
        b.done(i, 0) = t.done ? 1.0f : 0.0f;
        b.g[i] = static_cast<int>(t.gripper_action);
    }
    return b;
}

}  // namespace

Batch make_batch(const std::vector<buffers::Sample>& samples) {
    return build_batch(samples.size(), [&](std::size_t i) -> const Transition& { return *samples[i].transition; });
}

Batch make_batch(const std::vector<Transition>& transitions) {
    return build_batch(transitions.size(), [&](std::size_t i) -> const Transition& { return transitions[i]; });
}

// ---- loss log ----

void LossLog::add(const LossLog& o) {
    bc += o.bc;
    dbc += o.dbc;
    critic += o.critic;
    actor += o.actor;
    gate += o.gate;
    alpha += o.alpha;
    dqn += o.dqn;
    gate_variance += o.gate_variance;
    gate_specialization += o.gate_specialization;
    gate_load += o.gate_load;
    gate_entropy += o.gate_entropy;
    awac += o.awac;
    alpha_value += o.alpha_value;
    updates += o.updates;
}

LossLog LossLog::mean() const {
    if (updates <= 1) return *this;
    LossLog m = *this;
    const double k = 1.0 / updates;
    for (double* v : {&m.bc, &m.dbc, &m.critic, &m.actor, &m.gate, &m.alpha, &m.dqn, &m.gate_variance,
                      &m.gate_specialization, &m.gate_load, &m.gate_entropy, &m.awac, &m.alpha_value})
        *v *= k;
    return m;
}

// ---- learner ----

Learner::Learner(const RunConfig& config, ExpertBundle bundle)
    : cfg_(config), bundle_(std::move(bundle)), rng_(config.seed * 0x9e3779b97f4a7c15ull + 17) {
    cfg_.validate();
    if (cfg_.ablation.gripper_dqn && !bundle_.has_dqn)
        throw nn::ConfigError("gripper_dqn ablation needs a bundle with a gripper Q network");
}

template <typename Fn>
void Learner::guarded(const char* term, Fn&& fn) {
    try {
        if (!fn()) {
            ++skipped_;
            ++consecutive_skips_;
        } else {
            consecutive_skips_ = 0;
        }
    } catch (const nn::NumericalError& e) {
        ++skipped_;
        ++consecutive_skips_;
        if (consecutive_skips_ >= 3)
            throw nn::NumericalError(term, std::string("three consecutive non-finite steps, last in ") + term + ": " +
                                               e.what());
        return;
    }
    if (consecutive_skips_ >= 3)
        throw nn::NumericalError(term, std::string("three consecutive rejected gradients, last in ") + term);
}

Matrix<float> Learner::noise(Eigen::Index rows) {
    std::normal_distribution<float> n(0.0f, 1.0f);
    Matrix<float> e(rows, kArm);
    for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = n(rng_);
    return e;
}

Batch Learner::demo_batch(const BufferSet& b) {
    const auto& demo = b.demo();
    if (demo.empty()) throw nn::ConfigError("no demonstrations to train on");
    std::uniform_int_distribution<std::size_t> idx(0, demo.size() - 1);
    std::vector<Transition> picked;
    picked.reserve(static_cast<std::size_t>(cfg_.batch));
    for (int i = 0; i < cfg_.batch; ++i) picked.push_back(demo[idx(rng_)]);
    return make_batch(picked);
}

namespace {

void check_finite(float v, const char* term) {
    if (!std::isfinite(v)) throw nn::NumericalError(term, std::string("non-finite ") + term + " loss");
}

}  // namespace

void Learner::critic_step(const Batch& b, LossLog& log) {
    guarded("critic", [&] {
        const Matrix<float> eps = noise(b.s.rows());
        const Matrix<float> y = critic_target(bundle_.actor_spec, bundle_.rl, bundle_.critic_spec, bundle_.q1_targ,
                                              bundle_.q2_targ, b.s2, b.r, b.done, eps,
                                              static_cast<float>(cfg_.gamma));
        Tape<float> tape;
        auto q1 = nn::bind(tape, bundle_.q1, true);
        auto q2 = nn::bind(tape, bundle_.q2, true);
        auto loss = loss_critic(bundle_.critic_spec, q1, q2, tape.constant(b.s), tape.constant(b.a), tape.constant(y));
        check_finite(loss.total.scalar(), "critic");
        tape.backward(loss.total);
        log.critic += loss.total.scalar();
        const bool ok1 = nn::adam_step(q1_.adam, bundle_.q1, nn::collect_grad(tape, q1, bundle_.q1), cfg_.lr.critic);
        const bool ok2 = nn::adam_step(q2_.adam, bundle_.q2, nn::collect_grad(tape, q2, bundle_.q2), cfg_.lr.critic);
        return ok1 && ok2;
    });
}

void Learner::awac_step(const Batch& b, LossLog& log) {
    guarded("awac_actor", [&] {
        std::vector<Matrix<float>> eps;
        for (int k = 0; k < cfg_.awac_samples; ++k) eps.push_back(noise(b.s.rows()));
        const Matrix<float> adv = awac_advantage(bundle_.actor_spec, bundle_.rl, bundle_.critic_spec, bundle_.q1,
                                                 bundle_.q2, b.s, b.a, eps);
        Matrix<float> w(adv.rows(), 1);
        for (Eigen::Index i = 0; i < adv.rows(); ++i)
            w(i, 0) = awac_weight(adv(i, 0), static_cast<float>(cfg_.lambda), static_cast<float>(cfg_.awac_clip));
        Tape<float> tape;
        auto rl = nn::bind(tape, bundle_.rl, true);
        auto loss = loss_awac_actor(bundle_.actor_spec, rl, tape.constant(b.s), b.a, w);
        check_finite(loss.scalar(), "awac_actor");
        tape.backward(loss);
        log.awac += loss.scalar();
        return nn::adam_step(rl_.adam, bundle_.rl, nn::collect_grad(tape, rl, bundle_.rl), cfg_.lr.rl);
    });
}

void Learner::sac_step(const Batch& b, LossLog& log) {
    Matrix<float> logpi;
    guarded("sac_actor", [&] {
        const Matrix<float> eps = noise(b.s.rows());
        const Matrix<float> bc_mean = actor_eval(bundle_.actor_spec, bundle_.bc, b.s, true).first;
        Tape<float> tape;
        auto rl = nn::bind(tape, bundle_.rl, true);
        auto q1 = nn::bind(tape, bundle_.q1, false);
        auto q2 = nn::bind(tape, bundle_.q2, false);
        auto loss = loss_sac_actor(bundle_.actor_spec, rl, bundle_.critic_spec, q1, q2, tape.constant(b.s), eps,
                                   static_cast<float>(bundle_.alpha()),
                                   static_cast<float>(cfg_.effective_beta_reg()), bc_mean);
        check_finite(loss.total.scalar(), "sac_actor");
        tape.backward(loss.total);
        log.actor += loss.total.scalar();
        logpi = loss.logpi.value();
        return nn::adam_step(rl_.adam, bundle_.rl, nn::collect_grad(tape, rl, bundle_.rl), cfg_.lr.rl);
    });
    if (logpi.size() == 0) return;
    guarded("alpha", [&] {
        Tape<float> tape;
        auto a = nn::bind(tape, bundle_.alpha_log, true);
        auto loss = loss_alpha(a.tensors[0], logpi, static_cast<float>(cfg_.target_entropy));
        check_finite(loss.scalar(), "alpha");
        tape.backward(loss);
        log.alpha += loss.scalar();
        return nn::adam_step(alpha_.adam, bundle_.alpha_log, nn::collect_grad(tape, a, bundle_.alpha_log),
                             cfg_.lr.alpha);
    });
    log.alpha_value += bundle_.alpha();
}

void Learner::bc_step(const Batch& b, LossLog& log) {
    guarded("bc", [&] {
        Tape<float> tape;
        auto p = nn::bind(tape, bundle_.bc, true);
        auto loss = loss_bc(bundle_.actor_spec, p, tape.constant(b.s), tape.constant(b.a),
                            static_cast<float>(cfg_.bc_nll_weight));
        check_finite(loss.total.scalar(), "bc");
        tape.backward(loss.total);
        log.bc += loss.total.scalar();
        return nn::adam_step(bc_.adam, bundle_.bc, nn::collect_grad(tape, p, bundle_.bc), cfg_.lr.bc);
    });
}

void Learner::dbc_step(const Batch& b, LossLog& log) {
    guarded("dbc", [&] {
        Tape<float> tape;
        auto p = nn::bind(tape, bundle_.dbc, true);
        auto loss = loss_dbc(bundle_.dbc_spec, p, tape.constant(b.s), b.g);
        check_finite(loss.scalar(), "dbc");
        tape.backward(loss);
        log.dbc += loss.scalar();
        return nn::adam_step(dbc_.adam, bundle_.dbc, nn::collect_grad(tape, p, bundle_.dbc), cfg_.lr.dbc);
    });
}

void Learner::gate_step(const Batch& b, LossLog& log) {
    guarded("gate", [&] {
        const Matrix<float> sbc = sigma_of(actor_eval(bundle_.actor_spec, bundle_.bc, b.s, true).second);
        const Matrix<float> srl = sigma_of(actor_eval(bundle_.actor_spec, bundle_.rl, b.s, false).second);
        const GateCoefficients c{cfg_.alpha_spec, cfg_.beta_load, cfg_.gamma_ent};
        Tape<float> tape;
        auto p = nn::bind(tape, bundle_.gate, true);
        auto loss = loss_gate(bundle_.gate_spec, p, tape.constant(b.s), sbc, srl, c);
        check_finite(loss.total.scalar(), "gate");
        tape.backward(loss.total);
        log.gate += loss.total.scalar();
        log.gate_variance += loss.variance.scalar();
        log.gate_specialization += loss.specialization.scalar();
        log.gate_load += loss.load.scalar();
        log.gate_entropy += loss.entropy.scalar();
        return nn::adam_step(gate_.adam, bundle_.gate, nn::collect_grad(tape, p, bundle_.gate), cfg_.lr.gate);
    });
}

void Learner::dqn_step(const Batch& b, LossLog& log) {
    guarded("gripper_q", [&] {
        const Matrix<float> y =
            dqn_target(bundle_.dqn_spec, bundle_.dqn_targ, b.s2, b.r, b.done, static_cast<float>(cfg_.gamma));
        Tape<float> tape;
        auto p = nn::bind(tape, bundle_.dqn, true);
        auto loss = loss_dqn(bundle_.dqn_spec, p, tape.constant(b.s), b.g, tape.constant(y));
        check_finite(loss.scalar(), "gripper_q");
        tape.backward(loss);
        log.dqn += loss.scalar();
        return nn::adam_step(dqn_.adam, bundle_.dqn, nn::collect_grad(tape, p, bundle_.dqn), cfg_.lr.dqn);
    });
}

void Learner::polyak() {
    nn::polyak_update(bundle_.q1_targ, bundle_.q1, cfg_.tau);
    nn::polyak_update(bundle_.q2_targ, bundle_.q2, cfg_.tau);
    if (bundle_.has_dqn) nn::polyak_update(bundle_.dqn_targ, bundle_.dqn, cfg_.tau);
}

LossLog Learner::offline_iteration(const BufferSet& buffers) {
    LossLog log;
    const Batch b = demo_batch(buffers);
    critic_step(b, log);
    awac_step(b, log);
    bc_step(b, log);
    dbc_step(b, log);
    if (cfg_.ablation.gripper_dqn) dqn_step(b, log);
    polyak();
    log.alpha_value = bundle_.alpha();
    log.updates = 1;
    ++updates_;
    return log;
}

LossLog Learner::online_update(BufferSet& buffers) {
    LossLog log;
    const auto bsz = static_cast<std::size_t>(cfg_.batch);
    if (!cfg_.ablation.bc_only || cfg_.ablation.gripper_dqn) {
        const Batch rl = make_batch(buffers.sample_rl(bsz, rng_));
        if (!cfg_.ablation.bc_only) {
            critic_step(rl, log);
            sac_step(rl, log);
        }
        if (cfg_.ablation.gripper_dqn) dqn_step(rl, log);
    }
    const Batch bc = make_batch(buffers.sample_bc(bsz, rng_));
    bc_step(bc, log);
    if (!cfg_.ablation.gripper_dqn) dbc_step(bc, log);
    if (cfg_.selection() == experts::Selection::gated) gate_step(bc, log);
    polyak();
    log.updates = 1;
    ++updates_;
    return log;
}

// ---- interventions ----

OracleInterventions::OracleInterventions(oracle::InterventionRule rule, env::TaskId task)
    : tracker_(rule), policy_{} {
    rule.validate();
    policy_.task = task;
}

void OracleInterventions::begin_episode(const env::EnvState&) { tracker_.reset(); }

std::optional<Override> OracleInterventions::poll(const env::EnvState& state, const env::TaskSpec& task) {
    if (tracker_.rule().trigger == oracle::Trigger::off) return std::nullopt;
    if (!tracker_.oracle_controls(state, task)) return std::nullopt;
    const auto out = oracle::oracle_act(policy_, state, task);
    return Override{out.arm, out.grip};
}

// ---- rollouts ----

RolloutResult rollout(const ExpertBundle& bundle, const env::TaskSpec& task, std::uint64_t env_seed,
                      const experts::ActOptions& opt, std::mt19937_64& rng, InterventionSource& source,
                      const std::function<void(const StepView&)>& on_step,
                      const std::function<void()>& between_steps) {
    RolloutResult out;
    env::EnvState state = env::reset(task, env_seed);
    source.begin_episode(state);
    while (!state.done) {
        const auto obs = env::observe(state);
        Transition t;
        t.state = obs;
        experts::GateDecision decision;
        env::ArmAction arm;
        env::GripperAction grip;
        if (auto ov = source.poll(state, task)) {
            arm = ov->arm;
            grip = ov->grip;
            decision = experts::gate(bundle, obs);
            t.intervened = true;
            t.source = buffers::Source::online_intervention;
            t.actor = source.actor();
        } else {
            const auto c = experts::compose_action(bundle, obs, opt, rng);
            arm = c.arm;
            grip = c.grip;
            decision = c.decision;
            t.source = buffers::Source::online_policy;
            t.actor = decision.selected == experts::Expert::bc ? buffers::Actor::bc : buffers::Actor::rl;
        }
        const auto res = env::step(state, task, arm, grip);
        t.arm_action = {static_cast<float>(arm.delta[0]), static_cast<float>(arm.delta[1])};
        t.gripper_action = grip.mode;
        t.reward = static_cast<float>(res.reward);
        t.next_state = env::observe(res.state);
        t.done = res.done;
        out.episode.push_back(std::move(t));
        out.decisions.push_back(decision);
        out.displacement.push_back(env::dist(res.state.ee_pos, state.ee_pos));
        if (res.reward > 0.0) out.success = true;
        if (on_step) {
            StepView v;
            v.step = static_cast<int>(out.episode.size()) - 1;
            v.before = &state;
            v.after = &res.state;
            v.transition = &out.episode.back();
            v.decision = decision;
            on_step(v);
        }
        state = res.state;
        if (between_steps) between_steps();
    }
    return out;
}

// ---- pipelines ----

std::uint64_t episode_seed(std::uint64_t run_seed, std::uint64_t index, std::uint64_t stream) {
    std::uint64_t z = run_seed * 0x9e3779b97f4a7c15ull + (stream << 40) + index + 0x632be59bd9b4e019ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

std::vector<buffers::Episode> collect_demos(const env::TaskSpec& task, int n, double noise, std::uint64_t seed) {
    if (n < 1) throw nn::ConfigError("need at least one demonstration");
    std::vector<buffers::Episode> demos;
    for (int i = 0; i < n; ++i) {
        const auto env_seed = episode_seed(seed, static_cast<std::uint64_t>(i), 1);
        oracle::OraclePolicy base;
        base.task = task.id;
        const auto policy = base.with_noise(noise, env_seed);
        env::EnvState state = env::reset(task, env_seed);
        buffers::Episode ep;
        while (!state.done) {
            const auto act = oracle::oracle_act(policy, state, task);
            const auto res = env::step(state, task, act.arm, act.grip);
            Transition t;
            t.state = env::observe(state);
            t.arm_action = {static_cast<float>(act.arm.delta[0]), static_cast<float>(act.arm.delta[1])};
            t.gripper_action = act.grip.mode;
            t.reward = static_cast<float>(res.reward);
            t.next_state = env::observe(res.state);
            t.done = res.done;
            t.source = buffers::Source::offline_demo;
            t.actor = buffers::Actor::oracle;
            ep.push_back(std::move(t));
            state = res.state;
        }
        demos.push_back(std::move(ep));
    }
    return demos;
}

ExpertBundle pretrain(const RunConfig& cfg, const BufferSet& buffers, PretrainLog* log) {
    cfg.validate();
    if (buffers.demo().empty()) throw nn::ConfigError("pretraining needs at least one demonstration episode");
    auto bundle = experts::make_bundle(cfg.arch, cfg.seed, cfg.init_alpha, cfg.ablation.gripper_dqn);
    Learner learner(cfg, std::move(bundle));
    for (int i = 0; i < cfg.n_offline; ++i) {
        auto l = learner.offline_iteration(buffers);
        if (log) log->iterations.push_back(l);
    }
    return learner.bundle();
}

ExpertBundle pretrain(const RunConfig& cfg, const std::vector<buffers::Episode>& demos, PretrainLog* log) {
    if (demos.empty()) throw nn::ConfigError("pretraining needs at least one demonstration episode");
    BufferSet b(cfg.buffer_capacity);
    b.load_offline(demos);
    return pretrain(cfg, b, log);
}

namespace {

json loss_json(const LossLog& l) {
    return json{{"bc", l.bc},
                {"dbc", l.dbc},
                {"critic", l.critic},
                {"actor", l.actor},
                {"gate", l.gate},
                {"gate_terms",
                 {{"variance", l.gate_variance},
                  {"specialization", l.gate_specialization},
                  {"load", l.gate_load},
                  {"entropy", l.gate_entropy}}},
                {"alpha", l.alpha},
                {"alpha_value", l.alpha_value},
                {"gripper_q", l.dqn},
                {"updates", l.updates}};
}

std::string padded(int v) {
    std::ostringstream os;
    os << std::setw(5) << std::setfill('0') << v;
    return os.str();
}

}  // namespace

std::string episode_record_json(const EpisodeRecord& r) {
    json j{{"type", "episode"},
           {"episode", r.episode},
           {"env_seed", r.env_seed},
           {"success", r.success},
           {"length", r.length},
           {"intervened_steps", r.intervened_steps},
           {"rl_selection_ratio", r.rl_ratio},
           {"demo_ratio", r.demo_ratio},
           {"auto_success_ratio", r.auto_success_ratio},
           {"replay_size", r.replay_size},
           {"losses", loss_json(r.losses.mean())}};
    return j.dump();
}

std::string update_record_json(std::int64_t update, const LossLog& l) {
    json j{{"type", "update"}, {"update", update}, {"losses", loss_json(l.mean())}};
    return j.dump();
}

TrainResult train_online(const RunConfig& cfg, ExpertBundle bundle, BufferSet& buffers, const TrainOptions& options) {
    cfg.validate();
    const auto task = cfg.task_spec();
    const auto t0 = std::chrono::steady_clock::now();

    Learner learner(cfg, std::move(bundle));
    OracleInterventions default_source(cfg.intervention, cfg.task);
    InterventionSource& source = options.source ? *options.source : default_source;
    RolloutObserver* observer = options.observer;

    std::ofstream metrics, timing, trajectories;
    if (options.run_dir) {
        const auto& dir = *options.run_dir;
        std::filesystem::create_directories(dir / "checkpoints");
        save_config(dir / "config.json", cfg);
        metrics.open(dir / "metrics.jsonl");
        timing.open(dir / "timing.jsonl");
        trajectories.open(dir / "trajectories.jsonl");
        if (!metrics || !timing || !trajectories) throw nn::ConfigError("cannot open run files in " + dir.string());
    }

    experts::ActOptions opt;
    opt.stochastic = cfg.stochastic_rollouts;
    opt.selection = cfg.selection();
    opt.gripper = cfg.gripper_source();
    opt.dqn_epsilon = cfg.dqn_epsilon;

    std::mt19937_64 actor_rng(episode_seed(cfg.seed, 0, 3));
    TrainResult result;
    LossLog window;

    auto learn_once = [&](LossLog& episode_losses) {
        const LossLog l = learner.online_update(buffers);
        episode_losses.add(l);
        window.add(l);
        if (learner.updates() % cfg.metrics_every == 0) {
            result.metrics.updates.emplace_back(learner.updates(), window.mean());
            if (metrics) metrics << update_record_json(learner.updates(), window) << "\n";
            window = LossLog{};
        }
    };

    for (int ep = 0; ep < cfg.online_episodes; ++ep) {
        if (observer && observer->stop_requested()) break;
        const ExpertBundle snapshot = learner.bundle();
        const auto env_seed = episode_seed(cfg.seed, static_cast<std::uint64_t>(ep), 0);
        LossLog episode_losses;

        auto between = [&] {
            for (int u = 0; u < cfg.utd; ++u) learn_once(episode_losses);
            while (observer && observer->paused() && !observer->stop_requested()) {
                learn_once(episode_losses);
                std::this_thread::sleep_for(std::chrono::milliseconds(1));
            }
        };
        std::function<void(const StepView&)> on_step;
        if (observer) {
            while (observer->paused() && !observer->stop_requested()) {
                learn_once(episode_losses);
                std::this_thread::sleep_for(std::chrono::milliseconds(1));
            }
            observer->on_episode_start(ep, env::reset(task, env_seed));
            on_step = [&](const StepView& v) {
                StepView w = v;
                w.episode = ep;
                observer->on_step(w);
            };
        }
        auto ro = rollout(snapshot, task, env_seed, opt, actor_rng, source, on_step, between);
        buffers.ingest_episode(ro.episode);

        EpisodeRecord rec;
        rec.episode = ep;
        rec.env_seed = env_seed;
        rec.success = ro.success;
        rec.length = static_cast<int>(ro.episode.size());
        int policy_steps = 0, rl_steps = 0;
        for (std::size_t i = 0; i < ro.episode.size(); ++i) {
            if (ro.episode[i].intervened) {
                ++rec.intervened_steps;
                continue;
            }
            ++policy_steps;
            if (ro.episode[i].actor == buffers::Actor::rl) ++rl_steps;
        }
        rec.rl_ratio = policy_steps > 0 ? static_cast<double>(rl_steps) / policy_steps : 0.0;
        const auto ratios = buffers.ratios();
        rec.demo_ratio = ratios.demo_ratio;
        rec.auto_success_ratio = ratios.auto_success_ratio;
        rec.replay_size = buffers.replay().size();
        rec.losses = episode_losses;
        result.metrics.episodes.push_back(rec);
        if (observer) observer->on_episode_end(rec);

        if (options.run_dir) {
            metrics << episode_record_json(rec) << "\n";
            metrics.flush();
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            timing << json{{"episode", ep}, {"wall_clock_s", secs}}.dump() << "\n";
            trajectories << buffers::episode_jsonl(ro.episode, static_cast<std::size_t>(ep));
            if (cfg.checkpoint_every > 0 && (ep + 1) % cfg.checkpoint_every == 0)
                experts::save_bundle(*options.run_dir / "checkpoints" / ("ep_" + padded(ep + 1)), learner.bundle(),
                                     learner.updates(), {{"task", env::to_string(cfg.task)}});
        }
    }
    result.metrics.skipped_steps = learner.skipped();
    result.metrics.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (options.run_dir)
        experts::save_bundle(*options.run_dir / "final", learner.bundle(), learner.updates(),
                             {{"task", env::to_string(cfg.task)}});
    result.bundle = learner.bundle();
    return result;
}

EvalResult evaluate(const ExpertBundle& bundle, const env::TaskSpec& task, int n_episodes, std::uint64_t seed,
                    experts::Selection selection, experts::GripperSource gripper) {
    if (n_episodes < 1) throw nn::ConfigError("evaluation needs at least one episode");
    EvalResult r;
    experts::ActOptions opt;
    opt.stochastic = false;
    opt.selection = selection;
    opt.gripper = gripper;
    std::mt19937_64 rng(seed);
    NoInterventions none;
    std::int64_t steps = 0, rl_steps = 0, successes = 0;
    std::vector<double> sw, st;
    for (int i = 0; i < n_episodes; ++i) {
        auto ro = rollout(bundle, task, episode_seed(seed, static_cast<std::uint64_t>(i), 2), opt, rng, none);
        successes += ro.success ? 1 : 0;
        steps += static_cast<std::int64_t>(ro.episode.size());
        for (std::size_t t = 0; t < ro.decisions.size(); ++t) {
            if (ro.episode[t].actor == buffers::Actor::rl) ++rl_steps;
            if (t == 0) continue;
            const bool changed = ro.episode[t].actor != ro.episode[t - 1].actor;
            (changed ? sw : st).push_back(ro.displacement[t]);
        }
        r.rollouts.push_back(std::move(ro));
    }
    auto stats = [](const std::vector<double>& v, double& mean, double& sd) {
        if (v.empty()) return;
        double s = 0.0;
        for (double x : v) s += x;
        mean = s / static_cast<double>(v.size());
        double q = 0.0;
        for (double x : v) q += (x - mean) * (x - mean);
        sd = std::sqrt(q / static_cast<double>(v.size()));
    };
    stats(sw, r.switches.switch_mean, r.switches.switch_std);
    stats(st, r.switches.steady_mean, r.switches.steady_std);
    r.switches.switch_steps = static_cast<std::int64_t>(sw.size());
    r.switches.steady_steps = static_cast<std::int64_t>(st.size());
    r.success_rate = static_cast<double>(successes) / n_episodes;
    r.mean_length = static_cast<double>(steps) / n_episodes;
    r.rl_ratio = steps > 0 ? static_cast<double>(rl_steps) / static_cast<double>(steps) : 0.0;
    return r;
}

}  // namespace mori::training
