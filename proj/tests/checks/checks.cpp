#include "checks/checks.hpp"

#include "mori/buffers/buffers.hpp"
#include "mori/experts/experts.hpp"
#include "mori/training/losses.hpp"

#include <cmath>
#include <map>
#include <random>

namespace mori::checks {

using nn::BasicParamVector;
using nn::BoundParams;
using nn::Tape;
using nn::Var;
using training::Matrix;
using D = double;

namespace {

Matrix<D> normal(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> nd(0.0, scale);
    Matrix<D> m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
    return m;
}

Matrix<D> uniform(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> ud(lo, hi);
    Matrix<D> m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = ud(rng);
    return m;
}

// Fresh weights plus small random biases so no unit sits at a ReLU kink.
BasicParamVector<D> random_params(const nn::MlpSpec& spec, std::mt19937_64& rng) {
    auto p = nn::init_mlp(spec, rng).cast<D>();
    std::normal_distribution<double> nd(0.0, 0.1);
    for (auto& v : p.values()) v += nd(rng);
    return p;
}

// `loss` is differentiated on the tape; `objective` is the function whose
// central differences the gradient must match. They differ only where a loss
// holds a quantity fixed with stop_gradient.
template <typename LossFn, typename ObjectiveFn>
double relative_error(const BasicParamVector<D>& params, LossFn&& loss, ObjectiveFn&& objective) {
    const auto analytic = nn::grad(loss, params);
    const double h = 1e-6;
    double diff2 = 0.0, fd2 = 0.0, an2 = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto plus = params, minus = params;
        plus.values()[i] += h;
        minus.values()[i] -= h;
        Tape<D> tp, tm;
        const D fp = objective(tp, nn::bind(tp, plus, false)).scalar();
        const D fm = objective(tm, nn::bind(tm, minus, false)).scalar();
        const double fd = (fp - fm) / (2 * h);
        const double an = analytic.values()[i];
        diff2 += (fd - an) * (fd - an);
        fd2 += fd * fd;
        an2 += an * an;
    }
    const double denom = std::max({std::sqrt(fd2), std::sqrt(an2), 1e-12});
    return std::sqrt(diff2) / denom;
}

template <typename LossFn>
double relative_error(const BasicParamVector<D>& params, LossFn&& loss) {
    return relative_error(params, loss, loss);
}

}  // namespace

std::vector<GradientCase> gradient_suite(int trials_per_loss, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::map<std::string, GradientCase> cases;
    auto record = [&](const std::string& name, double err) {
        auto& c = cases[name];
        c.loss = name;
        c.trials += 1;
        c.worst_relative_error = std::max(c.worst_relative_error, err);
    };
    std::uniform_int_distribution<int> dim(2, 8), batch(2, 4), width(3, 6);
    for (int t = 0; t < trials_per_loss; ++t) {
        experts::Architecture arch;
        arch.obs_dim = dim(rng);
        arch.hidden = {width(rng), width(rng)};
        arch.gate_hidden = {width(rng), width(rng)};
        const int n = batch(rng);
        const auto as = experts::actor_spec(arch);
        const auto cs = experts::critic_spec(arch);
        const auto ds = experts::dbc_spec(arch);
        const auto gs = experts::gate_spec(arch);

        const Matrix<D> s = normal(n, arch.obs_dim, rng);
        const Matrix<D> a = uniform(n, 2, rng, -0.9, 0.9);
        const Matrix<D> eps = normal(n, 2, rng);
        const Matrix<D> bc_mean = uniform(n, 2, rng, -0.9, 0.9);
        std::uniform_int_distribution<int> cls(0, 2);
        std::vector<int> labels(static_cast<std::size_t>(n));
        for (auto& l : labels) l = cls(rng);

        const auto bc = random_params(as, rng);
        const auto rl = random_params(as, rng);
        const auto q1 = random_params(cs, rng);
        const auto q2 = random_params(cs, rng);
        const auto dbc = random_params(ds, rng);
        const auto gate = random_params(gs, rng);
        auto dqn_spec = ds;
        const auto dqn = random_params(dqn_spec, rng);

        // The NLL term sees the mean as a constant: differences perturb the
        // log-std path only, with the mean frozen at the unperturbed value.
        const Matrix<D> frozen_mean = training::actor_eval(as, bc, s, true).first;
        record("bc", relative_error(
                         bc,
                         [&](Tape<D>& tape, const BoundParams<D>& p) {
                             return training::loss_bc(as, p, tape.constant(s), tape.constant(a), D(0.1)).total;
                         },
                         [&](Tape<D>& tape, const BoundParams<D>& p) {
                             auto head = training::actor_forward(as, p, tape.constant(s), true);
                             auto mse = nn::mean(nn::row_sum(nn::square(head.mean - tape.constant(a))));
                             auto nll = nn::mean(
                                 -nn::normal_logprob(tape.constant(a), tape.constant(frozen_mean), head.log_std));
                             return mse + nll * D(0.1);
                         }));
        record("dbc", relative_error(dbc, [&](Tape<D>& tape, const BoundParams<D>& p) {
                   return training::loss_dbc(ds, p, tape.constant(s), labels);
               }));

        const Matrix<D> y = normal(n, 1, rng);
        record("critic", relative_error(q1, [&](Tape<D>& tape, const BoundParams<D>& p) {
                   auto other = nn::bind(tape, q2, false);
                   return training::loss_critic(cs, p, other, tape.constant(s), tape.constant(a), tape.constant(y))
                       .total;
               }));
        record("critic", relative_error(q2, [&](Tape<D>& tape, const BoundParams<D>& p) {
                   auto other = nn::bind(tape, q1, false);
                   return training::loss_critic(cs, other, p, tape.constant(s), tape.constant(a), tape.constant(y))
                       .total;
               }));

        std::vector<Matrix<D>> base_eps;
        for (int k = 0; k < 4; ++k) base_eps.push_back(normal(n, 2, rng));
        const Matrix<D> adv = training::awac_advantage(as, rl, cs, q1, q2, s, a, base_eps);
        Matrix<D> w(n, 1);
        for (int i = 0; i < n; ++i) w(i, 0) = training::awac_weight(adv(i, 0), D(1), D(20));
        record("awac", relative_error(rl, [&](Tape<D>& tape, const BoundParams<D>& p) {
                   return training::loss_awac_actor(as, p, tape.constant(s), a, w);
               }));

        std::uniform_real_distribution<double> coef(0.05, 1.0);
        const D alpha = coef(rng), beta = coef(rng);
        record("sac_actor", relative_error(rl, [&](Tape<D>& tape, const BoundParams<D>& p) {
                   auto b1 = nn::bind(tape, q1, false);
                   auto b2 = nn::bind(tape, q2, false);
                   return training::loss_sac_actor(as, p, cs, b1, b2, tape.constant(s), eps, alpha, beta, bc_mean)
                       .total;
               }));

        const Matrix<D> logpi = normal(n, 1, rng);
        auto alpha_log = experts::scalar_param("alpha_log", static_cast<float>(coef(rng))).cast<D>();
        record("alpha", relative_error(alpha_log, [&](Tape<D>& tape, const BoundParams<D>& p) {
                   return training::loss_alpha(p.tensors[0], logpi, D(-2));
               }));

        const Matrix<D> sig_bc = uniform(n, 1, rng, 0.01, 1.0);
        const Matrix<D> sig_rl = uniform(n, 1, rng, 0.01, 1.0);
        training::GateCoefficients gc{coef(rng), coef(rng), coef(rng)};
        record("gate", relative_error(gate, [&](Tape<D>& tape, const BoundParams<D>& p) {
                   return training::loss_gate(gs, p, tape.constant(s), sig_bc, sig_rl, gc).total;
               }));

        record("dqn", relative_error(dqn, [&](Tape<D>& tape, const BoundParams<D>& p) {
                   return training::loss_dqn(dqn_spec, p, tape.constant(s), labels, tape.constant(y));
               }));
    }
    std::vector<GradientCase> out;
    for (auto& [k, v] : cases) out.push_back(v);
    return out;
}

namespace {

struct GateReference {
    double variance = 0, spec = 0, load = 0, entropy = 0;
};

GateReference gate_reference(const Matrix<double>& logits, const Matrix<double>& sb, const Matrix<double>& sr,
                             const training::GateCoefficients& c) {
    GateReference r;
    const auto n = static_cast<double>(logits.rows());
    double mean_bc = 0, mean_rl = 0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double wb = 1.0 / (1.0 + std::exp(logits(i, 1) - logits(i, 0)));
        const double wr = 1.0 - wb;
        r.variance += (wb * sb(i, 0) + wr * sr(i, 0)) / n;
        r.spec += c.alpha_spec * (0.5 - std::abs(wb - 0.5)) / n;
        auto xlogx = [](double x) { return x > 0 ? x * std::log(x) : 0.0; };
        r.entropy += c.gamma_ent * (xlogx(wb) + xlogx(wr)) / n;
        mean_bc += wb / n;
        mean_rl += wr / n;
    }
    r.load = c.beta_load * ((mean_bc - 0.5) * (mean_bc - 0.5) + (mean_rl - 0.5) * (mean_rl - 0.5));
    return r;
}

template <typename T>
training::GateLoss<T> gate_on(Tape<T>& tape, const Matrix<double>& logits, const Matrix<double>& sb,
                              const Matrix<double>& sr, const training::GateCoefficients& c) {
    return training::gate_loss_from_logits(tape.constant(logits.cast<T>()), Matrix<T>(sb.cast<T>()),
                                           Matrix<T>(sr.cast<T>()), c);
}

double spec_for_constant_w(double w, const training::GateCoefficients& c) {
    Matrix<double> logits(4, 2), s = Matrix<double>::Constant(4, 1, 0.1);
    for (int i = 0; i < 4; ++i) {
        if (w <= 0.0) {
            logits(i, 0) = -60.0;
            logits(i, 1) = 60.0;
        } else if (w >= 1.0) {
            logits(i, 0) = 60.0;
            logits(i, 1) = -60.0;
        } else {
            logits(i, 0) = std::log(w);
            logits(i, 1) = std::log(1.0 - w);
        }
    }
    Tape<double> tape;
    return gate_on(tape, logits, s, s, c).specialization.scalar();
}

}  // namespace

GateAlgebraReport gate_algebra(int batches, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    GateAlgebraReport r;
    std::uniform_int_distribution<int> rows(2, 64);
    std::uniform_real_distribution<double> coef(0.0, 1.0);
    for (int b = 0; b < batches; ++b) {
        const int n = rows(rng);
        const Matrix<double> logits = normal(n, 2, rng, 3.0);
        const Matrix<double> sb = uniform(n, 1, rng, 0.0, 2.0);
        const Matrix<double> sr = uniform(n, 1, rng, 0.0, 2.0);
        const training::GateCoefficients c{coef(rng), coef(rng), coef(rng)};
        Tape<float> tape;
        const auto g = gate_on(tape, logits, sb, sr, c);
        const double sum = static_cast<double>(g.variance.scalar()) + g.specialization.scalar() + g.load.scalar() +
                           g.entropy.scalar();
        r.worst_sum_error = std::max(r.worst_sum_error, std::abs(sum - static_cast<double>(g.total.scalar())));
        const auto ref = gate_reference(logits, sb, sr, c);
        for (auto [got, want] : {std::pair<double, double>{g.variance.scalar(), ref.variance},
                                 {g.specialization.scalar(), ref.spec},
                                 {g.load.scalar(), ref.load},
                                 {g.entropy.scalar(), ref.entropy}})
            r.worst_reference_error = std::max(r.worst_reference_error, std::abs(got - want));
        ++r.batches;
    }
    const training::GateCoefficients c{0.1, 0.05, 0.01};
    r.spec_at_zero = spec_for_constant_w(0.0, c);
    r.spec_at_one = spec_for_constant_w(1.0, c);
    r.spec_at_half = spec_for_constant_w(0.5, c);
    r.spec_peaks_at_half = true;
    for (int k = 1; k < 100; ++k) {
        if (k == 50) continue;
        if (spec_for_constant_w(k / 100.0, c) >= r.spec_at_half) r.spec_peaks_at_half = false;
    }
    Matrix<double> even = Matrix<double>::Zero(4, 2), s = Matrix<double>::Constant(4, 1, 0.1);
    Tape<double> tape;
    r.entropy_at_half = gate_on(tape, even, s, s, c).entropy.scalar();
    r.expected_entropy_at_half = -c.gamma_ent * std::log(2.0);
    return r;
}

namespace {

using buffers::Actor;
using buffers::BufferSet;
using buffers::Episode;
using buffers::Source;
using buffers::Store;
using buffers::Transition;

struct Expected {
    bool intervened = false;
    bool success = false;
};

// Marks transition identity in state[0]; ids stay below 2^24 so floats hold them exactly.
Episode make_episode(int& next_id, int length, const std::vector<bool>& intervened, bool success,
                     std::map<int, Expected>& expected) {
    Episode ep;
    for (int i = 0; i < length; ++i) {
        Transition t;
        const int id = next_id++;
        t.state = {static_cast<float>(id), 0.5f};
        t.next_state = {static_cast<float>(id + 1), 0.5f};
        t.done = i + 1 == length;
        t.reward = (success && t.done) ? 1.0f : 0.0f;
        t.intervened = intervened[static_cast<std::size_t>(i)];
        t.source = t.intervened ? Source::online_intervention : Source::online_policy;
        t.actor = t.intervened ? Actor::oracle : (i % 2 ? Actor::rl : Actor::bc);
        expected[id] = {t.intervened, success};
        ep.push_back(t);
    }
    // Keep the episode contiguous: each next_state is the following state.
    for (std::size_t i = 0; i + 1 < ep.size(); ++i) ep[i].next_state = ep[i + 1].state;
    return ep;
}

void verify(const BufferSet& b, const std::map<int, Expected>& expected, RoutingReport& r) {
    std::map<int, int> in_replay, in_demo, in_success;
    auto tally = [](const std::vector<Transition>& store, std::map<int, int>& m) {
        for (const auto& t : store)
            if (t.source != Source::offline_demo) ++m[static_cast<int>(t.state[0])];
    };
    tally(b.replay(), in_replay);
    tally(b.demo(), in_demo);
    tally(b.success(), in_success);
    auto fail = [&](const std::string& msg) {
        if (r.violations++ == 0) r.first_violation = msg;
    };
    std::int64_t intervened = 0, policy = 0, auto_success = 0;
    for (const auto& [id, e] : expected) {
        const int rep = in_replay.count(id) ? in_replay.at(id) : 0;
        const int dem = in_demo.count(id) ? in_demo.at(id) : 0;
        const int suc = in_success.count(id) ? in_success.at(id) : 0;
        if (rep != 1) fail("transition " + std::to_string(id) + " appears " + std::to_string(rep) + " times in replay");
        if (dem != (e.intervened ? 1 : 0)) fail("transition " + std::to_string(id) + " demo membership is wrong");
        if (suc != (e.success ? 1 : 0)) fail("transition " + std::to_string(id) + " success membership is wrong");
        intervened += e.intervened;
        policy += !e.intervened;
        auto_success += (e.success && !e.intervened);
    }
    for (const auto* m : {&in_replay, &in_demo, &in_success})
        for (const auto& [id, k] : *m)
            if (!expected.count(id)) fail("unknown transition " + std::to_string(id) + " in a store");
    const auto& c = b.counters();
    if (c.online_intervention != intervened || c.online_policy != policy || c.auto_success != auto_success)
        fail("counters disagree with the counting oracle");
}

}  // namespace

RoutingReport buffer_routing(std::uint64_t seed, std::int64_t draws) {
    RoutingReport r;
    std::mt19937_64 rng(seed);
    int next_id = 0;

    // One offline demo so D_demo and D_success are never empty.
    auto offline = [&] {
        Episode ep;
        for (int i = 0; i < 3; ++i) {
            Transition t;
            t.state = {-1.0f - static_cast<float>(i), 0.0f};
            t.next_state = {-2.0f - static_cast<float>(i), 0.0f};
            t.done = i == 2;
            t.reward = t.done ? 1.0f : 0.0f;
            t.source = Source::offline_demo;
            t.actor = Actor::oracle;
            ep.push_back(t);
        }
        return std::vector<Episode>{ep};
    };

    for (int len = 1; len <= 5; ++len) {
        for (int mask = 0; mask < (1 << len); ++mask) {
            for (int succ = 0; succ < 2; ++succ) {
                BufferSet b;
                b.load_offline(offline());
                std::map<int, Expected> expected;
                std::vector<bool> iv(static_cast<std::size_t>(len));
                for (int i = 0; i < len; ++i) iv[static_cast<std::size_t>(i)] = (mask >> i) & 1;
                b.ingest_episode(make_episode(next_id, len, iv, succ == 1, expected));
                verify(b, expected, r);
                ++r.episodes;
                r.transitions += len;
            }
        }
    }

    BufferSet stream;
    stream.load_offline(offline());
    std::map<int, Expected> expected;
    std::uniform_int_distribution<int> length(1, 40);
    std::bernoulli_distribution success(0.4), has_iv(0.5);
    for (int e = 0; e < 500; ++e) {
        const int len = length(rng);
        std::vector<bool> iv(static_cast<std::size_t>(len), false);
        if (has_iv(rng)) {
            std::uniform_int_distribution<int> pos(0, len - 1);
            int a = pos(rng), b = pos(rng);
            if (a > b) std::swap(a, b);
            for (int i = a; i <= b; ++i) iv[static_cast<std::size_t>(i)] = true;
        }
        stream.ingest_episode(make_episode(next_id, len, iv, success(rng), expected));
        ++r.episodes;
        r.transitions += len;
    }
    verify(stream, expected, r);

    const std::size_t batch = 100;
    std::int64_t from_success = 0, from_replay = 0, n = 0;
    while (n < draws) {
        for (const auto& s : stream.sample_bc(batch, rng)) from_success += s.from == Store::success;
        for (const auto& s : stream.sample_rl(batch, rng)) from_replay += s.from == Store::replay;
        n += static_cast<std::int64_t>(batch);
    }
    r.draws = n;
    r.bc_success_fraction = static_cast<double>(from_success) / static_cast<double>(n);
    r.rl_replay_fraction = static_cast<double>(from_replay) / static_cast<double>(n);
    return r;
}

}  // namespace mori::checks
