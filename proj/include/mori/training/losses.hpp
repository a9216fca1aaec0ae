#pragma once

#include "mori/nn/heads.hpp"
#include "mori/nn/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

// Every loss is templated on the scalar type so the same code trains in float
// and is checked against finite differences in double. Stochastic terms take
// their standard-normal noise as explicit inputs.
namespace mori::training {

using nn::BasicParamVector;
using nn::BoundParams;
using nn::Matrix;
using nn::MlpSpec;
using nn::Tape;
using nn::Var;

inline constexpr int kArm = 2;

template <typename T>
struct ActorOut {
    Var<T> mean;     // BC: tanh-bounded action; RL: pre-squash mean
    Var<T> log_std;  // clamped
};

template <typename T>
ActorOut<T> actor_forward(const MlpSpec& spec, const BoundParams<T>& p, Var<T> s, bool tanh_mean) {
    Var<T> out = nn::mlp_forward(*s.tape, spec, p, s);
    Var<T> mean = nn::slice_cols(out, 0, kArm);
    if (tanh_mean) mean = nn::tanh(mean);
    Var<T> log_std = nn::clamp(nn::slice_cols(out, kArm, kArm), static_cast<T>(nn::kLogStdMin),
                               static_cast<T>(nn::kLogStdMax));
    return {mean, log_std};
}

// Tape-free actor evaluation: (mean, clamped log_std) as N x 2 matrices.
template <typename T>
std::pair<Matrix<T>, Matrix<T>> actor_eval(const MlpSpec& spec, const BasicParamVector<T>& p, const Matrix<T>& s,
                                           bool tanh_mean) {
    Matrix<T> out = nn::mlp_eval(spec, p, s);
    Matrix<T> mean = out.leftCols(kArm);
    if (tanh_mean) mean = mean.array().tanh().matrix();
    Matrix<T> log_std = out.rightCols(kArm).cwiseMax(static_cast<T>(nn::kLogStdMin))
                            .cwiseMin(static_cast<T>(nn::kLogStdMax));
    return {mean, log_std};
}

// Per-row variance proxy: mean over dims of exp(2 log_std).
template <typename T>
Matrix<T> sigma_of(const Matrix<T>& log_std) {
    Matrix<T> out = (T(2) * log_std.array()).exp().rowwise().mean().matrix();
    return out;
}

template <typename T>
Matrix<T> critic_eval(const MlpSpec& spec, const BasicParamVector<T>& p, const Matrix<T>& s, const Matrix<T>& a) {
    Matrix<T> x(s.rows(), s.cols() + a.cols());
    x << s, a;
    return nn::mlp_eval(spec, p, x);
}

template <typename T>
Var<T> critic_forward(const MlpSpec& spec, const BoundParams<T>& p, Var<T> s, Var<T> a) {
    return nn::mlp_forward(*s.tape, spec, p, nn::concat_cols(s, a));
}

// ---- behavior cloning ----

template <typename T>
struct BcLoss {
    Var<T> total, mse, nll;
};

// MSE on the tanh-bounded mean plus a down-weighted Gaussian NLL that trains
// only the log-std head.
template <typename T>
BcLoss<T> loss_bc(const MlpSpec& spec, const BoundParams<T>& p, Var<T> s, Var<T> a, T nll_weight) {
    auto head = actor_forward(spec, p, s, true);
    Var<T> mse = nn::mean(nn::row_sum(nn::square(head.mean - a)));
    Var<T> nll = nn::mean(-nn::normal_logprob(a, nn::stop_gradient(head.mean), head.log_std));
    return {mse + nll * nll_weight, mse, nll};
}

// ---- discrete gripper cloning ----

template <typename T>
Var<T> loss_dbc(const MlpSpec& spec, const BoundParams<T>& p, Var<T> s, const std::vector<int>& labels) {
    Var<T> logits = nn::mlp_forward(*s.tape, spec, p, s);
    return -nn::mean(nn::pick(nn::log_softmax_rows(logits), labels));
}

// ---- critics ----

// y = r + gamma (1 - done) min(Q1', Q2')(s', a'), a' = tanh(mu + std * eps).
template <typename T>
Matrix<T> critic_target(const MlpSpec& actor, const BasicParamVector<T>& rl, const MlpSpec& critic,
                        const BasicParamVector<T>& q1_targ, const BasicParamVector<T>& q2_targ,
                        const Matrix<T>& s2, const Matrix<T>& r, const Matrix<T>& done, const Matrix<T>& eps,
                        T gamma) {
    auto [mu, log_std] = actor_eval(actor, rl, s2, false);
    Matrix<T> a2 = (mu.array() + log_std.array().exp() * eps.array()).tanh().matrix();
    Matrix<T> q = critic_eval(critic, q1_targ, s2, a2).cwiseMin(critic_eval(critic, q2_targ, s2, a2));
    Matrix<T> y = r.array() + gamma * (T(1) - done.array()) * q.array();
    for (Eigen::Index i = 0; i < y.rows(); ++i)
        if (!std::isfinite(static_cast<double>(y(i, 0))))
            throw nn::NumericalError("critic_target", "non-finite critic target at batch row " + std::to_string(i));
    return y;
}

template <typename T>
struct CriticLoss {
    Var<T> total, q1_mse, q2_mse;
};

template <typename T>
CriticLoss<T> loss_critic(const MlpSpec& spec, const BoundParams<T>& q1, const BoundParams<T>& q2, Var<T> s,
                          Var<T> a, Var<T> y) {
    Var<T> e1 = nn::mean(nn::square(critic_forward(spec, q1, s, a) - y));
    Var<T> e2 = nn::mean(nn::square(critic_forward(spec, q2, s, a) - y));
    return {e1 + e2, e1, e2};
}

// ---- advantage-weighted actor ----

template <typename T>
T awac_weight(T advantage, T lambda, T clip) {
    return std::clamp(static_cast<T>(std::exp(advantage / lambda)), T(0), clip);
}

// A(s,a) = Qmin(s,a) - mean_k Qmin(s, a_k) with a_k drawn from the RL actor
// using eps_k (one N x 2 noise matrix per baseline sample).
template <typename T>
Matrix<T> awac_advantage(const MlpSpec& actor, const BasicParamVector<T>& rl, const MlpSpec& critic,
                         const BasicParamVector<T>& q1, const BasicParamVector<T>& q2, const Matrix<T>& s,
                         const Matrix<T>& a, const std::vector<Matrix<T>>& eps) {
    auto qmin = [&](const Matrix<T>& act) {
        Matrix<T> m = critic_eval(critic, q1, s, act).cwiseMin(critic_eval(critic, q2, s, act));
        return m;
    };
    auto [mu, log_std] = actor_eval(actor, rl, s, false);
    Matrix<T> baseline = Matrix<T>::Zero(s.rows(), 1);
    for (const auto& e : eps) {
        Matrix<T> ak = (mu.array() + log_std.array().exp() * e.array()).tanh().matrix();
        baseline += qmin(ak);
    }
    if (!eps.empty()) baseline /= static_cast<T>(eps.size());
    Matrix<T> adv = qmin(a) - baseline;
    return adv;
}

// log pi(a|s) for dataset actions in (-1, 1), squashed Gaussian.
template <typename T>
Var<T> squashed_logprob_of(const ActorOut<T>& head, const Matrix<T>& a) {
    const T lim = static_cast<T>(1.0 - nn::kSquashEps);
    Matrix<T> ac = a.cwiseMax(-lim).cwiseMin(lim);
    Matrix<T> u = ac.array().atanh().matrix();
    Matrix<T> corr = (T(1) - ac.array().square()).log().matrix().rowwise().sum();
    Tape<T>& tape = *head.mean.tape;
    return nn::normal_logprob(tape.constant(u), head.mean, head.log_std) - tape.constant(corr);
}

template <typename T>
Var<T> loss_awac_actor(const MlpSpec& spec, const BoundParams<T>& rl, Var<T> s, const Matrix<T>& a,
                       const Matrix<T>& weights) {
    auto head = actor_forward(spec, rl, s, false);
    Var<T> lp = squashed_logprob_of(head, a);
    return -nn::mean(lp * s.tape->constant(weights));
}

// ---- entropy-regularized actor with BC regularization ----

template <typename T>
struct SacLoss {
    Var<T> total;
    Var<T> logpi;  // N x 1
    Var<T> q;      // mean Qmin
    Var<T> reg;    // mean squared distance to the BC mean
};

template <typename T>
SacLoss<T> loss_sac_actor(const MlpSpec& actor, const BoundParams<T>& rl, const MlpSpec& critic,
                          const BoundParams<T>& q1, const BoundParams<T>& q2, Var<T> s, const Matrix<T>& eps,
                          T alpha, T beta_reg, const Matrix<T>& bc_mean) {
    Tape<T>& tape = *s.tape;
    auto head = actor_forward(actor, rl, s, false);
    Var<T> u = head.mean + nn::exp(head.log_std) * tape.constant(eps);
    Var<T> a = nn::tanh(u);
    Var<T> logpi = nn::normal_logprob(u, head.mean, head.log_std) - nn::tanh_log_jacobian(u);
    Var<T> q = nn::minimum(critic_forward(critic, q1, s, a), critic_forward(critic, q2, s, a));
    Var<T> reg = nn::row_sum(nn::square(nn::tanh(head.mean) - tape.constant(bc_mean)));
    Var<T> total = nn::mean(logpi * alpha - q + reg * beta_reg);
    return {total, logpi, nn::mean(q), nn::mean(reg)};
}

// Temperature loss: -alpha_log * mean(logpi + target_entropy), logpi held fixed.
template <typename T>
Var<T> loss_alpha(Var<T> alpha_log, const Matrix<T>& logpi, T target_entropy) {
    const T m = static_cast<T>((logpi.template cast<double>().array() + static_cast<double>(target_entropy)).mean());
    return alpha_log * (-m);
}

// ---- gating ----

struct GateCoefficients {
    double alpha_spec = 0.1;
    double beta_load = 0.05;
    double gamma_ent = 0.01;
};

template <typename T>
struct GateLoss {
    Var<T> total, variance, specialization, load, entropy;
    Var<T> w_bc;  // N x 1
};

// sigma_bc and sigma_rl (N x 1) enter as constants.
template <typename T>
GateLoss<T> gate_loss_from_logits(Var<T> logits, const Matrix<T>& sigma_bc, const Matrix<T>& sigma_rl,
                                  const GateCoefficients& c) {
    if (logits.rows() < 2) throw nn::ConfigError("gate loss needs a batch of at least 2 states");
    Tape<T>& tape = *logits.tape;
    Var<T> lsm = nn::log_softmax_rows(logits);
    Var<T> w = nn::exp(lsm);
    Var<T> w_bc = nn::slice_cols(w, 0, 1);
    Var<T> w_rl = nn::slice_cols(w, 1, 1);
    const T half = T(0.5);
    Var<T> variance = nn::mean(w_bc * tape.constant(sigma_bc) + w_rl * tape.constant(sigma_rl));
    Var<T> spec = nn::mean(half - nn::abs(w_bc - half)) * static_cast<T>(c.alpha_spec);
    Var<T> load = (nn::square(nn::mean(w_bc) - half) + nn::square(nn::mean(w_rl) - half)) *
                  static_cast<T>(c.beta_load);
    // gamma_ent * mean(-H), with -H = sum_k w_k log w_k
    Var<T> ent = nn::mean(nn::row_sum(w * lsm)) * static_cast<T>(c.gamma_ent);
    return {variance + spec + load + ent, variance, spec, load, ent, w_bc};
}

template <typename T>
GateLoss<T> loss_gate(const MlpSpec& spec, const BoundParams<T>& gate, Var<T> s, const Matrix<T>& sigma_bc,
                      const Matrix<T>& sigma_rl, const GateCoefficients& c) {
    return gate_loss_from_logits(nn::mlp_forward(*s.tape, spec, gate, s), sigma_bc, sigma_rl, c);
}

// ---- gripper Q ablation ----

template <typename T>
Matrix<T> dqn_target(const MlpSpec& spec, const BasicParamVector<T>& target, const Matrix<T>& s2,
                     const Matrix<T>& r, const Matrix<T>& done, T gamma) {
    Matrix<T> q = nn::mlp_eval(spec, target, s2).rowwise().maxCoeff();
    Matrix<T> y = r.array() + gamma * (T(1) - done.array()) * q.array();
    return y;
}

template <typename T>
Var<T> loss_dqn(const MlpSpec& spec, const BoundParams<T>& p, Var<T> s, const std::vector<int>& actions,
                Var<T> y) {
    Var<T> q = nn::pick(nn::mlp_forward(*s.tape, spec, p, s), actions);
    return nn::mean(nn::square(q - y));
}

}  // namespace mori::training
