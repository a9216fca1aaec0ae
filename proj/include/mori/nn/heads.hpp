#pragma once

#include "mori/nn/tape.hpp"

#include <numbers>
#include <span>
#include <vector>

namespace mori::nn {

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;
// Squashed actions at +-1 are pulled inside by this much before atanh.
inline constexpr double kSquashEps = 1e-6;

struct GaussianHead {
    std::vector<double> mean;
    std::vector<double> log_std;  // already clamped to [kLogStdMin, kLogStdMax]

    std::size_t dims() const { return mean.size(); }
    // Mean over dimensions of exp(2 * log_std).
    double variance() const;
};

double clamp_log_std(double raw);

// Diagonal Gaussian log density. With squashed = true, `action` lives in
// (-1, 1) and the density includes the tanh change of variables.
double gaussian_logprob(const GaussianHead& head, std::span<const double> action, bool squashed);

// Log-softmax of logits at `cls`, max-subtracted.
double categorical_logprob(std::span<const double> logits, int cls);

// ---- tape forms used by the losses ----

template <typename T>
inline constexpr T kHalfLog2Pi = static_cast<T>(0.91893853320467274178);  // 0.5 * ln(2 pi)

// Per-sample log density (N x 1) of pre-squash values `u` under N(mu, exp(log_std)).
template <typename T>
Var<T> normal_logprob(Var<T> u, Var<T> mu, Var<T> log_std) {
    Var<T> z = (u - mu) * exp(-log_std);
    Var<T> per_dim = (square(z) * T(-0.5)) - log_std - kHalfLog2Pi<T>;
    return row_sum(per_dim);
}

// Per-sample log|d tanh(u)/du| summed over dims: sum 2 (ln 2 - u - softplus(-2u)).
template <typename T>
Var<T> tanh_log_jacobian(Var<T> u) {
    Var<T> per_dim = ((T(-1) * u) - softplus(u * T(-2)) + static_cast<T>(std::numbers::ln2)) * T(2);
    return row_sum(per_dim);
}

}  // namespace mori::nn
