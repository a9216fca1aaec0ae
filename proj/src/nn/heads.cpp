#include "mori/nn/heads.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mori::nn {

double GaussianHead::variance() const {
    if (log_std.empty()) return 0.0;
    double s = 0.0;
    for (double l : log_std) s += std::exp(2.0 * l);
    return s / static_cast<double>(log_std.size());
}

double clamp_log_std(double raw) { return std::clamp(raw, kLogStdMin, kLogStdMax); }

double gaussian_logprob(const GaussianHead& head, std::span<const double> action, bool squashed) {
    if (action.size() != head.dims() || head.log_std.size() != head.dims())
        throw ConfigError("gaussian_logprob: action has " + std::to_string(action.size()) + " dims, head has " +
                          std::to_string(head.dims()));
    constexpr double half_log_2pi = 0.91893853320467274178;
    double lp = 0.0;
    for (std::size_t i = 0; i < head.dims(); ++i) {
        double x = action[i];
        double correction = 0.0;
        if (squashed) {
            x = std::clamp(x, -1.0 + kSquashEps, 1.0 - kSquashEps);
            correction = std::log1p(-x * x);
            x = std::atanh(x);
        }
        const double z = (x - head.mean[i]) * std::exp(-head.log_std[i]);
        lp += -0.5 * z * z - head.log_std[i] - half_log_2pi - correction;
    }
    return lp;
}

double categorical_logprob(std::span<const double> logits, int cls) {
    if (cls < 0 || static_cast<std::size_t>(cls) >= logits.size())
        throw std::out_of_range("categorical_logprob: class " + std::to_string(cls) + " out of range");
    const double m = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (double l : logits) s += std::exp(l - m);
    return logits[cls] - m - std::log(s);
}

}  // namespace mori::nn
