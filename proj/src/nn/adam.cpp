#include "mori/nn/adam.hpp"

#include <cmath>

namespace mori::nn {

bool adam_step(AdamState& state, ParamVector& params, const ParamVector& grad, double lr) {
    if (!params.same_layout(grad)) throw ConfigError("adam_step: gradient layout mismatch");
    if (!grad.all_finite()) {
        ++state.rejected;
        return false;
    }
    const std::size_t n = params.size();
    if (state.m.size() != n) {
        state.m.assign(n, 0.0f);
        state.v.assign(n, 0.0f);
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(AdamState::beta1, t);
    const double c2 = 1.0 - std::pow(AdamState::beta2, t);
    auto& p = params.values();
    const auto& g = grad.values();
    for (std::size_t i = 0; i < n; ++i) {
        const double gi = g[i];
        const double m = AdamState::beta1 * state.m[i] + (1.0 - AdamState::beta1) * gi;
        const double v = AdamState::beta2 * state.v[i] + (1.0 - AdamState::beta2) * gi * gi;
        state.m[i] = static_cast<float>(m);
        state.v[i] = static_cast<float>(v);
        const double update = lr * (m / c1) / (std::sqrt(v / c2) + AdamState::eps);
        p[i] = static_cast<float>(p[i] - update);
    }
    return true;
}

void polyak_update(ParamVector& target, const ParamVector& source, double tau) {
    if (!target.same_layout(source)) throw ConfigError("polyak_update: layout mismatch");
    auto& t = target.values();
    const auto& s = source.values();
    const float a = static_cast<float>(1.0 - tau);
    const float b = static_cast<float>(tau);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = a * t[i] + b * s[i];
}

}  // namespace mori::nn
