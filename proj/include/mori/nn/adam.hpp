#pragma once

#include "mori/nn/params.hpp"

#include <cstdint>
#include <vector>

namespace mori::nn {

struct AdamState {
    std::vector<float> m;
    std::vector<float> v;
    std::int64_t step = 0;
    std::int64_t rejected = 0;  // non-finite gradients skipped

    static constexpr double beta1 = 0.9;
    static constexpr double beta2 = 0.999;
    static constexpr double eps = 1e-8;
};

// Bias-corrected adaptive-moment update in place. Returns false and leaves
// params and moments untouched when the gradient contains a non-finite value.
bool adam_step(AdamState& state, ParamVector& params, const ParamVector& grad, double lr);

// Target <- (1 - tau) * target + tau * source.
void polyak_update(ParamVector& target, const ParamVector& source, double tau);

}  // namespace mori::nn
