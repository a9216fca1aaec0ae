#pragma once

#include "mori/nn/params.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace mori::nn {

enum class Activation { relu, tanh };

struct MlpSpec {
    int input_dim = 1;
    std::vector<int> hidden{256, 256};
    Activation activation = Activation::relu;
    int output_dim = 1;

    void validate() const;
    std::vector<TensorLayout> layout() const;
    // Stable textual signature, stored in checkpoints to detect mismatches.
    std::string signature() const;
    bool operator==(const MlpSpec&) const = default;
};

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
ParamVector init_mlp(const MlpSpec& spec, std::mt19937_64& rng);

// Zeroes the weights and bias of the output layer.
void zero_output_layer(const MlpSpec& spec, ParamVector& params);

template <typename T>
Var<T> mlp_forward(Tape<T>& tape, const MlpSpec& spec, const BoundParams<T>& params, Var<T> input) {
    (void)tape;
    if (input.cols() != spec.input_dim)
        throw ConfigError("mlp input has " + std::to_string(input.cols()) + " columns, expected " +
                          std::to_string(spec.input_dim));
    const std::size_t layers = spec.hidden.size() + 1;
    if (params.tensors.size() != 2 * layers) throw ConfigError("parameter layout does not match mlp spec");
    Var<T> h = input;
    for (std::size_t l = 0; l < layers; ++l) {
        h = add_row(matmul(h, params.tensors[2 * l]), params.tensors[2 * l + 1]);
        if (l + 1 < layers) h = spec.activation == Activation::relu ? relu(h) : tanh(h);
    }
    return h;
}

// Tape-free batched evaluation.
template <typename T>
Matrix<T> mlp_eval(const MlpSpec& spec, const BasicParamVector<T>& params, const Matrix<T>& input) {
    if (input.cols() != spec.input_dim)
        throw ConfigError("mlp input has " + std::to_string(input.cols()) + " columns, expected " +
                          std::to_string(spec.input_dim));
    const std::size_t layers = spec.hidden.size() + 1;
    if (params.tensor_count() != 2 * layers) throw ConfigError("parameter layout does not match mlp spec");
    Matrix<T> h = input;
    for (std::size_t l = 0; l < layers; ++l) {
        Matrix<T> z = h * params.matrix(2 * l);
        z.rowwise() += params.matrix(2 * l + 1).row(0);
        if (l + 1 < layers) {
            if (spec.activation == Activation::relu)
                z = z.cwiseMax(T(0));
            else
                z = z.array().tanh().matrix();
        }
        h = std::move(z);
    }
    return h;
}

// Single-sample forward pass.
std::vector<float> forward(const ParamVector& params, const MlpSpec& spec, std::span<const float> input);

}  // namespace mori::nn
