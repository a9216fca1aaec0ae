#include "mori/nn/mlp.hpp"

#include <cmath>
#include <sstream>

namespace mori::nn {

void MlpSpec::validate() const {
    if (input_dim < 1 || output_dim < 1) throw ConfigError("mlp dims must be >= 1");
    if (hidden.empty()) throw ConfigError("mlp hidden list must be non-empty");
    for (int h : hidden)
        if (h < 1) throw ConfigError("mlp hidden widths must be >= 1");
}

std::vector<TensorLayout> MlpSpec::layout() const {
    validate();
    std::vector<TensorLayout> out;
    int in = input_dim;
    for (std::size_t l = 0; l <= hidden.size(); ++l) {
        const int width = l < hidden.size() ? hidden[l] : output_dim;
        out.push_back({"W" + std::to_string(l), {in, width}});
        out.push_back({"b" + std::to_string(l), {width}});
        in = width;
    }
    return out;
}

std::string MlpSpec::signature() const {
    std::ostringstream os;
    os << "mlp:" << input_dim << ":";
    for (std::size_t i = 0; i < hidden.size(); ++i) os << (i ? "x" : "") << hidden[i];
    os << ":" << to_string(activation) << ":" << output_dim;
    return os.str();
}

std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    throw ConfigError("unknown activation '" + s + "'");
}

ParamVector init_mlp(const MlpSpec& spec, std::mt19937_64& rng) {
    ParamVector p(spec.layout());
    for (std::size_t i = 0; i < p.tensor_count(); ++i) {
        const auto& shape = p.layout()[i].shape;
        if (shape.size() != 2) continue;
        const float bound = 1.0f / std::sqrt(static_cast<float>(shape[0]));
        std::uniform_real_distribution<float> dist(-bound, bound);
        for (float& v : p.tensor(i)) v = dist(rng);
    }
    return p;
}

void zero_output_layer(const MlpSpec& spec, ParamVector& params) {
    const std::size_t last = 2 * spec.hidden.size();
    for (float& v : params.tensor(last)) v = 0.0f;
    for (float& v : params.tensor(last + 1)) v = 0.0f;
}

std::vector<float> forward(const ParamVector& params, const MlpSpec& spec, std::span<const float> input) {
    if (static_cast<int>(input.size()) != spec.input_dim)
        throw ConfigError("forward: input length " + std::to_string(input.size()) + " != " +
                          std::to_string(spec.input_dim));
    if (!params.same_layout(ParamVector(spec.layout())))
        throw ConfigError("forward: parameter layout does not match " + spec.signature());
    Matrix<float> x(1, spec.input_dim);
    for (int i = 0; i < spec.input_dim; ++i) x(0, i) = input[i];
    Matrix<float> y = mlp_eval(spec, params, x);
    return {y.data(), y.data() + y.size()};
}

}  // namespace mori::nn
