#pragma once

#include "mori/nn/tape.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mori::nn {

struct TensorLayout {
    std::string name;
    std::vector<int> shape;

    std::size_t numel() const {
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        return n;
    }
    bool operator==(const TensorLayout&) const = default;
};

// Flat parameter storage with an ordered list of named tensors. Rank-2
// tensors are stored row-major.
template <typename T>
class BasicParamVector {
public:
    BasicParamVector() = default;
    explicit BasicParamVector(std::vector<TensorLayout> layout) : layout_(std::move(layout)) {
        std::size_t total = 0;
        for (const auto& t : layout_) {
            offsets_.push_back(total);
            total += t.numel();
        }
        values_.assign(total, T(0));
    }

    template <typename U>
    BasicParamVector<U> cast() const {
        BasicParamVector<U> out(layout_);
        for (std::size_t i = 0; i < values_.size(); ++i) out.values()[i] = static_cast<U>(values_[i]);
        return out;
    }

    const std::vector<TensorLayout>& layout() const { return layout_; }
    std::vector<T>& values() { return values_; }
    const std::vector<T>& values() const { return values_; }
    std::size_t size() const { return values_.size(); }
    std::size_t tensor_count() const { return layout_.size(); }
    std::size_t offset(std::size_t i) const { return offsets_.at(i); }

    std::size_t index_of(const std::string& name) const {
        for (std::size_t i = 0; i < layout_.size(); ++i)
            if (layout_[i].name == name) return i;
        throw ConfigError("no tensor named '" + name + "'");
    }

    std::span<T> tensor(std::size_t i) { return {values_.data() + offsets_.at(i), layout_[i].numel()}; }
    std::span<const T> tensor(std::size_t i) const {
        return {values_.data() + offsets_.at(i), layout_[i].numel()};
    }

    // View of tensor i as a matrix; rank-1 tensors are a single row.
    Eigen::Map<const Matrix<T>> matrix(std::size_t i) const {
        const auto& s = layout_.at(i).shape;
        const Eigen::Index r = s.size() == 2 ? s[0] : 1;
        const Eigen::Index c = s.size() == 2 ? s[1] : s[0];
        return {values_.data() + offsets_[i], r, c};
    }
    Eigen::Map<Matrix<T>> matrix(std::size_t i) {
        const auto& s = layout_.at(i).shape;
        const Eigen::Index r = s.size() == 2 ? s[0] : 1;
        const Eigen::Index c = s.size() == 2 ? s[1] : s[0];
        return {values_.data() + offsets_[i], r, c};
    }

    bool same_layout(const BasicParamVector& other) const { return layout_ == other.layout_; }

    bool all_finite() const {
        for (T v : values_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool operator==(const BasicParamVector& other) const {
        return layout_ == other.layout_ && values_ == other.values_;
    }

private:
    std::vector<TensorLayout> layout_;
    std::vector<std::size_t> offsets_;
    std::vector<T> values_;
};

using ParamVector = BasicParamVector<float>;

// Tape variables bound to each tensor of a parameter vector.
template <typename T>
struct BoundParams {
    std::vector<Var<T>> tensors;
};

template <typename T>
BoundParams<T> bind(Tape<T>& tape, const BasicParamVector<T>& params, bool requires_grad) {
    BoundParams<T> out;
    for (std::size_t i = 0; i < params.tensor_count(); ++i) {
        Matrix<T> m = params.matrix(i);
        out.tensors.push_back(requires_grad ? tape.leaf(std::move(m)) : tape.constant(std::move(m)));
    }
    return out;
}

template <typename T>
BasicParamVector<T> collect_grad(const Tape<T>& tape, const BoundParams<T>& bound,
                                 const BasicParamVector<T>& like) {
    BasicParamVector<T> g(like.layout());
    for (std::size_t i = 0; i < bound.tensors.size(); ++i) g.matrix(i) = tape.grad(bound.tensors[i]);
    return g;
}

// Gradient of a scalar loss built on a fresh tape. The loss callable receives
// (tape, bound params) and returns a 1x1 variable.
template <typename T, typename LossFn>
BasicParamVector<T> grad(LossFn&& loss_fn, const BasicParamVector<T>& params) {
    Tape<T> tape;
    auto bound = bind(tape, params, true);
    Var<T> loss = loss_fn(tape, bound);
    if (!std::isfinite(static_cast<double>(loss.scalar())))
        throw NumericalError("loss", "non-finite loss value");
    tape.backward(loss);
    return collect_grad(tape, bound, params);
}

}  // namespace mori::nn
