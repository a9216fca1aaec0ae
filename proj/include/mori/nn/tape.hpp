#pragma once

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mori::nn {

// Batch-major storage: one sample per row.
template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
public:
    NumericalError(std::string term, const std::string& what)
        : std::runtime_error(what), term_(std::move(term)) {}
    const std::string& term() const { return term_; }

private:
    std::string term_;
};

template <typename T>
class Tape;

template <typename T>
struct Var {
    Tape<T>* tape = nullptr;
    int id = -1;

    const Matrix<T>& value() const { return tape->value(*this); }
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    T scalar() const { return value()(0, 0); }
};

// Reverse-mode tape over dense matrices. Nodes are appended in evaluation
// order, so a single reverse sweep visits every consumer before its inputs.
template <typename T>
class Tape {
public:
    using Backward = std::function<void(Tape&, int)>;

    Var<T> constant(Matrix<T> value) { return push(std::move(value), false, {}); }
    Var<T> leaf(Matrix<T> value) { return push(std::move(value), true, {}); }
    Var<T> scalar(T v) {
        Matrix<T> m(1, 1);
        m(0, 0) = v;
        return constant(std::move(m));
    }

    Var<T> push(Matrix<T> value, bool requires_grad, Backward backward) {
        nodes_.push_back(Node{std::move(value), Matrix<T>(), requires_grad, std::move(backward)});
        return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
    }

    const Matrix<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
    bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }
    bool requires_grad(int id) const { return nodes_[id].requires_grad; }
    const Matrix<T>& value(int id) const { return nodes_[id].value; }

    // Gradient of the last backward() target with respect to v; zeros when v
    // did not influence it.
    Matrix<T> grad(Var<T> v) const {
        const auto& n = nodes_.at(v.id);
        if (n.grad.size() == 0) return Matrix<T>::Zero(n.value.rows(), n.value.cols());
        return n.grad;
    }

    const Matrix<T>& grad_ref(int id) const { return nodes_[id].grad; }

    template <typename Derived>
    void accumulate(int id, const Eigen::MatrixBase<Derived>& g) {
        auto& n = nodes_[id];
        if (!n.requires_grad) return;
        if (n.grad.size() == 0) {
            n.grad = g;
        } else {
            n.grad += g;
        }
    }

    void backward(Var<T> target) {
        if (target.rows() != 1 || target.cols() != 1)
            throw ConfigError("backward target must be a scalar");
        for (auto& n : nodes_) n.grad.resize(0, 0);
        if (!nodes_[target.id].requires_grad) return;
        nodes_[target.id].grad = Matrix<T>::Ones(1, 1);
        for (int i = target.id; i >= 0; --i) {
            auto& n = nodes_[i];
            if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
            n.backward(*this, i);
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix<T> value;
        Matrix<T> grad;
        bool requires_grad;
        Backward backward;
    };
    std::vector<Node> nodes_;
};

namespace detail {

template <typename T>
bool any_grad(Var<T> a) {
    return a.tape->requires_grad(a);
}
template <typename T>
bool any_grad(Var<T> a, Var<T> b) {
    return a.tape->requires_grad(a) || b.tape->requires_grad(b);
}

template <typename T>
void check_same_tape(Var<T> a, Var<T> b) {
    if (a.tape != b.tape) throw ConfigError("variables live on different tapes");
}

template <typename T>
void check_same_shape(Var<T> a, Var<T> b, const char* op) {
    check_same_tape(a, b);
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ConfigError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                          std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                          std::to_string(b.cols()));
}

}  // namespace detail

// ---- elementwise binary ----

template <typename T>
Var<T> operator+(Var<T> a, Var<T> b) {
    detail::check_same_shape(a, b, "add");
    int ia = a.id, ib = b.id;
    return a.tape->push(a.value() + b.value(), detail::any_grad(a, b), [ia, ib](Tape<T>& t, int self) {
        t.accumulate(ia, t.grad_ref(self));
        t.accumulate(ib, t.grad_ref(self));
    });
}

template <typename T>
Var<T> operator-(Var<T> a, Var<T> b) {
    detail::check_same_shape(a, b, "sub");
    int ia = a.id, ib = b.id;
    return a.tape->push(a.value() - b.value(), detail::any_grad(a, b), [ia, ib](Tape<T>& t, int self) {
        t.accumulate(ia, t.grad_ref(self));
        t.accumulate(ib, -t.grad_ref(self));
    });
}

template <typename T>
Var<T> operator*(Var<T> a, Var<T> b) {
    detail::check_same_shape(a, b, "mul");
    int ia = a.id, ib = b.id;
    Matrix<T> v = a.value().cwiseProduct(b.value());
    return a.tape->push(std::move(v), detail::any_grad(a, b), [ia, ib](Tape<T>& t, int self) {
        const auto& g = t.grad_ref(self);
        if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
        if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
    });
}

template <typename T>
Var<T> operator-(Var<T> a) {
    int ia = a.id;
    return a.tape->push(-a.value(), detail::any_grad(a),
                        [ia](Tape<T>& t, int self) { t.accumulate(ia, -t.grad_ref(self)); });
}

template <typename T>
Var<T> operator*(Var<T> a, T c) {
    int ia = a.id;
    return a.tape->push(a.value() * c, detail::any_grad(a),
                        [ia, c](Tape<T>& t, int self) { t.accumulate(ia, t.grad_ref(self) * c); });
}

template <typename T>
Var<T> operator*(T c, Var<T> a) {
    return a * c;
}

template <typename T>
Var<T> operator+(Var<T> a, T c) {
    int ia = a.id;
    Matrix<T> v = a.value().array() + c;
    return a.tape->push(std::move(v), detail::any_grad(a),
                        [ia](Tape<T>& t, int self) { t.accumulate(ia, t.grad_ref(self)); });
}

template <typename T>
Var<T> operator-(Var<T> a, T c) {
    return a + (-c);
}

template <typename T>
Var<T> operator-(T c, Var<T> a) {
    return (-a) + c;
}

// Elementwise minimum; ties route the gradient to the first argument.
template <typename T>
Var<T> minimum(Var<T> a, Var<T> b) {
    detail::check_same_shape(a, b, "minimum");
    int ia = a.id, ib = b.id;
    Matrix<T> v = a.value().cwiseMin(b.value());
    return a.tape->push(std::move(v), detail::any_grad(a, b), [ia, ib](Tape<T>& t, int self) {
        const auto& g = t.grad_ref(self);
        auto first = (t.value(ia).array() <= t.value(ib).array()).template cast<T>();
        if (t.requires_grad(ia)) t.accumulate(ia, (g.array() * first).matrix());
        if (t.requires_grad(ib)) t.accumulate(ib, (g.array() * (T(1) - first)).matrix());
    });
}

// ---- broadcasting ----

// a: N x C, row: 1 x C
template <typename T>
Var<T> add_row(Var<T> a, Var<T> row) {
    detail::check_same_tape(a, row);
    if (row.rows() != 1 || row.cols() != a.cols()) throw ConfigError("add_row: shape mismatch");
    int ia = a.id, ir = row.id;
    Matrix<T> v = a.value().rowwise() + row.value().row(0);
    return a.tape->push(std::move(v), detail::any_grad(a, row), [ia, ir](Tape<T>& t, int self) {
        const auto& g = t.grad_ref(self);
        t.accumulate(ia, g);
        if (t.requires_grad(ir)) t.accumulate(ir, g.colwise().sum());
    });
}

// a: N x C, col: N x 1 -> N x C with each row scaled.
template <typename T>
Var<T> mul_col(Var<T> a, Var<T> col) {
    detail::check_same_tape(a, col);
    if (col.cols() != 1 || col.rows() != a.rows()) throw ConfigError("mul_col: shape mismatch");
    int ia = a.id, ic = col.id;
    Matrix<T> v = a.value().array().colwise() * col.value().col(0).array();
    return a.tape->push(std::move(v), detail::any_grad(a, col), [ia, ic](Tape<T>& t, int self) {
        const auto& g = t.grad_ref(self);
        if (t.requires_grad(ia))
            t.accumulate(ia, (g.array().colwise() * t.value(ic).col(0).array()).matrix());
        if (t.requires_grad(ic))
            t.accumulate(ic, g.cwiseProduct(t.value(ia)).rowwise().sum());
    });
}

// a: N x C, s: 1 x 1
template <typename T>
Var<T> mul_scalar(Var<T> a, Var<T> s) {
    detail::check_same_tape(a, s);
    if (s.rows() != 1 || s.cols() != 1) throw ConfigError("mul_scalar: expected 1x1");
    int ia = a.id, is = s.id;
    Matrix<T> v = a.value() * s.scalar();
    return a.tape->push(std::move(v), detail::any_grad(a, s), [ia, is](Tape<T>& t, int self) {
        const auto& g = t.grad_ref(self);
        if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(is)(0, 0));
        if (t.requires_grad(is)) {
            Matrix<T> gs(1, 1);
            gs(0, 0) = g.cwiseProduct(t.value(ia)).sum();
            t.accumulate(is, gs);
        }
    });
}

// ---- linear algebra ----

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
    detail::check_same_tape(a, b);
    if (a.cols() != b.rows())
        throw ConfigError("matmul: inner dimension mismatch " + std::to_string(a.cols()) + " vs " +
                          std::to_string(b.rows()));
    int ia = a.id, ib = b.id;
    Matrix<T> v = a.value() * b.value();
    return a.tape->push(std::move(v), detail::any_grad(a, b), [ia, ib](Tape<T>& t, int self) {
        const auto& g = t.grad_ref(self);
        if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
        if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
    });
}

// ---- unary ----

template <typename T>
Var<T> relu(Var<T> a) {
    int ia = a.id;
    Matrix<T> v = a.value().cwiseMax(T(0));
    return a.tape->push(std::move(v), detail::any_grad(a), [ia](Tape<T>& t, int self) {
        auto mask = (t.value(ia).array() > T(0)).template cast<T>();
        t.accumulate(ia, (t.grad_ref(self).array() * mask).matrix());
    });
}

namespace detail {

// Elementwise op whose local derivative is a function of (input, output).
template <typename T, typename Fwd, typename Deriv>
Var<T> unary(Var<T> a, Fwd fwd, Deriv deriv) {
    int ia = a.id;
    Matrix<T> v = fwd(a.value().array()).matrix();
    return a.tape->push(std::move(v), any_grad(a), [ia, deriv](Tape<T>& t, int self) {
        auto local = deriv(t.value(ia).array(), t.value(self).array());
        t.accumulate(ia, (t.grad_ref(self).array() * local).matrix());
    });
}

}  // namespace detail

template <typename T>
Var<T> tanh(Var<T> a) {
    return detail::unary(
        a, [](const auto& x) { return x.tanh(); },
        [](const auto&, const auto& y) { return T(1) - y.square(); });
}

template <typename T>
Var<T> exp(Var<T> a) {
    return detail::unary(
        a, [](const auto& x) { return x.exp(); }, [](const auto&, const auto& y) { return y; });
}

template <typename T>
Var<T> log(Var<T> a) {
    return detail::unary(
        a, [](const auto& x) { return x.log(); }, [](const auto& x, const auto&) { return x.inverse(); });
}

template <typename T>
Var<T> square(Var<T> a) {
    return detail::unary(
        a, [](const auto& x) { return x.square(); }, [](const auto& x, const auto&) { return T(2) * x; });
}

// d|x|/dx taken as sign(x), zero at the origin.
template <typename T>
Var<T> abs(Var<T> a) {
    return detail::unary(
        a, [](const auto& x) { return x.abs(); }, [](const auto& x, const auto&) { return x.sign(); });
}

// log(1 + e^x), stable for large |x|.
template <typename T>
Var<T> softplus(Var<T> a) {
    return detail::unary(
        a,
        [](const auto& x) { return x.max(T(0)) + (-x.abs()).exp().log1p(); },
        [](const auto& x, const auto&) { return T(1) / (T(1) + (-x).exp()); });
}

// Hard clamp; gradient passes only strictly inside (lo, hi).
template <typename T>
Var<T> clamp(Var<T> a, T lo, T hi) {
    return detail::unary(
        a, [lo, hi](const auto& x) { return x.max(lo).min(hi); },
        [lo, hi](const auto& x, const auto&) { return ((x > lo) && (x < hi)).template cast<T>(); });
}

template <typename T>
Var<T> stop_gradient(Var<T> a) {
    return a.tape->constant(a.value());
}

// ---- reductions ----

template <typename T>
Var<T> sum(Var<T> a) {
    int ia = a.id;
    Matrix<T> v(1, 1);
    v(0, 0) = static_cast<T>(a.value().template cast<double>().sum());
    return a.tape->push(std::move(v), detail::any_grad(a), [ia](Tape<T>& t, int self) {
        const auto& x = t.value(ia);
        t.accumulate(ia, Matrix<T>::Constant(x.rows(), x.cols(), t.grad_ref(self)(0, 0)));
    });
}

template <typename T>
Var<T> mean(Var<T> a) {
    const auto n = static_cast<T>(a.value().size());
    return sum(a) * (T(1) / n);
}

// N x C -> N x 1
template <typename T>
Var<T> row_sum(Var<T> a) {
    int ia = a.id;
    Matrix<T> v = a.value().rowwise().sum();
    return a.tape->push(std::move(v), detail::any_grad(a), [ia](Tape<T>& t, int self) {
        const auto& x = t.value(ia);
        Matrix<T> g = t.grad_ref(self).col(0).replicate(1, x.cols());
        t.accumulate(ia, g);
    });
}

// N x C -> 1 x C
template <typename T>
Var<T> col_mean(Var<T> a) {
    int ia = a.id;
    const auto n = static_cast<T>(a.rows());
    Matrix<T> v = a.value().colwise().sum() / n;
    return a.tape->push(std::move(v), detail::any_grad(a), [ia, n](Tape<T>& t, int self) {
        const auto& x = t.value(ia);
        Matrix<T> g = (t.grad_ref(self).row(0) / n).replicate(x.rows(), 1);
        t.accumulate(ia, g);
    });
}

// ---- structural ----

template <typename T>
Var<T> slice_cols(Var<T> a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a.cols()) throw ConfigError("slice_cols: out of range");
    int ia = a.id;
    Matrix<T> v = a.value().middleCols(start, count);
    return a.tape->push(std::move(v), detail::any_grad(a), [ia, start, count](Tape<T>& t, int self) {
        const auto& x = t.value(ia);
        Matrix<T> g = Matrix<T>::Zero(x.rows(), x.cols());
        g.middleCols(start, count) = t.grad_ref(self);
        t.accumulate(ia, g);
    });
}

template <typename T>
Var<T> concat_cols(Var<T> a, Var<T> b) {
    detail::check_same_tape(a, b);
    if (a.rows() != b.rows()) throw ConfigError("concat_cols: row mismatch");
    int ia = a.id, ib = b.id;
    const auto ca = a.cols(), cb = b.cols();
    Matrix<T> v(a.rows(), ca + cb);
    v.leftCols(ca) = a.value();
    v.rightCols(cb) = b.value();
    return a.tape->push(std::move(v), detail::any_grad(a, b), [ia, ib, ca, cb](Tape<T>& t, int self) {
        const auto& g = t.grad_ref(self);
        if (t.requires_grad(ia)) t.accumulate(ia, g.leftCols(ca));
        if (t.requires_grad(ib)) t.accumulate(ib, g.rightCols(cb));
    });
}

// Row-wise log-softmax with max subtraction.
template <typename T>
Var<T> log_softmax_rows(Var<T> a) {
    int ia = a.id;
    const auto& x = a.value();
    Matrix<T> v(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const T m = x.row(r).maxCoeff();
        double s = 0.0;
        for (Eigen::Index c = 0; c < x.cols(); ++c) s += std::exp(static_cast<double>(x(r, c) - m));
        const T lse = m + static_cast<T>(std::log(s));
        v.row(r) = x.row(r).array() - lse;
    }
    return a.tape->push(std::move(v), detail::any_grad(a), [ia](Tape<T>& t, int self) {
        const auto& g = t.grad_ref(self);
        const auto& y = t.value(self);
        Matrix<T> p = y.array().exp().matrix();
        Matrix<T> gs = g.rowwise().sum();
        Matrix<T> out = g - (p.array().colwise() * gs.col(0).array()).matrix();
        t.accumulate(ia, out);
    });
}

// Picks one column per row: N x C, index[r] -> N x 1
template <typename T>
Var<T> pick(Var<T> a, const std::vector<int>& index) {
    if (static_cast<Eigen::Index>(index.size()) != a.rows()) throw ConfigError("pick: index length mismatch");
    for (int i : index)
        if (i < 0 || i >= a.cols()) throw ConfigError("pick: class index out of range");
    int ia = a.id;
    Matrix<T> v(a.rows(), 1);
    for (Eigen::Index r = 0; r < a.rows(); ++r) v(r, 0) = a.value()(r, index[r]);
    return a.tape->push(std::move(v), detail::any_grad(a), [ia, index](Tape<T>& t, int self) {
        const auto& x = t.value(ia);
        Matrix<T> g = Matrix<T>::Zero(x.rows(), x.cols());
        for (Eigen::Index r = 0; r < x.rows(); ++r) g(r, index[r]) = t.grad_ref(self)(r, 0);
        t.accumulate(ia, g);
    });
}

}  // namespace mori::nn
