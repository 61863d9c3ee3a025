// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

/// Reverse-mode automatic differentiation over scalars and dense vectors.
///
/// A Tape records every primitive in execution order; Tape::backward() walks
/// the record in exact reverse and accumulates adjoints. Values are light
/// handles (tape pointer + node index) and are only meaningful while their
/// tape is alive. Parameters can be bound to external storage so the same
/// weights feed many tapes while each tape accumulates into its own gradient
/// sink.
namespace beamalign::ad {

class Tape;

class Value {
public:
    Value() = default;

    std::span<const double> data() const;
    /// Throws std::logic_error unless size() == 1.
    double scalar() const;
    double operator[](std::size_t i) const { return data()[i]; }
    std::size_t size() const;
    /// Adjoint after Tape::backward(); empty if the node needs no gradient.
    std::span<const double> grad() const;
    bool requires_grad() const;

    Tape* tape() const noexcept { return tape_; }
    std::size_t id() const noexcept { return id_; }

private:
    friend class Tape;
    Value(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

struct TapeOptions {
    /// Negative-control fault: scales the logistic derivative by 1.5.
    bool corrupt_logistic_derivative = false;
};

class Tape {
public:
    /// Called with the tape and the id of the node being differentiated.
    using BackwardFn = std::function<void(Tape&, std::size_t)>;

    explicit Tape(TapeOptions options = {}) : options_(options) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Value constant(std::vector<double> values);
    Value constant(double value);

    /// Leaf whose gradient is kept on the tape.
    Value variable(std::vector<double> values);
    Value variable(double value);

    /// Leaf viewing `data` as a row-major rows x cols matrix. Gradients are
    /// added into `grad_sink` (same extent), which the caller owns and zeroes.
    Value parameter(std::span<const double> data, std::span<double> grad_sink, std::size_t rows,
                    std::size_t cols);

    /// Seeds d(root)/d(root) = `seed` and propagates to every node. Throws
    /// std::invalid_argument if `root` is not a scalar of this tape.
    void backward(const Value& root, double seed = 1.0);

    std::size_t size() const noexcept { return nodes_.size(); }
    const TapeOptions& options() const noexcept { return options_; }

    // Primitive implementation interface.
    std::span<const double> value_of(std::size_t id) const;
    std::span<double> grad_of(std::size_t id);
    std::size_t rows_of(std::size_t id) const { return nodes_[id].rows; }
    std::size_t cols_of(std::size_t id) const { return nodes_[id].cols; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    /// Records an op result. `fn` is kept only when `requires_grad` is set.
    Value record(std::vector<double> values, bool requires_grad, BackwardFn fn);

    void check_owner(const Value& v) const;

private:
    struct Node {
        std::vector<double> value;
        std::vector<double> grad;
        const double* ext_value = nullptr;
        double* ext_grad = nullptr;
        std::size_t rows = 0;
        std::size_t cols = 1;
        bool requires_grad = false;
        BackwardFn backward;
    };

    std::deque<Node> nodes_;
    TapeOptions options_;
};

// Elementwise arithmetic; a size-1 operand broadcasts against the other.
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value div(const Value& a, const Value& b);
Value add(const Value& a, double c);
Value scale(const Value& a, double c);

inline Value operator+(const Value& a, const Value& b) { return add(a, b); }
inline Value operator-(const Value& a, const Value& b) { return sub(a, b); }
inline Value operator*(const Value& a, const Value& b) { return mul(a, b); }
inline Value operator/(const Value& a, const Value& b) { return div(a, b); }
inline Value operator+(const Value& a, double c) { return add(a, c); }
inline Value operator+(double c, const Value& a) { return add(a, c); }
inline Value operator-(const Value& a, double c) { return add(a, -c); }
inline Value operator*(const Value& a, double c) { return scale(a, c); }
inline Value operator*(double c, const Value& a) { return scale(a, c); }
inline Value operator-(const Value& a) { return scale(a, -1.0); }

/// W x for a rows x cols parameter W and a length-cols vector x.
Value matvec(const Value& w, const Value& x);
/// Dense layer W x + b.
inline Value dense(const Value& w, const Value& b, const Value& x) { return add(matvec(w, x), b); }

Value relu(const Value& x);  ///< relu'(0) = 0
Value logistic(const Value& x);
Value sqrt_logistic(const Value& x);  ///< sqrt(logistic(x)), finite derivative everywhere
Value exp(const Value& x);
Value log(const Value& x);
Value sin(const Value& x);
Value cos(const Value& x);
Value sqrt(const Value& x);
Value square(const Value& x);
Value abs(const Value& x);
Value abs_pow(const Value& x, int n);  ///< |x|^n, n >= 1
/// Representative on (-pi, pi]; derivative 1 away from the seam.
Value wrap_pi(const Value& x);
/// Derivative 1 strictly inside (lo, hi), 0 where clamped.
Value clamp(const Value& x, double lo, double hi);

Value sum(const Value& x);
Value dot(const Value& a, const Value& b);
Value weighted_sum(std::span<const double> weights, const Value& x);
Value element(const Value& x, std::size_t i);

/// log sum exp(x) with max shift; -inf entries contribute zero.
Value log_sum_exp(const Value& x);
/// exp(z) / sum exp(z).
Value softmax_normalize(const Value& z);
/// z - log_sum_exp(z), fused.
Value log_softmax(const Value& z);

/// Angle of (x, y); `reg` is added to x^2 + y^2 in the derivative.
Value atan2(const Value& y, const Value& x, double reg = 1e-24);

}  // namespace beamalign::ad
