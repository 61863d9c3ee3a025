// SPDX-License-Identifier: Apache-2.0
#include "beamalign/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace beamalign::ad {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMajor>;
using ConstMatMap = Eigen::Map<const RowMajor>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

Tape& owner(const Value& v)
{
    if (v.tape() == nullptr) {
        throw std::invalid_argument("autodiff: value is not attached to a tape");
    }
    return *v.tape();
}

Tape& common_tape(const Value& a, const Value& b)
{
    Tape& t = owner(a);
    if (b.tape() != &t) {
        throw std::invalid_argument("autodiff: operands belong to different tapes");
    }
    return t;
}

double stable_logistic(double x)
{
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// y = f(x) elementwise, dy/dx = d(x, y).
template <class F, class D>
Value unary(const Value& x, F f, D d)
{
    Tape& t = owner(x);
    const auto xv = t.value_of(x.id());
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        out[i] = f(xv[i]);
    }
    const std::size_t xi = x.id();
    return t.record(std::move(out), t.requires_grad(xi), [xi, d](Tape& tp, std::size_t self) {
        const auto g = tp.grad_of(self);
        const auto xv2 = tp.value_of(xi);
        const auto yv = tp.value_of(self);
        auto gx = tp.grad_of(xi);
        for (std::size_t i = 0; i < g.size(); ++i) {
            gx[i] += g[i] * d(xv2[i], yv[i]);
        }
    });
}

std::size_t broadcast_size(std::size_t na, std::size_t nb)
{
    if (na == nb || nb == 1) {
        return na;
    }
    if (na == 1) {
        return nb;
    }
    throw std::invalid_argument("autodiff: shape mismatch " + std::to_string(na) + " vs " +
                                std::to_string(nb));
}

// y = f(a, b) elementwise with broadcasting; da(a, b, y), db(a, b, y).
template <class F, class DA, class DB>
Value binary(const Value& a, const Value& b, F f, DA da, DB db)
{
    Tape& t = common_tape(a, b);
    const auto av = t.value_of(a.id());
    const auto bv = t.value_of(b.id());
    const std::size_t na = av.size();
    const std::size_t nb = bv.size();
    const std::size_t n = broadcast_size(na, nb);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = f(av[na == 1 ? 0 : i], bv[nb == 1 ? 0 : i]);
    }
    const std::size_t ai = a.id();
    const std::size_t bi = b.id();
    const bool rg = t.requires_grad(ai) || t.requires_grad(bi);
    return t.record(std::move(out), rg, [ai, bi, na, nb, da, db](Tape& tp, std::size_t self) {
        const auto g = tp.grad_of(self);
        const auto av2 = tp.value_of(ai);
        const auto bv2 = tp.value_of(bi);
        const auto yv = tp.value_of(self);
        const bool ga_on = tp.requires_grad(ai);
        const bool gb_on = tp.requires_grad(bi);
        auto ga = tp.grad_of(ai);
        auto gb = tp.grad_of(bi);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double x = av2[na == 1 ? 0 : i];
            const double y = bv2[nb == 1 ? 0 : i];
            if (ga_on) {
                ga[na == 1 ? 0 : i] += g[i] * da(x, y, yv[i]);
            }
            if (gb_on) {
                gb[nb == 1 ? 0 : i] += g[i] * db(x, y, yv[i]);
            }
        }
    });
}

}  // namespace

std::span<const double> Value::data() const
{
    return owner(*this).value_of(id_);
}

double Value::scalar() const
{
    const auto v = data();
    if (v.size() != 1) {
        throw std::logic_error("autodiff: scalar() on a value of size " + std::to_string(v.size()));
    }
    return v[0];
}

std::size_t Value::size() const
{
    return data().size();
}

std::span<const double> Value::grad() const
{
    return owner(*this).grad_of(id_);
}

bool Value::requires_grad() const
{
    return owner(*this).requires_grad(id_);
}

Value Tape::constant(std::vector<double> values)
{
    return record(std::move(values), false, nullptr);
}

Value Tape::constant(double value)
{
    return constant(std::vector<double>{value});
}

Value Tape::variable(std::vector<double> values)
{
    Node node;
    node.rows = values.size();
    node.value = std::move(values);
    node.requires_grad = true;
    nodes_.push_back(std::move(node));
    return Value(this, nodes_.size() - 1);
}

Value Tape::variable(double value)
{
    return variable(std::vector<double>{value});
}

Value Tape::parameter(std::span<const double> data, std::span<double> grad_sink, std::size_t rows,
                      std::size_t cols)
{
    if (data.size() != rows * cols) {
        throw std::invalid_argument("autodiff: parameter extent does not match its shape");
    }
    if (!grad_sink.empty() && grad_sink.size() != data.size()) {
        throw std::invalid_argument("autodiff: gradient sink extent does not match parameter");
    }
    Node node;
    node.ext_value = data.data();
    node.ext_grad = grad_sink.empty() ? nullptr : grad_sink.data();
    node.rows = rows;
    node.cols = cols;
    node.requires_grad = !grad_sink.empty();
    nodes_.push_back(std::move(node));
    return Value(this, nodes_.size() - 1);
}

Value Tape::record(std::vector<double> values, bool requires_grad, BackwardFn fn)
{
    Node node;
    node.rows = values.size();
    node.value = std::move(values);
    node.requires_grad = requires_grad;
    if (requires_grad) {
        node.backward = std::move(fn);
    }
    nodes_.push_back(std::move(node));
    return Value(this, nodes_.size() - 1);
}

std::span<const double> Tape::value_of(std::size_t id) const
{
    const Node& n = nodes_.at(id);
    if (n.ext_value != nullptr) {
        return {n.ext_value, n.rows * n.cols};
    }
    return n.value;
}

std::span<double> Tape::grad_of(std::size_t id)
{
    Node& n = nodes_.at(id);
    if (n.ext_grad != nullptr) {
        return {n.ext_grad, n.rows * n.cols};
    }
    return n.grad;
}

void Tape::check_owner(const Value& v) const
{
    if (v.tape() != this) {
        throw std::invalid_argument("autodiff: value belongs to another tape");
    }
}

void Tape::backward(const Value& root, double seed)
{
    check_owner(root);
    if (value_of(root.id()).size() != 1) {
        throw std::invalid_argument("autodiff: backward() needs a scalar root");
    }
    for (Node& n : nodes_) {
        if (n.requires_grad && n.ext_grad == nullptr) {
            n.grad.assign(n.rows * n.cols, 0.0);
        }
    }
    if (!requires_grad(root.id())) {
        return;
    }
    grad_of(root.id())[0] += seed;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        Node& n = nodes_[i];
        if (n.requires_grad && n.backward) {
            n.backward(*this, i);
        }
    }
}

Value add(const Value& a, const Value& b)
{
    return binary(
        a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return 1.0; });
}

Value sub(const Value& a, const Value& b)
{
    return binary(
        a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return -1.0; });
}

Value mul(const Value& a, const Value& b)
{
    return binary(
        a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
        [](double x, double, double) { return x; });
}

Value div(const Value& a, const Value& b)
{
    return binary(
        a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
        [](double, double y, double r) { return -r / y; });
}

Value add(const Value& a, double c)
{
    return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Value scale(const Value& a, double c)
{
    return unary(a, [c](double x) { return x * c; }, [c](double, double) { return c; });
}

Value matvec(const Value& w, const Value& x)
{
    Tape& t = common_tape(w, x);
    const std::size_t wi = w.id();
    const std::size_t xi = x.id();
    const std::size_t rows = t.rows_of(wi);
    const std::size_t cols = t.cols_of(wi);
    const auto xv = t.value_of(xi);
    if (xv.size() != cols) {
        throw std::invalid_argument("autodiff: matvec expects a vector of length " + std::to_string(cols) +
                                    ", got " + std::to_string(xv.size()));
    }
    const auto wv = t.value_of(wi);
    std::vector<double> out(rows);
    VecMap(out.data(), static_cast<Eigen::Index>(rows)).noalias() =
        ConstMatMap(wv.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)) *
        ConstVecMap(xv.data(), static_cast<Eigen::Index>(cols));
    const bool rg = t.requires_grad(wi) || t.requires_grad(xi);
    return t.record(std::move(out), rg, [wi, xi, rows, cols](Tape& tp, std::size_t self) {
        const auto r = static_cast<Eigen::Index>(rows);
        const auto c = static_cast<Eigen::Index>(cols);
        const auto g = tp.grad_of(self);
        ConstVecMap gv(g.data(), r);
        if (tp.requires_grad(wi)) {
            auto gw = tp.grad_of(wi);
            const auto xv2 = tp.value_of(xi);
            MatMap(gw.data(), r, c).noalias() += gv * ConstVecMap(xv2.data(), c).transpose();
        }
        if (tp.requires_grad(xi)) {
            auto gx = tp.grad_of(xi);
            const auto wv2 = tp.value_of(wi);
            VecMap(gx.data(), c).noalias() += ConstMatMap(wv2.data(), r, c).transpose() * gv;
        }
    });
}

Value relu(const Value& x)
{
    return unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
                 [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Value logistic(const Value& x)
{
    const double k = owner(x).options().corrupt_logistic_derivative ? 1.5 : 1.0;
    return unary(x, stable_logistic, [k](double, double s) { return k * s * (1.0 - s); });
}

Value sqrt_logistic(const Value& x)
{
    // sqrt(s) = exp(-softplus(-x)/2); d/dx = sqrt(s) (1 - s) / 2.
    return unary(
        x,
        [](double v) {
            if (v >= 0.0) {
                return 1.0 / std::sqrt(1.0 + std::exp(-v));
            }
            return std::exp(0.5 * v) / std::sqrt(1.0 + std::exp(v));
        },
        [](double v, double r) { return 0.5 * r * (1.0 - stable_logistic(v)); });
}

Value exp(const Value& x)
{
    return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Value log(const Value& x)
{
    return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Value sin(const Value& x)
{
    return unary(x, [](double v) { return std::sin(v); }, [](double v, double) { return std::cos(v); });
}

Value cos(const Value& x)
{
    return unary(x, [](double v) { return std::cos(v); }, [](double v, double) { return -std::sin(v); });
}

Value sqrt(const Value& x)
{
    return unary(x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Value square(const Value& x)
{
    return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Value abs(const Value& x)
{
    return abs_pow(x, 1);
}

Value abs_pow(const Value& x, int n)
{
    if (n < 1) {
        throw std::invalid_argument("autodiff: abs_pow needs n >= 1");
    }
    return unary(
        x, [n](double v) { return std::pow(std::fabs(v), n); },
        [n](double v, double) {
            if (v == 0.0) {
                return 0.0;
            }
            const double sign = v > 0.0 ? 1.0 : -1.0;
            return n == 1 ? sign : sign * n * std::pow(std::fabs(v), n - 1);
        });
}

Value wrap_pi(const Value& x)
{
    constexpr double two_pi = 2.0 * std::numbers::pi;
    return unary(
        x,
        [](double v) {
            double r = std::fmod(v + std::numbers::pi, two_pi);
            if (r <= 0.0) {
                r += two_pi;
            }
            return r - std::numbers::pi;
        },
        [](double, double) { return 1.0; });
}

Value clamp(const Value& x, double lo, double hi)
{
    return unary(
        x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
        [lo, hi](double v, double) { return v > lo && v < hi ? 1.0 : 0.0; });
}

Value sum(const Value& x)
{
    Tape& t = owner(x);
    const auto xv = t.value_of(x.id());
    double s = 0.0;
    for (double v : xv) {
        s += v;
    }
    const std::size_t xi = x.id();
    return t.record({s}, t.requires_grad(xi), [xi](Tape& tp, std::size_t self) {
        const double g = tp.grad_of(self)[0];
        for (double& gx : tp.grad_of(xi)) {
            gx += g;
        }
    });
}

Value dot(const Value& a, const Value& b)
{
    Tape& t = common_tape(a, b);
    const auto av = t.value_of(a.id());
    const auto bv = t.value_of(b.id());
    if (av.size() != bv.size()) {
        throw std::invalid_argument("autodiff: dot of vectors with different lengths");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) {
        s += av[i] * bv[i];
    }
    const std::size_t ai = a.id();
    const std::size_t bi = b.id();
    const bool rg = t.requires_grad(ai) || t.requires_grad(bi);
    return t.record({s}, rg, [ai, bi](Tape& tp, std::size_t self) {
        const double g = tp.grad_of(self)[0];
        const auto av2 = tp.value_of(ai);
        const auto bv2 = tp.value_of(bi);
        if (tp.requires_grad(ai)) {
            auto ga = tp.grad_of(ai);
            for (std::size_t i = 0; i < ga.size(); ++i) {
                ga[i] += g * bv2[i];
            }
        }
        if (tp.requires_grad(bi)) {
            auto gb = tp.grad_of(bi);
            for (std::size_t i = 0; i < gb.size(); ++i) {
                gb[i] += g * av2[i];
            }
        }
    });
}

Value weighted_sum(std::span<const double> weights, const Value& x)
{
    Tape& t = owner(x);
    const auto xv = t.value_of(x.id());
    if (weights.size() != xv.size()) {
        throw std::invalid_argument("autodiff: weighted_sum length mismatch");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) {
        s += weights[i] * xv[i];
    }
    std::vector<double> w(weights.begin(), weights.end());
    const std::size_t xi = x.id();
    return t.record({s}, t.requires_grad(xi), [xi, w = std::move(w)](Tape& tp, std::size_t self) {
        const double g = tp.grad_of(self)[0];
        auto gx = tp.grad_of(xi);
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += g * w[i];
        }
    });
}

Value element(const Value& x, std::size_t i)
{
    Tape& t = owner(x);
    const auto xv = t.value_of(x.id());
    if (i >= xv.size()) {
        throw std::out_of_range("autodiff: element index out of range");
    }
    const std::size_t xi = x.id();
    return t.record({xv[i]}, t.requires_grad(xi), [xi, i](Tape& tp, std::size_t self) {
        tp.grad_of(xi)[i] += tp.grad_of(self)[0];
    });
}

namespace {

double lse_value(std::span<const double> xv)
{
    double top = -std::numeric_limits<double>::infinity();
    for (double v : xv) {
        top = std::max(top, v);
    }
    if (!std::isfinite(top)) {
        throw std::domain_error("autodiff: log_sum_exp of an all -inf or non-finite vector");
    }
    double s = 0.0;
    for (double v : xv) {
        s += std::exp(v - top);
    }
    return top + std::log(s);
}

}  // namespace

Value log_sum_exp(const Value& x)
{
    Tape& t = owner(x);
    const double r = lse_value(t.value_of(x.id()));
    const std::size_t xi = x.id();
    return t.record({r}, t.requires_grad(xi), [xi](Tape& tp, std::size_t self) {
        const double g = tp.grad_of(self)[0];
        const double r2 = tp.value_of(self)[0];
        const auto xv = tp.value_of(xi);
        auto gx = tp.grad_of(xi);
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += g * std::exp(xv[i] - r2);
        }
    });
}

Value softmax_normalize(const Value& z)
{
    Tape& t = owner(z);
    const auto zv = t.value_of(z.id());
    const double r = lse_value(zv);
    std::vector<double> out(zv.size());
    for (std::size_t i = 0; i < zv.size(); ++i) {
        out[i] = std::exp(zv[i] - r);
    }
    const std::size_t zi = z.id();
    return t.record(std::move(out), t.requires_grad(zi), [zi](Tape& tp, std::size_t self) {
        const auto g = tp.grad_of(self);
        const auto s = tp.value_of(self);
        double gs = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            gs += g[i] * s[i];
        }
        auto gz = tp.grad_of(zi);
        for (std::size_t i = 0; i < g.size(); ++i) {
            gz[i] += s[i] * (g[i] - gs);
        }
    });
}

Value log_softmax(const Value& z)
{
    Tape& t = owner(z);
    const auto zv = t.value_of(z.id());
    const double r = lse_value(zv);
    std::vector<double> out(zv.size());
    for (std::size_t i = 0; i < zv.size(); ++i) {
        out[i] = zv[i] - r;
    }
    const std::size_t zi = z.id();
    return t.record(std::move(out), t.requires_grad(zi), [zi](Tape& tp, std::size_t self) {
        const auto g = tp.grad_of(self);
        const auto y = tp.value_of(self);
        double gsum = 0.0;
        for (double v : g) {
            gsum += v;
        }
        auto gz = tp.grad_of(zi);
        for (std::size_t i = 0; i < g.size(); ++i) {
            gz[i] += g[i] - std::exp(y[i]) * gsum;
        }
    });
}

Value atan2(const Value& y, const Value& x, double reg)
{
    Tape& t = common_tape(y, x);
    const double yv = y.scalar();
    const double xv = x.scalar();
    const std::size_t yi = y.id();
    const std::size_t xi = x.id();
    const bool rg = t.requires_grad(yi) || t.requires_grad(xi);
    return t.record({std::atan2(yv, xv)}, rg, [yi, xi, reg](Tape& tp, std::size_t self) {
        const double g = tp.grad_of(self)[0];
        const double a = tp.value_of(yi)[0];
        const double b = tp.value_of(xi)[0];
        const double den = a * a + b * b + reg;
        if (tp.requires_grad(yi)) {
            tp.grad_of(yi)[0] += g * b / den;
        }
        if (tp.requires_grad(xi)) {
            tp.grad_of(xi)[0] -= g * a / den;
        }
    });
}

}  // namespace beamalign::ad
