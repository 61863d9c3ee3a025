// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "beamalign/autodiff.hpp"
#include "beamalign/rng.hpp"

using namespace beamalign;
namespace ad = beamalign::ad;

namespace {

using Graph = std::function<ad::Value(ad::Tape&, const ad::Value&)>;

double eval(const Graph& f, const std::vector<double>& x)
{
    ad::Tape t;
    return f(t, t.constant(x)).scalar();
}

// Central differences against the tape gradient for every input coordinate.
double max_rel_err(const Graph& f, std::vector<double> x, double h = 1e-5)
{
    ad::Tape t;
    const ad::Value v = t.variable(x);
    t.backward(f(t, v));
    const std::vector<double> g(v.grad().begin(), v.grad().end());
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double x0 = x[i];
        x[i] = x0 + h;
        const double up = eval(f, x);
        x[i] = x0 - h;
        const double dn = eval(f, x);
        x[i] = x0;
        const double num = (up - dn) / (2 * h);
        const double rel = std::fabs(num - g[i]) / std::max({std::fabs(num), std::fabs(g[i]), 1e-6});
        worst = std::max(worst, rel);
    }
    return worst;
}

std::vector<double> random_vec(Rng& rng, std::size_t n, double lo, double hi)
{
    std::vector<double> v(n);
    for (auto& e : v) {
        e = rng.uniform(lo, hi);
    }
    return v;
}

}  // namespace

TEST_CASE("primitive derivative examples")
{
    ad::Tape t;
    const ad::Value x = t.variable(0.0);
    t.backward(ad::logistic(x));
    CHECK(x.grad()[0] == doctest::Approx(0.25));

    ad::Tape t2;
    const ad::Value r = t2.variable({-1.0, 1.0, 0.0});
    t2.backward(ad::sum(ad::relu(r)));
    CHECK(r.grad()[0] == 0.0);
    CHECK(r.grad()[1] == 1.0);
    CHECK(r.grad()[2] == 0.0);

    ad::Tape t3;
    const ad::Value big = t3.constant({1000.0, 1000.0});
    CHECK(ad::log_sum_exp(big).scalar() == doctest::Approx(1000.0 + std::log(2.0)));

    ad::Tape t4;
    const ad::Value inf = t4.constant({-std::numeric_limits<double>::infinity(), 0.0});
    CHECK(ad::log_sum_exp(inf).scalar() == 0.0);
}

TEST_CASE("backward examples")
{
    ad::Tape t;
    const ad::Value x = t.variable(3.0);
    const ad::Value y = t.variable(4.0);
    t.backward(x * y);
    CHECK(x.grad()[0] == 4.0);
    CHECK(y.grad()[0] == 3.0);

    ad::Tape t2;
    const ad::Value z = t2.variable({0.3, -1.2, 2.0, 0.1});
    t2.backward(ad::sum(ad::softmax_normalize(z)));
    for (double g : z.grad()) {
        CHECK(std::fabs(g) < 1e-15);
    }
}

TEST_CASE("fan-out accumulates")
{
    ad::Tape t;
    const ad::Value x = t.variable(2.0);
    t.backward(x * x + x * 3.0);
    CHECK(x.grad()[0] == doctest::Approx(7.0));
}

TEST_CASE("leaves outside the dependency cone get exact zeros")
{
    ad::Tape t;
    const ad::Value a = t.variable({1.0, 2.0});
    const ad::Value b = t.variable({5.0, 6.0});
    (void)ad::exp(b);
    t.backward(ad::sum(ad::square(a)));
    CHECK(b.grad()[0] == 0.0);
    CHECK(b.grad()[1] == 0.0);
    CHECK(a.grad()[1] == 4.0);
}

TEST_CASE("errors")
{
    ad::Tape t;
    ad::Tape other;
    const ad::Value v = t.variable({1.0, 2.0});
    const ad::Value w = t.variable({1.0, 2.0, 3.0});
    CHECK_THROWS_AS(t.backward(v), std::invalid_argument);
    CHECK_THROWS_AS(ad::add(v, w), std::invalid_argument);
    CHECK_THROWS_AS(ad::add(v, other.variable({1.0, 1.0})), std::invalid_argument);
    CHECK_THROWS_AS(other.backward(ad::sum(v)), std::invalid_argument);
    std::vector<double> m(6, 0.1);
    std::vector<double> g(6, 0.0);
    const ad::Value W = t.parameter(m, g, 2, 3);
    CHECK_THROWS_AS(ad::matvec(W, v), std::invalid_argument);
    CHECK_THROWS_AS(v.scalar(), std::logic_error);
}

TEST_CASE("elementwise primitives against finite differences")
{
    Rng rng(17);
    const std::vector<std::pair<const char*, Graph>> cases = {
        {"add", [](ad::Tape&, const ad::Value& x) { return ad::sum(x + ad::element(x, 1)); }},
        {"sub", [](ad::Tape&, const ad::Value& x) { return ad::sum(ad::square(x - ad::element(x, 0))); }},
        {"mul", [](ad::Tape&, const ad::Value& x) { return ad::sum(x * ad::sin(x)); }},
        {"div", [](ad::Tape&, const ad::Value& x) { return ad::sum(ad::sin(x) / (ad::square(x) + 1.0)); }},
        {"logistic", [](ad::Tape&, const ad::Value& x) { return ad::dot(ad::logistic(x * 3.0), x); }},
        {"sqrt_logistic", [](ad::Tape&, const ad::Value& x) { return ad::sum(ad::sqrt_logistic(x * 4.0)); }},
        {"exp_log", [](ad::Tape&, const ad::Value& x) { return ad::sum(ad::log(ad::exp(x) + 2.0)); }},
        {"cos", [](ad::Tape&, const ad::Value& x) { return ad::sum(ad::cos(x * x)); }},
        {"sqrt", [](ad::Tape&, const ad::Value& x) { return ad::sum(ad::sqrt(ad::square(x) + 0.5)); }},
        {"abs_pow3", [](ad::Tape&, const ad::Value& x) { return ad::sum(ad::abs_pow(x, 3)); }},
        {"abs", [](ad::Tape&, const ad::Value& x) { return ad::sum(ad::abs(x) * x); }},
        {"relu", [](ad::Tape&, const ad::Value& x) { return ad::sum(ad::square(ad::relu(x))); }},
        {"lse", [](ad::Tape&, const ad::Value& x) { return ad::log_sum_exp(x * 2.0); }},
        {"softmax",
         [](ad::Tape&, const ad::Value& x) { return ad::dot(ad::softmax_normalize(x), ad::sin(x)); }},
        {"log_softmax", [](ad::Tape&, const ad::Value& x) { return ad::dot(ad::log_softmax(x), ad::cos(x)); }},
        {"weighted_sum",
         [](ad::Tape&, const ad::Value& x) {
             const std::vector<double> w = {0.5, -1.0, 2.0, 0.25, 3.0};
             return ad::weighted_sum(w, ad::square(x));
         }},
        {"wrap_pi", [](ad::Tape&, const ad::Value& x) { return ad::sum(ad::square(ad::wrap_pi(x * 0.5))); }},
        {"clamp", [](ad::Tape&, const ad::Value& x) { return ad::sum(ad::square(ad::clamp(x, -0.9, 0.9))); }},
        {"atan2",
         [](ad::Tape&, const ad::Value& x) {
             return ad::atan2(ad::element(x, 0) + 0.2, ad::element(x, 1) - 2.0) * ad::element(x, 2);
         }},
    };
    for (const auto& [name, f] : cases) {
        const std::string label = name;
        CAPTURE(label);
        for (int rep = 0; rep < 20; ++rep) {
            std::vector<double> x = random_vec(rng, 5, -2.0, 2.0);
            // Keep clear of kinks.
            for (auto& e : x) {
                if (std::fabs(e) < 1e-3 || std::fabs(std::fabs(e) - 0.9) < 1e-3) {
                    e += 0.01;
                }
            }
            CHECK(max_rel_err(f, x) < 1e-5);
        }
    }
}

TEST_CASE("matvec and dense layers against finite differences")
{
    Rng rng(2);
    const std::size_t rows = 7;
    const std::size_t cols = 5;
    const std::vector<double> W = random_vec(rng, rows * cols, -1, 1);
    const std::vector<double> b = random_vec(rng, rows, -1, 1);
    std::vector<double> scratch_w(rows * cols, 0.0);
    std::vector<double> scratch_b(rows, 0.0);
    const Graph f = [&](ad::Tape& t, const ad::Value& x) {
        const ad::Value w = t.parameter(W, scratch_w, rows, cols);
        const ad::Value bias = t.parameter(b, scratch_b, rows, 1);
        return ad::sum(ad::logistic(ad::dense(w, bias, x)));
    };
    ad::Tape t;
    const std::vector<double> x = random_vec(rng, cols, -1, 1);
    std::vector<double> gw(rows * cols, 0.0);
    std::vector<double> gb(rows, 0.0);
    const ad::Value xv = t.variable(x);
    const ad::Value w = t.parameter(W, gw, rows, cols);
    const ad::Value bias = t.parameter(b, gb, rows, 1);
    t.backward(ad::sum(ad::logistic(ad::dense(w, bias, xv))));

    // Direct oracle.
    for (std::size_t r = 0; r < rows; ++r) {
        double z = b[r];
        for (std::size_t c = 0; c < cols; ++c) {
            z += W[r * cols + c] * x[c];
        }
        const double s = 1.0 / (1.0 + std::exp(-z));
        CHECK(gb[r] == doctest::Approx(s * (1 - s)).epsilon(1e-12));
        for (std::size_t c = 0; c < cols; ++c) {
            CHECK(gw[r * cols + c] == doctest::Approx(s * (1 - s) * x[c]).epsilon(1e-12));
        }
    }
    CHECK(max_rel_err(f, x) < 1e-5);
}

TEST_CASE("parameter gradients accumulate into the external sink")
{
    std::vector<double> data = {1.0, 2.0};
    std::vector<double> sink = {10.0, 10.0};
    for (int rep = 0; rep < 2; ++rep) {
        ad::Tape t;
        const ad::Value p = t.parameter(data, sink, 2, 1);
        t.backward(ad::sum(ad::square(p)));
    }
    CHECK(sink[0] == 14.0);
    CHECK(sink[1] == 18.0);
}

TEST_CASE("identical tapes give bitwise identical gradients")
{
    Rng rng(9);
    const std::vector<double> x = random_vec(rng, 32, -3, 3);
    auto run = [&] {
        ad::Tape t;
        const ad::Value v = t.variable(x);
        const ad::Value z = ad::log_softmax(ad::sin(v) * 4.0);
        t.backward(ad::dot(ad::softmax_normalize(z), ad::abs_pow(v, 2)));
        return std::vector<double>(v.grad().begin(), v.grad().end());
    };
    CHECK(run() == run());
}

TEST_CASE("corrupted logistic derivative is detectable")
{
    ad::Tape t(ad::TapeOptions{true});
    const ad::Value x = t.variable(0.0);
    t.backward(ad::logistic(x));
    CHECK(x.grad()[0] == doctest::Approx(0.375));
    CHECK(ad::logistic(t.constant(0.0)).scalar() == 0.5);
}
