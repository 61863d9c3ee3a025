// SPDX-License-Identifier: Apache-2.0
#include "beamalign/belief.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>

#include "beamalign/errors.hpp"

namespace beamalign {

Posterior Posterior::from_weights(std::vector<double> weights)
{
    if (weights.empty()) {
        throw std::invalid_argument("posterior needs at least one bin");
    }
    double total = 0.0;
    for (double w : weights) {
        if (!std::isfinite(w) || w < 0.0) {
            throw std::invalid_argument("posterior weights must be finite and non-negative");
        }
        total += w;
    }
    if (!(total > 0.0)) {
        throw std::invalid_argument("posterior weights sum to zero");
    }
    for (double& w : weights) {
        w /= total;
    }
    return Posterior(std::move(weights));
}

Posterior Posterior::uniform(std::size_t n_bins)
{
    return Posterior(std::vector<double>(n_bins, 1.0 / static_cast<double>(n_bins)));
}

Posterior Posterior::delta(std::size_t n_bins, std::size_t bin)
{
    std::vector<double> p(n_bins, 0.0);
    p.at(bin) = 1.0;
    return Posterior(std::move(p));
}

double Posterior::mass(const Beam& beam) const
{
    const AngularGrid g = grid();
    double m = 0.0;
    for (std::size_t k = 0; k < probs_.size(); ++k) {
        if (beam_contains(beam, g.center(k))) {
            m += probs_[k];
        }
    }
    return m;
}

PriorSpec PriorSpec::mixture(const Beam& interval, double inner_mass)
{
    if (!(inner_mass >= 0.0 && inner_mass <= 1.0)) {
        throw std::invalid_argument("mixture inner mass must lie in [0, 1]");
    }
    PriorSpec s;
    s.kind = Kind::mixture;
    s.interval = interval;
    s.inner_mass = inner_mass;
    return s;
}

PriorSpec PriorSpec::default_mixture()
{
    return mixture(Beam::make(5.0 * kPi / 6.0, kPi / 3.0), 0.9);
}

PriorSpec PriorSpec::custom(std::vector<double> table)
{
    PriorSpec s;
    s.kind = Kind::custom;
    s.table = std::move(table);
    return s;
}

std::string PriorSpec::name() const
{
    switch (kind) {
    case Kind::uniform:
        return "uniform";
    case Kind::mixture:
        return "mixture";
    case Kind::custom:
        return "custom";
    }
    return "unknown";
}

Posterior make_prior(const PriorSpec& spec, const AngularGrid& grid)
{
    const std::size_t n = grid.size();
    switch (spec.kind) {
    case PriorSpec::Kind::uniform:
        return Posterior::uniform(n);
    case PriorSpec::Kind::mixture: {
        const auto inside = bin_membership(grid, spec.interval);
        const auto n_in = static_cast<std::size_t>(std::count(inside.begin(), inside.end(), 1));
        const std::size_t n_out = n - n_in;
        const double m = spec.inner_mass;
        if (n_in == 0 && m > 0.0) {
            throw std::invalid_argument("mixture prior: interval contains no bin center");
        }
        if (n_out == 0 && m < 1.0) {
            throw std::invalid_argument("mixture prior: interval leaves no bins for the outer mass");
        }
        std::vector<double> p(n);
        for (std::size_t k = 0; k < n; ++k) {
            p[k] = inside[k] ? m / static_cast<double>(n_in) : (1.0 - m) / static_cast<double>(n_out);
        }
        return Posterior::from_weights(std::move(p));
    }
    case PriorSpec::Kind::custom:
        if (spec.table.size() != n) {
            throw std::invalid_argument("custom prior has " + std::to_string(spec.table.size()) +
                                        " entries for a grid of " + std::to_string(n));
        }
        return Posterior::from_weights(spec.table);
    }
    throw std::logic_error("unhandled prior kind");
}

double sample_angle(const Posterior& prior, Rng& rng)
{
    const auto p = prior.probs();
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t k = p.size();
    for (std::size_t i = 0; i < p.size(); ++i) {
        acc += p[i];
        if (u < acc) {
            k = i;
            break;
        }
    }
    if (k == p.size()) {
        // Rounding left u above the final partial sum.
        k = p.size() - 1;
        while (p[k] == 0.0 && k > 0) {
            --k;
        }
    }
    const AngularGrid grid(p.size());
    const double v = rng.uniform();
    // (1 - v) lies in (0, 1], matching the half-open bin (k w, (k+1) w].
    return wrap((static_cast<double>(k) + (1.0 - v)) * grid.bin_width());
}

Posterior bayes_update(const Posterior& post, const Beam& beam, const Measurement& y,
                       const ChannelParams& ch)
{
    if (ch.sigma2 <= 0.0) {
        throw NoiselessRegime("bayes_update needs sigma2 > 0");
    }
    const AngularGrid grid = post.grid();
    const auto p = post.probs();
    const std::size_t n = p.size();
    std::vector<double> logw(n);
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) {
        if (p[k] > 0.0) {
            logw[k] = std::log(p[k]) + loglik(y, grid.center(k), beam, ch);
            top = std::max(top, logw[k]);
        } else {
            logw[k] = -std::numeric_limits<double>::infinity();
        }
    }
    if (!std::isfinite(top)) {
        throw std::logic_error("bayes_update: posterior lost all of its mass");
    }
    double total = 0.0;
    std::vector<double> out(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        if (p[k] > 0.0) {
            out[k] = std::exp(logw[k] - top);
            total += out[k];
        }
    }
    for (double& v : out) {
        v /= total;
    }
    return Posterior::from_weights(std::move(out));
}

Posterior noiseless_update(const Posterior& post, const Beam& beam, bool detected)
{
    const AngularGrid grid = post.grid();
    std::vector<double> out(post.probs().begin(), post.probs().end());
    double kept = 0.0;
    for (std::size_t k = 0; k < out.size(); ++k) {
        if (beam_contains(beam, grid.center(k)) != detected) {
            out[k] = 0.0;
        }
        kept += out[k];
    }
    if (!(kept > 0.0)) {
        throw InconsistentEvidence(detected ? "detection inside a beam holding no posterior mass"
                                            : "miss outside a beam holding all posterior mass");
    }
    return Posterior::from_weights(std::move(out));
}

double posterior_mean(const Posterior& post, MomentMode mode)
{
    const AngularGrid grid = post.grid();
    const auto p = post.probs();
    if (mode == MomentMode::linear) {
        double m = 0.0;
        for (std::size_t k = 0; k < p.size(); ++k) {
            m += p[k] * grid.center(k);
        }
        return m;
    }
    double c = 0.0;
    double s = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        c += p[k] * std::cos(grid.center(k));
        s += p[k] * std::sin(grid.center(k));
    }
    if (std::hypot(c, s) < 1e-9) {
        throw UndefinedMean("posterior resultant vanishes; circular mean undefined");
    }
    return wrap(std::atan2(s, c));
}

namespace {

double moment_distance(double a, double b, MomentMode mode)
{
    return mode == MomentMode::circular ? circ_dist(a, b) : std::fabs(a - b);
}

}  // namespace

double cam(const Posterior& post, int n, MomentMode mode)
{
    if (n < 1) {
        throw std::invalid_argument("moment order must be >= 1");
    }
    const double m = posterior_mean(post, mode);
    const AngularGrid grid = post.grid();
    const auto p = post.probs();
    double acc = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        if (p[k] > 0.0) {
            acc += p[k] * std::pow(moment_distance(grid.center(k), m, mode), n);
        }
    }
    return acc;
}

double sq_err(const Posterior& post, double psi, MomentMode mode)
{
    const double d = moment_distance(psi, posterior_mean(post, mode), mode);
    return d * d;
}

CredibleBeam shortest_credible_beam(const Posterior& post, double eps)
{
    if (!(eps > 0.0 && eps < 1.0)) {
        throw std::invalid_argument("credible beam error probability must lie in (0, 1)");
    }
    const auto p = post.probs();
    const std::size_t n = p.size();
    // prefix[i] = mass of bins [0, i) on the doubled circle.
    std::vector<double> prefix(2 * n + 1, 0.0);
    for (std::size_t i = 0; i < 2 * n; ++i) {
        prefix[i + 1] = prefix[i] + p[i % n];
    }
    const double target = 1.0 - eps - kMassTolerance;

    std::size_t best_start = 0;
    std::size_t best_len = n;
    std::size_t end = 0;
    for (std::size_t s = 0; s < n; ++s) {
        end = std::max(end, s + 1);
        while (end < s + n && prefix[end] - prefix[s] < target) {
            ++end;
        }
        const std::size_t len = end - s;
        if (len < best_len) {
            best_len = len;
            best_start = s;
        }
    }
    const AngularGrid grid(n);
    CredibleBeam out;
    out.first_bin = best_start;
    out.n_bins = best_len;
    out.beam = grid.span_beam(best_start, best_len);
    out.mass = prefix[best_start + best_len] - prefix[best_start];
    return out;
}

double markov_beamwidth(double mmse, double eps)
{
    if (!(eps > 0.0 && eps < 1.0)) {
        throw std::invalid_argument("markov_beamwidth: eps must lie in (0, 1)");
    }
    if (mmse < 0.0) {
        throw std::invalid_argument("markov_beamwidth: mmse must be >= 0");
    }
    return std::min(std::sqrt(4.0 / eps * mmse), kTwoPi);
}

void write_posterior(std::ostream& os, const Posterior& post)
{
    os << "N=" << post.size() << '\n';
    os << std::setprecision(17);
    for (double v : post.probs()) {
        os << v << '\n';
    }
}

Posterior read_posterior(std::istream& is)
{
    std::string header;
    if (!std::getline(is, header) || header.rfind("N=", 0) != 0) {
        throw std::invalid_argument("posterior dump: missing N=<n_bins> header");
    }
    const std::size_t n = std::stoul(header.substr(2));
    std::vector<double> probs(n);
    for (std::size_t k = 0; k < n; ++k) {
        if (!(is >> probs[k])) {
            throw std::invalid_argument("posterior dump: expected " + std::to_string(n) + " values");
        }
    }
    Posterior checked = Posterior::from_weights(probs);
    double total = 0.0;
    for (double v : probs) {
        total += v;
    }
    return std::fabs(total - 1.0) <= 1e-9 ? Posterior(std::move(probs)) : checked;
}

}  // namespace beamalign
