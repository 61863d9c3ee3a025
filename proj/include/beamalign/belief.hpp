// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "beamalign/angular.hpp"
#include "beamalign/channel.hpp"

namespace beamalign {

/// Probability vector over the bins of an AngularGrid of the same size.
/// Every public constructor and update leaves it normalized to 1.
class Posterior {
public:
    /// Normalizes `weights`. Throws std::invalid_argument on negative,
    /// non-finite or all-zero input.
    static Posterior from_weights(std::vector<double> weights);

    static Posterior uniform(std::size_t n_bins);

    /// Single bin with all of the mass.
    static Posterior delta(std::size_t n_bins, std::size_t bin);

    std::size_t size() const noexcept { return probs_.size(); }
    std::span<const double> probs() const noexcept { return probs_; }
    double operator[](std::size_t k) const { return probs_[k]; }
    AngularGrid grid() const { return AngularGrid(probs_.size()); }

    /// Mass on bins whose centers lie in `beam`.
    double mass(const Beam& beam) const;

private:
    friend Posterior read_posterior(std::istream& is);
    explicit Posterior(std::vector<double> probs) : probs_(std::move(probs)) {}
    std::vector<double> probs_;
};

struct PriorSpec {
    enum class Kind { uniform, mixture, custom };

    Kind kind = Kind::uniform;
    Beam interval{};            ///< mixture: high-probability arc
    double inner_mass = 0.0;    ///< mixture: mass assigned to `interval`
    std::vector<double> table;  ///< custom: per-bin weights

    static PriorSpec uniform() { return {}; }
    static PriorSpec mixture(const Beam& interval, double inner_mass);
    /// (5pi/6, 7pi/6] with mass 0.9.
    static PriorSpec default_mixture();
    static PriorSpec custom(std::vector<double> table);

    std::string name() const;
};

Posterior make_prior(const PriorSpec& spec, const AngularGrid& grid);

/// Draws an AoA from the discretized prior: a bin by its probability, then a
/// uniform point inside that bin.
double sample_angle(const Posterior& prior, Rng& rng);

/// Bayes rule with the hard sectored likelihood evaluated at bin centers,
/// normalized in the log domain. Zero-probability bins stay zero.
Posterior bayes_update(const Posterior& post, const Beam& beam, const Measurement& y,
                       const ChannelParams& ch);

/// Conditions on {psi in beam} (detected) or its complement. Throws
/// InconsistentEvidence when that event has zero mass.
Posterior noiseless_update(const Posterior& post, const Beam& beam, bool detected);

/// How first and second moments treat the 0/2pi seam.
enum class MomentMode {
    circular,  ///< resultant-direction mean, wrap-around distance
    linear,    ///< arithmetic mean of bin centers, |a - b|
};

/// Posterior mean direction on (0, 2pi]. Throws UndefinedMean when the
/// resultant length is below 1e-9 (circular mode only).
double posterior_mean(const Posterior& post, MomentMode mode = MomentMode::circular);

/// n-th central absolute moment about posterior_mean().
double cam(const Posterior& post, int n, MomentMode mode = MomentMode::circular);

/// Squared distance between `psi` and the posterior mean.
double sq_err(const Posterior& post, double psi, MomentMode mode = MomentMode::circular);

struct CredibleBeam {
    Beam beam;
    std::size_t first_bin = 0;
    std::size_t n_bins = 0;
    double mass = 0.0;
};

/// Shortest whole-bin arc with mass >= 1 - eps; ties go to the smallest start
/// bin. Circular two-pointer sweep over prefix sums, O(N).
CredibleBeam shortest_credible_beam(const Posterior& post, double eps);

/// Beamwidth bound sqrt(4 mmse / eps), clamped to 2pi.
double markov_beamwidth(double mmse, double eps);

/// Slack used when comparing accumulated mass against 1 - eps.
inline constexpr double kMassTolerance = 1e-12;

/// Text dump: "N=<n>" header, then one probability per line. Reading keeps
/// the values bit for bit when they already sum to 1 within 1e-9.
void write_posterior(std::ostream& os, const Posterior& post);
Posterior read_posterior(std::istream& is);

}  // namespace beamalign
