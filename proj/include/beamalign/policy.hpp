// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "beamalign/angular.hpp"
#include "beamalign/autodiff.hpp"
#include "beamalign/belief.hpp"

namespace beamalign {

/// Scan network: N -> 4N (ReLU) -> 2N (ReLU) -> 2 (logistic). The two outputs,
/// scaled by 2pi, are the probing beam's start and length. The same weights
/// are used in every slot.
///
/// Parameters live in one flat buffer, layer by layer: W1, b1, W2, b2, W3, b3,
/// each W row-major (out x in). Count: 12N^2 + 10N + 2.
class ScanPolicyNet {
public:
    /// All-zero weights and biases.
    explicit ScanPolicyNet(std::size_t n_bins, std::uint64_t seed = 0);

    /// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases 0.
    static ScanPolicyNet initialized(std::size_t n_bins, std::uint64_t seed);

    static std::size_t parameter_count(std::size_t n_bins);

    std::size_t n_bins() const noexcept { return n_; }
    std::uint64_t seed() const noexcept { return seed_; }
    std::span<const double> parameters() const noexcept { return params_; }
    std::span<double> parameters() noexcept { return params_; }

    /// Raw logistic outputs (o1, o2) for a probability vector of length N.
    std::array<double, 2> forward(std::span<const double> probs) const;

    /// Views of the six parameter blocks on a tape. `grad_sink` is either
    /// empty (no gradients) or as long as parameters().
    struct Bound {
        ad::Value w1, b1, w2, b2, w3, b3;
    };
    Bound bind(ad::Tape& tape, std::span<double> grad_sink) const;

    /// Differentiable forward pass of a bound network.
    static ad::Value forward(const Bound& net, const ad::Value& probs);

    /// Checkpoint I/O. read() verifies the trailing digest.
    void write(std::ostream& os) const;
    static ScanPolicyNet read(std::istream& is);
    void save(const std::filesystem::path& path) const;
    static ScanPolicyNet load(const std::filesystem::path& path);

    bool operator==(const ScanPolicyNet&) const = default;

private:
    struct Block {
        std::size_t offset;
        std::size_t rows;
        std::size_t cols;
    };
    std::array<Block, 6> blocks() const;

    std::size_t n_;
    std::uint64_t seed_;
    std::vector<double> params_;
};

/// Maps logistic outputs to a beam: start = wrap(2pi o1), length =
/// clamp(2pi o2, 2pi/N, 2pi).
Beam beam_from_outputs(double o1, double o2, std::size_t n_bins);

Beam neural_scan(const ScanPolicyNet& net, const Posterior& post);

/// Bins with probability at or below this count as outside the support.
inline constexpr double kSupportFloor = 1e-12;

/// Posterior-median split: starts at the first bin of the shortest arc
/// covering the support and takes as many whole bins as bring the covered
/// mass closest to 1/2 (fewer bins on ties).
Beam bisection_scan(const Posterior& post);

/// Dyadic codebook beam (depths 1..max_depth) whose mass is closest to 1/2;
/// ties go to the shorter beam, then the smaller start.
Beam hpm_scan(const Posterior& post, int max_depth = 9);

/// A probing strategy selectable at run time.
class Policy {
public:
    struct Bisection {};
    struct Hpm {
        int max_depth = 9;
    };
    struct Neural {
        std::shared_ptr<const ScanPolicyNet> net;
    };

    static Policy bisection() { return Policy(Bisection{}); }
    static Policy hpm(int max_depth = 9);
    static Policy neural(std::shared_ptr<const ScanPolicyNet> net);

    Beam scan(const Posterior& post) const;
    std::string name() const;
    const ScanPolicyNet* net() const;

private:
    using Kind = std::variant<Bisection, Hpm, Neural>;
    explicit Policy(Kind kind) : kind_(std::move(kind)) {}
    Kind kind_;
};

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::span<const unsigned char> bytes);

}  // namespace beamalign
