// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <numbers>
#include <vector>

namespace beamalign {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

inline constexpr double to_degrees(double rad) { return rad * 180.0 / kPi; }
inline constexpr double to_radians(double deg) { return deg * kPi / 180.0; }

/// Canonical representative of `x` on the half-open circle (0, 2pi].
/// Throws std::domain_error for non-finite input.
double wrap(double x);

/// Representative of `x` on (-pi, pi].
double wrap_pi(double x);

/// Shortest distance between two angles along the circle, in [0, pi].
double circ_dist(double a, double b);

/// A contiguous arc (start, start + length] on the circle. Wrapping past 2pi
/// is allowed.
struct Beam {
    double start = kTwoPi;
    double length = kTwoPi;

    /// Validates and canonicalizes. Throws std::invalid_argument when the
    /// length is outside (0, 2pi] or the start is not finite.
    static Beam make(double start, double length);

    double center() const;
    bool operator==(const Beam&) const = default;
};

bool beam_contains(const Beam& beam, double psi);

/// Uniform partition of (0, 2pi] into N bins. Bin k (0-based) covers
/// (k w, (k+1) w] with w = 2pi/N.
class AngularGrid {
public:
    explicit AngularGrid(std::size_t n_bins);

    std::size_t size() const noexcept { return n_; }
    double bin_width() const noexcept { return width_; }
    double center(std::size_t k) const noexcept { return (static_cast<double>(k) + 0.5) * width_; }
    const std::vector<double>& centers() const noexcept { return centers_; }

    /// Index of the bin holding `psi` (any finite angle).
    std::size_t bin_of(double psi) const;

    /// Beam covering `count` whole bins starting at bin `first` (wrapping).
    Beam span_beam(std::size_t first, std::size_t count) const;

private:
    std::size_t n_;
    double width_;
    std::vector<double> centers_;
};

/// 1 for every bin whose center lies in `beam`, else 0.
std::vector<std::uint8_t> bin_membership(const AngularGrid& grid, const Beam& beam);

}  // namespace beamalign
