// SPDX-License-Identifier: Apache-2.0
#include "beamalign/angular.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace beamalign {

double wrap(double x)
{
    if (!std::isfinite(x)) {
        throw std::domain_error("wrap: non-finite angle");
    }
    double r = std::fmod(x, kTwoPi);
    if (r <= 0.0) {
        r += kTwoPi;
    }
    // fmod of a tiny negative value can round up to exactly 2pi + r.
    if (r > kTwoPi) {
        r = kTwoPi;
    }
    return r;
}

double wrap_pi(double x)
{
    double r = wrap(x + kPi) - kPi;
    return r;
}

double circ_dist(double a, double b)
{
    const double d = std::fabs(std::fmod(a - b, kTwoPi));
    return d > kPi ? kTwoPi - d : d;
}

Beam Beam::make(double start, double length)
{
    if (!std::isfinite(length) || length <= 0.0 || length > kTwoPi) {
        throw std::invalid_argument("beam length must lie in (0, 2pi], got " + std::to_string(length));
    }
    return Beam{wrap(start), length};
}

double Beam::center() const
{
    return wrap(start + 0.5 * length);
}

bool beam_contains(const Beam& beam, double psi)
{
    if (beam.length >= kTwoPi) {
        return true;
    }
    const double offset = wrap(psi - beam.start);
    return offset <= beam.length;
}

AngularGrid::AngularGrid(std::size_t n_bins)
    : n_(n_bins), width_(0.0)
{
    if (n_bins == 0) {
        throw std::invalid_argument("angular grid needs at least one bin");
    }
    width_ = kTwoPi / static_cast<double>(n_bins);
    centers_.resize(n_);
    for (std::size_t k = 0; k < n_; ++k) {
        centers_[k] = center(k);
    }
}

std::size_t AngularGrid::bin_of(double psi) const
{
    // Bin k covers (k w, (k+1) w], so ceil(psi / w) - 1.
    const double w = wrap(psi);
    auto k = static_cast<std::size_t>(std::ceil(w / width_));
    if (k == 0) {
        k = 1;
    }
    if (k > n_) {
        k = n_;
    }
    return k - 1;
}

Beam AngularGrid::span_beam(std::size_t first, std::size_t count) const
{
    if (count == 0 || count > n_) {
        throw std::invalid_argument("span_beam: bin count out of range");
    }
    const double length = count == n_ ? kTwoPi : static_cast<double>(count) * width_;
    return Beam{wrap(static_cast<double>(first % n_) * width_), length};
}

std::vector<std::uint8_t> bin_membership(const AngularGrid& grid, const Beam& beam)
{
    std::vector<std::uint8_t> w(grid.size(), 0);
    for (std::size_t k = 0; k < grid.size(); ++k) {
        w[k] = beam_contains(beam, grid.center(k)) ? 1 : 0;
    }
    return w;
}

}  // namespace beamalign
