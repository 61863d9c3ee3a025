// SPDX-License-Identifier: Apache-2.0
#include "beamalign/channel.hpp"

#include <cmath>
#include <stdexcept>

#include "beamalign/errors.hpp"

namespace beamalign {

namespace {

double logistic(double x)
{
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

ChannelParams ChannelParams::from_raw_snr_db(double db, double h, double p)
{
    ChannelParams ch{h, p, h * h * p / std::pow(10.0, db / 10.0)};
    ch.validate();
    return ch;
}

void ChannelParams::validate() const
{
    if (!(h >= 0.0) || !std::isfinite(h)) {
        throw std::invalid_argument("channel gain h must be finite and >= 0");
    }
    if (!(p > 0.0) || !std::isfinite(p)) {
        throw std::invalid_argument("transmit power p must be finite and > 0");
    }
    if (!(sigma2 >= 0.0) || !std::isfinite(sigma2)) {
        throw std::invalid_argument("noise variance sigma2 must be finite and >= 0");
    }
}

double ChannelParams::raw_snr_linear() const
{
    if (sigma2 <= 0.0) {
        throw NoiselessRegime("raw SNR is unbounded for sigma2 = 0");
    }
    return h * h * p / sigma2;
}

double beam_gain(const Beam& beam, double psi)
{
    return beam_contains(beam, psi) ? kTwoPi / beam.length : 0.0;
}

double soft_beam_gain(const Beam& beam, double psi, double tau)
{
    if (!(tau > 0.0)) {
        throw std::invalid_argument("soft gain temperature must be > 0");
    }
    const double d = circ_dist(psi, beam.center());
    return kTwoPi / beam.length * logistic((0.5 * beam.length - d) / tau);
}

Measurement sample_measurement(double psi, const Beam& beam, const ChannelParams& ch, Rng& rng)
{
    const double mean = ch.h * std::sqrt(ch.p * beam_gain(beam, psi));
    const double sd = std::sqrt(0.5 * ch.sigma2);
    // Both draws are taken even when sigma2 == 0 so the stream position does
    // not depend on the channel.
    const double n_re = rng.normal();
    const double n_im = rng.normal();
    return Measurement{mean + sd * n_re, sd * n_im};
}

double raw_snr_db(const ChannelParams& ch)
{
    return 10.0 * std::log10(ch.raw_snr_linear());
}

double loglik(const Measurement& y, double psi, const Beam& beam, const ChannelParams& ch,
              GainModel model, double tau)
{
    if (ch.sigma2 <= 0.0) {
        throw NoiselessRegime("likelihood is degenerate for sigma2 = 0; use noiseless_update");
    }
    const double g = model == GainModel::hard ? beam_gain(beam, psi) : soft_beam_gain(beam, psi, tau);
    const double mu = ch.h * std::sqrt(ch.p * g);
    const double dr = y.re - mu;
    return -(dr * dr + y.im * y.im) / ch.sigma2;
}

}  // namespace beamalign
