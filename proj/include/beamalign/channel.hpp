// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "beamalign/angular.hpp"
#include "beamalign/rng.hpp"

namespace beamalign {

/// Measurement-model constants. The pilot symbol is 1 and the beam phase is
/// rotated out, so the noiseless observation is the real number h sqrt(p G).
struct ChannelParams {
    double h = 1.0;       ///< channel amplitude
    double p = 1.0;       ///< transmit power (linear)
    double sigma2 = 1.0;  ///< complex noise variance

    /// h = p = 1 with sigma2 chosen so that h^2 p / sigma2 equals `db`.
    static ChannelParams from_raw_snr_db(double db, double h = 1.0, double p = 1.0);

    /// Throws std::invalid_argument on h < 0, p <= 0 or sigma2 < 0.
    void validate() const;
    double raw_snr_linear() const;
};

struct Measurement {
    double re = 0.0;
    double im = 0.0;
};

/// Sectored gain: 2pi/length inside the beam, 0 outside.
double beam_gain(const Beam& beam, double psi);

/// Logistic-smoothed sectored gain with edge temperature `tau`.
double soft_beam_gain(const Beam& beam, double psi, double tau);

/// y = h sqrt(p G(beam, psi)) + n, n ~ CN(0, sigma2).
Measurement sample_measurement(double psi, const Beam& beam, const ChannelParams& ch, Rng& rng);

/// 10 log10(h^2 p / sigma2). Throws NoiselessRegime for sigma2 == 0.
double raw_snr_db(const ChannelParams& ch);

enum class GainModel { hard, soft };

/// Log-likelihood of `y` for an AoA at `psi`, up to a constant shared by all
/// angles: -|y - mu|^2 / sigma2 with mu = h sqrt(p g).
double loglik(const Measurement& y, double psi, const Beam& beam, const ChannelParams& ch,
              GainModel model = GainModel::hard, double tau = 0.0);

}  // namespace beamalign
