// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <complex>
#include <limits>
#include <sstream>

#include "beamalign/belief.hpp"
#include "beamalign/errors.hpp"
#include "beamalign/rng.hpp"

using namespace beamalign;

namespace {

double total(const Posterior& p)
{
    double s = 0.0;
    for (double v : p.probs()) {
        s += v;
    }
    return s;
}

Posterior random_posterior(std::size_t n, Rng& rng, double zero_frac = 0.0)
{
    std::vector<double> w(n);
    for (auto& v : w) {
        v = rng.uniform() < zero_frac ? 0.0 : rng.uniform() * rng.uniform();
    }
    w[rng.index(n)] += 0.1;
    return Posterior::from_weights(std::move(w));
}

// Direct Bayes with the complex Gaussian density, no log domain.
std::vector<double> brute_bayes(const Posterior& post, const Beam& beam, const Measurement& y,
                                const ChannelParams& ch)
{
    const AngularGrid g = post.grid();
    std::vector<double> out(post.size());
    double z = 0.0;
    for (std::size_t k = 0; k < post.size(); ++k) {
        const double mu = ch.h * std::sqrt(ch.p * beam_gain(beam, g.center(k)));
        const std::complex<double> r(y.re - mu, y.im);
        out[k] = post[k] * std::exp(-std::norm(r) / ch.sigma2) / (kPi * ch.sigma2);
        z += out[k];
    }
    for (auto& v : out) {
        v /= z;
    }
    return out;
}

// Exhaustive O(N^2) search for the shortest whole-bin arc with enough mass.
std::size_t brute_credible_bins(const Posterior& p, double eps)
{
    const std::size_t n = p.size();
    for (std::size_t len = 1; len <= n; ++len) {
        for (std::size_t s = 0; s < n; ++s) {
            double m = 0.0;
            for (std::size_t j = 0; j < len; ++j) {
                m += p[(s + j) % n];
            }
            if (m >= 1.0 - eps - 1e-12) {
                return len;
            }
        }
    }
    return n;
}

}  // namespace

TEST_CASE("posterior construction")
{
    const Posterior p = Posterior::from_weights({1.0, 3.0});
    CHECK(p[0] == doctest::Approx(0.25));
    CHECK(p[1] == doctest::Approx(0.75));
    CHECK_THROWS_AS(Posterior::from_weights({0.0, 0.0}), std::invalid_argument);
    CHECK_THROWS_AS(Posterior::from_weights({1.0, -0.1}), std::invalid_argument);
    CHECK_THROWS_AS(Posterior::from_weights({1.0, std::nan("")}), std::invalid_argument);
    CHECK_THROWS_AS(Posterior::from_weights({}), std::invalid_argument);
    const Posterior d = Posterior::delta(5, 3);
    CHECK(d[3] == 1.0);
    CHECK(total(d) == 1.0);
}

TEST_CASE("make_prior examples")
{
    const AngularGrid g360(360);
    const Posterior u = make_prior(PriorSpec::uniform(), g360);
    for (double v : u.probs()) {
        CHECK(v == doctest::Approx(1.0 / 360));
    }

    const Posterior m = make_prior(PriorSpec::default_mixture(), g360);
    int inner = 0;
    int outer = 0;
    for (std::size_t k = 0; k < 360; ++k) {
        if (std::fabs(m[k] - 0.015) < 1e-12) {
            ++inner;
            CHECK(beam_contains(Beam::make(5 * kPi / 6, kPi / 3), g360.center(k)));
        } else if (std::fabs(m[k] - 0.1 / 300) < 1e-12) {
            ++outer;
        }
    }
    CHECK(inner == 60);
    CHECK(outer == 300);
    CHECK(total(m) == doctest::Approx(1.0).epsilon(1e-12));

    const Posterior c = make_prior(PriorSpec::custom({0.5, 0.5, 0.0, 0.0}), AngularGrid(4));
    CHECK(c[0] == 0.5);
    CHECK(c[1] == 0.5);
    CHECK(c[2] == 0.0);
    CHECK(c[3] == 0.0);
}

TEST_CASE("make_prior rejects unusable specs")
{
    const AngularGrid g(8);
    // Arc narrower than a bin and away from every center.
    CHECK_THROWS_AS(make_prior(PriorSpec::mixture(Beam::make(0.0, 0.1), 0.5), g), std::invalid_argument);
    CHECK_THROWS_AS(make_prior(PriorSpec::mixture(Beam::make(0.0, kTwoPi), 0.5), g), std::invalid_argument);
    CHECK_THROWS_AS(make_prior(PriorSpec::custom({1.0, 1.0}), g), std::invalid_argument);
    CHECK_THROWS_AS(PriorSpec::mixture(Beam::make(1.0, 1.0), 1.5), std::invalid_argument);
}

TEST_CASE("sample_angle follows the discretized prior")
{
    const AngularGrid g(16);
    const Posterior prior = make_prior(PriorSpec::mixture(g.span_beam(2, 4), 0.8), g);
    Rng rng(77);
    std::vector<int> counts(16, 0);
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double psi = sample_angle(prior, rng);
        CHECK(psi > 0.0);
        CHECK(psi <= kTwoPi);
        ++counts[g.bin_of(psi)];
    }
    for (std::size_t k = 0; k < 16; ++k) {
        const double sd = std::sqrt(prior[k] * (1 - prior[k]) / n);
        CHECK(std::fabs(counts[k] / double(n) - prior[k]) < 5 * sd);
    }
}

TEST_CASE("bayes_update examples")
{
    const ChannelParams ch{1.0, 1.0, 0.01};
    const AngularGrid g(4);
    const Beam b12 = g.span_beam(1, 2);

    Rng rng(3);
    const Posterior p = random_posterior(4, rng);
    const Posterior same = bayes_update(p, Beam::make(0.7, kTwoPi), {0.3, -0.2}, ch);
    for (std::size_t k = 0; k < 4; ++k) {
        CHECK(same[k] == doctest::Approx(p[k]).epsilon(1e-14));
    }

    const Posterior sharp = bayes_update(Posterior::uniform(4), b12, {std::sqrt(2.0), 0.0}, ch);
    CHECK(sharp[1] + sharp[2] > 0.999);
    CHECK(beam_gain(b12, g.center(1)) == doctest::Approx(2.0));

    const Posterior pinned = bayes_update(Posterior::from_weights({0, 1, 0, 0}), b12, {5.0, 1.0}, ch);
    CHECK(pinned[0] == 0.0);
    CHECK(pinned[1] == 1.0);
    CHECK(pinned[2] == 0.0);
    CHECK(pinned[3] == 0.0);
}

TEST_CASE("bayes_update matches brute-force Bayes")
{
    Rng rng(2024);
    for (int t = 0; t < 2000; ++t) {
        const std::size_t n = 2 + rng.index(15);
        const Posterior p = random_posterior(n, rng, 0.2);
        const ChannelParams ch = ChannelParams::from_raw_snr_db(rng.uniform(-5.0, 15.0));
        const Beam beam = Beam::make(rng.uniform(0.0, kTwoPi), rng.uniform(0.1, kTwoPi));
        const Measurement y{rng.normal() * 1.5, rng.normal()};
        const Posterior got = bayes_update(p, beam, y, ch);
        const std::vector<double> want = brute_bayes(p, beam, y, ch);
        for (std::size_t k = 0; k < n; ++k) {
            CHECK(std::fabs(got[k] - want[k]) <= 1e-12);
        }
        CHECK(std::fabs(total(got) - 1.0) <= 1e-9);
    }
}

TEST_CASE("bayes_update survives high SNR")
{
    const ChannelParams ch = ChannelParams::from_raw_snr_db(60.0);
    const AngularGrid g(64);
    const Posterior p = bayes_update(Posterior::uniform(64), g.span_beam(0, 8), {std::sqrt(8.0), 0.0}, ch);
    for (double v : p.probs()) {
        CHECK(std::isfinite(v));
    }
    CHECK(p.mass(g.span_beam(0, 8)) == doctest::Approx(1.0));
}

TEST_CASE("bayes_update is order independent")
{
    Rng rng(5);
    for (int t = 0; t < 300; ++t) {
        const std::size_t n = 3 + rng.index(30);
        const Posterior p = random_posterior(n, rng);
        const ChannelParams ch = ChannelParams::from_raw_snr_db(rng.uniform(-3.0, 10.0));
        const Beam beam = Beam::make(rng.uniform(0.0, kTwoPi), rng.uniform(0.2, 5.0));
        const Measurement y1{rng.normal(), rng.normal()};
        const Measurement y2{rng.normal() + 1, rng.normal()};
        const Posterior a = bayes_update(bayes_update(p, beam, y1, ch), beam, y2, ch);
        const Posterior b = bayes_update(bayes_update(p, beam, y2, ch), beam, y1, ch);
        for (std::size_t k = 0; k < n; ++k) {
            CHECK(std::fabs(a[k] - b[k]) <= 1e-12);
        }
    }
}

TEST_CASE("noiseless_update examples")
{
    const AngularGrid g(4);
    const Beam b12 = g.span_beam(1, 2);
    const Posterior in = noiseless_update(Posterior::uniform(4), b12, true);
    CHECK(in[0] == 0.0);
    CHECK(in[1] == 0.5);
    CHECK(in[2] == 0.5);
    CHECK(in[3] == 0.0);
    const Posterior out = noiseless_update(Posterior::uniform(4), b12, false);
    CHECK(out[0] == 0.5);
    CHECK(out[1] == 0.0);
    CHECK(out[2] == 0.0);
    CHECK(out[3] == 0.5);

    // Masses (0.6, 0.2, 0.1, 0.1) conditioned on missing the bin with 0.6.
    const Posterior q = noiseless_update(Posterior::from_weights({0.6, 0.2, 0.1, 0.1}), g.span_beam(0, 1), false);
    CHECK(q[0] == 0.0);
    CHECK(q[1] == doctest::Approx(0.5));
    CHECK(q[2] == doctest::Approx(0.25));
    CHECK(q[3] == doctest::Approx(0.25));

    CHECK_THROWS_AS(noiseless_update(Posterior::delta(4, 0), b12, true), InconsistentEvidence);
    CHECK_THROWS_AS(noiseless_update(Posterior::uniform(4), Beam::make(0.0, kTwoPi), false),
                    InconsistentEvidence);
}

TEST_CASE("repeated noiseless halving leaves a uniform arc")
{
    const std::size_t n = 360;
    const AngularGrid g(n);
    Posterior p = Posterior::uniform(n);
    std::size_t first = 0;
    std::size_t count = n;
    for (int b = 1; b <= 3; ++b) {
        const Beam lower = g.span_beam(first, count / 2);
        p = noiseless_update(p, lower, true);
        count /= 2;
        std::size_t support = 0;
        for (double v : p.probs()) {
            if (v > 0) {
                ++support;
                CHECK(v == doctest::Approx(1.0 / count));
            }
        }
        CHECK(support == count);
        CHECK(count * g.bin_width() == doctest::Approx(kTwoPi / std::pow(2.0, b)));
    }
}

TEST_CASE("circular mean examples")
{
    const AngularGrid g(12);
    CHECK(posterior_mean(Posterior::delta(12, 5)) == doctest::Approx(g.center(5)));
    CHECK(posterior_mean(Posterior::delta(12, 11)) == doctest::Approx(g.center(11)));

    // Equal masses at pi/2 and 3pi/2 on N=4? Those are not centers, so use
    // opposite bins, which cancel in the same way.
    CHECK_THROWS_AS(posterior_mean(Posterior::from_weights({0.5, 0, 0.5, 0})), UndefinedMean);

    // 0.75 at pi/4 and 0.25 at 3pi/4: the reference pair (pi/2, pi) rotated
    // by -pi/4.
    const Posterior r = Posterior::from_weights({0.75, 0.25, 0, 0});
    const std::complex<double> z = 0.75 * std::polar(1.0, kPi / 2) + 0.25 * std::polar(1.0, kPi);
    CHECK(std::arg(z) == doctest::Approx(1.8925).epsilon(1e-4));
    CHECK(posterior_mean(r) == doctest::Approx(std::arg(z) - kPi / 4).epsilon(1e-12));
}

TEST_CASE("circular mean stays on the half-open circle near the seam")
{
    const Posterior p = Posterior::from_weights({0.5, 0, 0, 0, 0, 0, 0, 0.5});
    CHECK(posterior_mean(p) == doctest::Approx(kTwoPi));
    CHECK(posterior_mean(p) <= kTwoPi);
    CHECK(posterior_mean(p) > 0.0);
    CHECK(posterior_mean(p, MomentMode::linear) == doctest::Approx(kPi));
}

TEST_CASE("cam examples")
{
    for (int n = 1; n <= 4; ++n) {
        CHECK(cam(Posterior::delta(16, 9), n) == doctest::Approx(0.0).epsilon(1e-12));
    }
    const Posterior half = Posterior::from_weights({0.5, 0.5, 0, 0});
    CHECK(cam(half, 1) == doctest::Approx(kPi / 4));

    // Uniform over m whole bins of an arc L = m w: the discrete moments
    // converge to L/4 and L^2/12.
    const std::size_t n = 3600;
    const AngularGrid g(n);
    const std::size_t m = 900;
    const double L = m * g.bin_width();
    std::vector<double> w(n, 0.0);
    for (std::size_t k = 100; k < 100 + m; ++k) {
        w[k] = 1.0;
    }
    const Posterior arc = Posterior::from_weights(w);
    CHECK(cam(arc, 1) == doctest::Approx(L / 4).epsilon(1e-12));
    const double w2 = g.bin_width() * g.bin_width();
    CHECK(cam(arc, 2) == doctest::Approx((m * m - 1.0) * w2 / 12).epsilon(1e-10));
    CHECK(cam(arc, 2) == doctest::Approx(L * L / 12).epsilon(1e-5));

    CHECK_THROWS_AS(cam(Posterior::from_weights({0.5, 0, 0.5, 0}), 1), UndefinedMean);
    CHECK_THROWS_AS(cam(half, 0), std::invalid_argument);
}

TEST_CASE("cam does not grow when conditioning on a sub-arc around the mean")
{
    Rng rng(31);
    const std::size_t n = 72;
    const AngularGrid g(n);
    for (int t = 0; t < 200; ++t) {
        const std::size_t first = rng.index(n);
        const std::size_t width = 10 + rng.index(20);
        std::vector<double> w(n, 0.0);
        for (std::size_t j = 0; j < width; ++j) {
            w[(first + j) % n] = 0.2 + rng.uniform();
        }
        const Posterior p = Posterior::from_weights(w);
        const std::size_t mid = g.bin_of(posterior_mean(p));
        const std::size_t half = 1 + rng.index(4);
        const Beam sub = g.span_beam((mid + n - half) % n, 2 * half + 1);
        const Posterior q = noiseless_update(p, sub, true);
        for (int order = 1; order <= 3; ++order) {
            CHECK(cam(q, order) <= cam(p, order) + 1e-12);
        }
    }
}

TEST_CASE("sq_err examples")
{
    const AngularGrid g(8);
    CHECK(sq_err(Posterior::delta(8, 2), g.center(2)) == doctest::Approx(0.0));

    // Mean pi: bins 3 and 4 of N=8 straddle it symmetrically.
    const Posterior at_pi = Posterior::from_weights({0, 0, 0, 0.5, 0.5, 0, 0, 0});
    CHECK(posterior_mean(at_pi) == doctest::Approx(kPi));
    CHECK(sq_err(at_pi, kPi + 0.1) == doctest::Approx(0.01));

    // Wrap case: mean at the center of bin 0 and psi just below 2pi.
    const AngularGrid g63(63);
    const double c0 = g63.center(0);
    const double e = sq_err(Posterior::delta(63, 0), kTwoPi - 0.05);
    CHECK(e == doctest::Approx((c0 + 0.05) * (c0 + 0.05)));
    CHECK(sq_err(Posterior::delta(63, 0), kTwoPi - 0.05, MomentMode::linear) ==
          doctest::Approx((kTwoPi - 0.05 - c0) * (kTwoPi - 0.05 - c0)));
}

TEST_CASE("shortest credible beam examples")
{
    const CredibleBeam d = shortest_credible_beam(Posterior::delta(16, 7), 0.1);
    CHECK(d.n_bins == 1);
    CHECK(d.first_bin == 7);
    CHECK(d.beam.length == doctest::Approx(kTwoPi / 16));
    CHECK(beam_contains(d.beam, AngularGrid(16).center(7)));

    const CredibleBeam u = shortest_credible_beam(Posterior::uniform(360), 0.1);
    CHECK(u.n_bins == 324);
    CHECK(u.first_bin == 0);
    CHECK(u.beam.length == doctest::Approx(0.9 * kTwoPi));
    CHECK(u.mass >= 0.9 - 1e-12);
}

TEST_CASE("shortest credible beam matches exhaustive search")
{
    Rng rng(1000);
    for (int seed = 0; seed < 1000; ++seed) {
        Rng r = Rng::stream(seed, 16);
        const Posterior p = random_posterior(16, r, 0.3);
        const double eps = r.uniform(0.01, 0.5);
        const CredibleBeam cb = shortest_credible_beam(p, eps);
        CHECK(cb.n_bins == brute_credible_bins(p, eps));
        CHECK(cb.mass >= 1.0 - eps - 1e-12);
        CHECK(p.mass(cb.beam) == doctest::Approx(cb.mass).epsilon(1e-12));
        // Ties: no earlier start bin reaches the mass with the same width.
        for (std::size_t s = 0; s < cb.first_bin; ++s) {
            double m = 0.0;
            for (std::size_t j = 0; j < cb.n_bins; ++j) {
                m += p[(s + j) % 16];
            }
            CHECK(m < 1.0 - eps - 1e-12);
        }
    }
}

TEST_CASE("markov beamwidth")
{
    CHECK(markov_beamwidth(0.0, 0.1) == 0.0);
    CHECK(markov_beamwidth(0.0129, 0.1) == doctest::Approx(std::sqrt(0.516)));
    CHECK(to_degrees(markov_beamwidth(0.0129, 0.1)) == doctest::Approx(41.16).epsilon(1e-3));
    CHECK(markov_beamwidth(kPi * kPi, 0.1) == kTwoPi);
}

TEST_CASE("posterior text round trip")
{
    Rng rng(4);
    const Posterior p = random_posterior(37, rng);
    std::stringstream ss;
    write_posterior(ss, p);
    CHECK(ss.str().rfind("N=37\n", 0) == 0);
    const Posterior q = read_posterior(ss);
    for (std::size_t k = 0; k < 37; ++k) {
        CHECK(q[k] == p[k]);
    }
    std::istringstream bad("N=3\n0.5\n0.5\n");
    CHECK_THROWS(read_posterior(bad));
}
