// SPDX-License-Identifier: Apache-2.0
#include "beamalign/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <iomanip>
#include <limits>
#include <sstream>
#include <thread>

#include "beamalign/errors.hpp"

namespace beamalign {

std::string LossSpec::name() const
{
    return kind == Kind::mmse ? "mmse" : "cam" + std::to_string(order);
}

void TrainConfig::validate() const
{
    if (n_bins < 2) {
        throw ConfigError("n_bins", "must be >= 2");
    }
    if (slots < 0) {
        throw ConfigError("slots", "must be >= 0");
    }
    if (!(epsilon > 0.0 && epsilon < 1.0)) {
        throw ConfigError("epsilon", "must lie in (0, 1)");
    }
    if (raw_snr_db.empty()) {
        throw ConfigError("raw_snr_db", "needs at least one value");
    }
    for (double s : raw_snr_db) {
        if (!std::isfinite(s)) {
            throw ConfigError("raw_snr_db", "values must be finite");
        }
    }
    if (batch_size == 0) {
        throw ConfigError("batch_size", "must be >= 1");
    }
    if (!(learning_rate > 0.0)) {
        throw ConfigError("learning_rate", "must be > 0");
    }
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) {
        throw ConfigError("adam_beta1", "must lie in [0, 1)");
    }
    if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        throw ConfigError("adam_beta2", "must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) {
        throw ConfigError("adam_eps", "must be > 0");
    }
    if (!(grad_clip >= 0.0) || !std::isfinite(grad_clip)) {
        throw ConfigError("grad_clip", "must be >= 0 (0 disables clipping)");
    }
    if (!(tau >= 0.0) || !std::isfinite(tau)) {
        throw ConfigError("tau", "must be >= 0 (0 selects one bin width)");
    }
    if (loss.order < 1) {
        throw ConfigError("cam_order", "must be >= 1");
    }
    if (checkpoint_every == 0) {
        throw ConfigError("checkpoint_every", "must be >= 1");
    }
}

double TrainConfig::effective_tau() const
{
    return tau > 0.0 ? tau : kTwoPi / static_cast<double>(n_bins);
}

std::string EpisodeTrace::dump() const
{
    std::ostringstream os;
    os << std::setprecision(17);
    os << "psi_true " << psi_true << '\n';
    for (std::size_t i = 0; i < beams.size(); ++i) {
        os << "slot " << i + 1 << " beam_start " << beams[i].start << " beam_length " << beams[i].length;
        if (i < measurements.size()) {
            os << " y " << measurements[i].re << ' ' << measurements[i].im;
        }
        os << '\n';
    }
    for (std::size_t i = 0; i < posteriors.size(); ++i) {
        os << "posterior " << i << ' ';
        write_posterior(os, posteriors[i]);
    }
    os << "loss " << loss << '\n';
    return os.str();
}

namespace {

double eval_loss(const Posterior& post, double psi, const LossSpec& loss, MomentMode moments)
{
    try {
        return loss.kind == LossSpec::Kind::mmse ? sq_err(post, psi, moments) : cam(post, loss.order, moments);
    } catch (const UndefinedMean&) {
        return std::numeric_limits<double>::quiet_NaN();
    }
}

template <class F>
std::vector<double> map_values(const std::vector<double>& xs, F f)
{
    std::vector<double> out(xs.size());
    std::transform(xs.begin(), xs.end(), out.begin(), f);
    return out;
}

ad::Value posterior_mean(const ad::Value& probs, const AngularGrid& grid, MomentMode moments)
{
    if (moments == MomentMode::linear) {
        return ad::weighted_sum(grid.centers(), probs);
    }
    const ad::Value c = ad::weighted_sum(map_values(grid.centers(), [](double x) { return std::cos(x); }), probs);
    const ad::Value s = ad::weighted_sum(map_values(grid.centers(), [](double x) { return std::sin(x); }), probs);
    return ad::atan2(s, c);
}

}  // namespace

EpisodeTrace run_episode_eval(const Policy& policy, const Posterior& prior, double psi, const ChannelParams& ch,
                              int slots, Rng& rng, const LossSpec& loss, MomentMode moments)
{
    const AngularGrid grid = prior.grid();
    const double psi_eff = grid.center(grid.bin_of(psi));
    EpisodeTrace trace;
    trace.psi_true = psi;
    trace.posteriors.push_back(prior);
    for (int i = 0; i < slots; ++i) {
        const Posterior& cur = trace.posteriors.back();
        const Beam beam = policy.scan(cur);
        const Measurement y = sample_measurement(psi_eff, beam, ch, rng);
        trace.beams.push_back(beam);
        trace.measurements.push_back(y);
        if (ch.sigma2 > 0.0) {
            trace.posteriors.push_back(bayes_update(cur, beam, y, ch));
        } else {
            trace.posteriors.push_back(noiseless_update(cur, beam, beam_contains(beam, psi_eff)));
        }
    }
    trace.loss = eval_loss(trace.posteriors.back(), psi, loss, moments);
    return trace;
}

ad::Value loss_mmse(const ad::Value& probs, double psi, MomentMode moments)
{
    ad::Tape& tape = *probs.tape();
    const AngularGrid grid(probs.size());
    const ad::Value mean = posterior_mean(probs, grid, moments);
    ad::Value diff = ad::sub(tape.constant(psi), mean);
    if (moments == MomentMode::circular) {
        diff = ad::wrap_pi(diff);
    }
    return ad::square(diff);
}

ad::Value loss_cam(const ad::Value& probs, int n, MomentMode moments)
{
    ad::Tape& tape = *probs.tape();
    const AngularGrid grid(probs.size());
    const ad::Value mean = posterior_mean(probs, grid, moments);
    ad::Value dev = ad::sub(tape.constant(grid.centers()), mean);
    if (moments == MomentMode::circular) {
        dev = ad::wrap_pi(dev);
    }
    return ad::dot(probs, ad::abs_pow(dev, n));
}

ad::Value episode_loss(const ad::Value& probs, double psi, const LossSpec& loss, MomentMode moments)
{
    return loss.kind == LossSpec::Kind::mmse ? loss_mmse(probs, psi, moments) : loss_cam(probs, loss.order, moments);
}

TapeEpisode run_episode_train(ad::Tape& tape, const ScanPolicyNet::Bound& net, const Posterior& prior, double psi,
                              const ChannelParams& ch, int slots, double tau, Rng& rng, const LossSpec& loss,
                              MomentMode moments)
{
    if (!(ch.sigma2 > 0.0)) {
        throw NoiselessRegime("differentiable episodes need sigma2 > 0");
    }
    if (!(tau > 0.0)) {
        throw std::invalid_argument("soft gain temperature must be > 0");
    }
    const AngularGrid grid = prior.grid();
    const std::size_t n = grid.size();
    const double psi_eff = grid.center(grid.bin_of(psi));
    const double amp = ch.h * std::sqrt(ch.p);
    const double noise_sd = std::sqrt(0.5 * ch.sigma2);

    std::vector<double> log_prior(n);
    for (std::size_t k = 0; k < n; ++k) {
        log_prior[k] = prior[k] > 0.0 ? std::log(prior[k]) : -std::numeric_limits<double>::infinity();
    }
    ad::Value log_post = tape.constant(std::move(log_prior));
    ad::Value probs = tape.constant(std::vector<double>(prior.probs().begin(), prior.probs().end()));
    const ad::Value centers = tape.constant(grid.centers());
    const ad::Value psi_c = tape.constant(psi_eff);
    const ad::Value two_pi = tape.constant(kTwoPi);

    TapeEpisode ep;
    ep.trace.psi_true = psi;
    ep.trace.posteriors.push_back(prior);
    for (int i = 0; i < slots; ++i) {
        const ad::Value out = ScanPolicyNet::forward(net, probs);
        const ad::Value start = ad::element(out, 0) * kTwoPi;
        const ad::Value length = ad::clamp(ad::element(out, 1) * kTwoPi, grid.bin_width(), kTwoPi);
        const ad::Value half = length * 0.5;
        const ad::Value center = start + half;
        // Amplitude h sqrt(p G) = h sqrt(p) sqrt(2pi / length) sqrt(logistic(z)).
        const ad::Value level = ad::sqrt(two_pi / length) * amp;
        auto amplitude = [&](const ad::Value& angle) {
            const ad::Value dist = ad::abs(ad::wrap_pi(angle - center));
            return level * ad::sqrt_logistic((half - dist) * (1.0 / tau));
        };
        const ad::Value mu_bins = amplitude(centers);
        const ad::Value mu_true = amplitude(psi_c);

        const double n_re = rng.normal();
        const double n_im = rng.normal();
        const ad::Value y_re = mu_true + noise_sd * n_re;
        const double y_im = noise_sd * n_im;

        // -|y - mu_k|^2 / sigma2 without the bin-independent imaginary part.
        const ad::Value ll = ad::square(y_re - mu_bins) * (-1.0 / ch.sigma2);
        log_post = ad::log_softmax(log_post + ll);
        probs = ad::exp(log_post);

        ep.trace.beams.push_back(Beam{wrap(start.scalar()), length.scalar()});
        ep.trace.measurements.push_back(Measurement{y_re.scalar(), y_im});
        ep.trace.posteriors.push_back(Posterior::from_weights({probs.data().begin(), probs.data().end()}));
    }
    ep.loss = episode_loss(probs, psi, loss, moments);
    ep.trace.loss = ep.loss.scalar();
    return ep;
}

namespace {

// Batches are cut into a fixed number of chunks, each reduced serially, so the
// summation order never depends on how many threads run them.
constexpr std::size_t kChunks = 8;

struct ChunkResult {
    std::vector<double> grad;
    double loss_sum = 0.0;
    std::exception_ptr error;
};

double run_chunk(const TrainConfig& cfg, const ScanPolicyNet& net, const Posterior& prior, std::size_t step,
                 std::size_t first, std::size_t count, std::span<double> grad, double weight)
{
    double loss_sum = 0.0;
    const double tau = cfg.effective_tau();
    for (std::size_t e = first; e < first + count; ++e) {
        Rng rng = Rng::stream(cfg.seed, step, e);
        const double psi = sample_angle(prior, rng);
        const double snr =
            cfg.raw_snr_db.size() == 1 ? cfg.raw_snr_db.front() : cfg.raw_snr_db[rng.index(cfg.raw_snr_db.size())];
        const ChannelParams ch = ChannelParams::from_raw_snr_db(snr);
        ad::Tape tape;
        const auto bound = net.bind(tape, grad);
        TapeEpisode ep = run_episode_train(tape, bound, prior, psi, ch, cfg.slots, tau, rng, cfg.loss, cfg.moments);
        const double l = ep.loss.scalar();
        if (!std::isfinite(l)) {
            throw NumericError("non-finite loss at step " + std::to_string(step) + ", episode " + std::to_string(e),
                               ep.trace.dump());
        }
        tape.backward(ep.loss, weight);
        loss_sum += l;
    }
    return loss_sum;
}

}  // namespace

double batch_loss_and_grad(const TrainConfig& cfg, const ScanPolicyNet& net, const Posterior& prior,
                           std::size_t step, std::size_t first, std::size_t count, std::span<double> grad,
                           double weight)
{
    return run_chunk(cfg, net, prior, step, first, count, grad, weight);
}

TrainResult train(const TrainConfig& cfg, const CheckpointFn& on_checkpoint)
{
    cfg.validate();
    const AngularGrid grid(cfg.n_bins);
    const Posterior prior = make_prior(cfg.prior, grid);
    TrainResult result{ScanPolicyNet::initialized(cfg.n_bins, cfg.seed), {}};
    ScanPolicyNet& net = result.net;
    const std::size_t n_params = net.parameters().size();

    std::vector<double> m(n_params, 0.0);
    std::vector<double> v(n_params, 0.0);
    std::vector<double> grad(n_params, 0.0);
    const std::size_t n_chunks = std::min(kChunks, cfg.batch_size);
    std::vector<ChunkResult> chunks(n_chunks);
    for (auto& c : chunks) {
        c.grad.assign(n_params, 0.0);
    }
    const unsigned n_threads = std::max(1U, std::min<unsigned>(cfg.threads, static_cast<unsigned>(n_chunks)));
    const double weight = 1.0 / static_cast<double>(cfg.batch_size);
    const auto t0 = std::chrono::steady_clock::now();

    double beta1_pow = 1.0;
    double beta2_pow = 1.0;
    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        auto work = [&](unsigned worker) {
            for (std::size_t c = worker; c < n_chunks; c += n_threads) {
                ChunkResult& cr = chunks[c];
                std::fill(cr.grad.begin(), cr.grad.end(), 0.0);
                cr.error = nullptr;
                const std::size_t first = c * cfg.batch_size / n_chunks;
                const std::size_t last = (c + 1) * cfg.batch_size / n_chunks;
                try {
                    cr.loss_sum = run_chunk(cfg, net, prior, step, first, last - first, cr.grad, weight);
                } catch (...) {
                    cr.error = std::current_exception();
                }
            }
        };
        if (n_threads == 1) {
            work(0);
        } else {
            std::vector<std::thread> pool;
            for (unsigned t = 0; t < n_threads; ++t) {
                pool.emplace_back(work, t);
            }
            for (auto& th : pool) {
                th.join();
            }
        }

        double loss_sum = 0.0;
        std::fill(grad.begin(), grad.end(), 0.0);
        for (const ChunkResult& cr : chunks) {
            if (cr.error) {
                std::rethrow_exception(cr.error);
            }
            loss_sum += cr.loss_sum;
            for (std::size_t i = 0; i < n_params; ++i) {
                grad[i] += cr.grad[i];
            }
        }
        double sq = 0.0;
        for (double g : grad) {
            sq += g * g;
        }
        const double grad_norm = std::sqrt(sq);
        if (!std::isfinite(grad_norm)) {
            throw NumericError("non-finite gradient at step " + std::to_string(step), "");
        }

        if (cfg.grad_clip > 0.0 && grad_norm > cfg.grad_clip) {
            const double shrink = cfg.grad_clip / grad_norm;
            for (double& g : grad) {
                g *= shrink;
            }
        }

        beta1_pow *= cfg.adam_beta1;
        beta2_pow *= cfg.adam_beta2;
        const double lr_t = cfg.learning_rate * std::sqrt(1.0 - beta2_pow) / (1.0 - beta1_pow);
        auto params = net.parameters();
        for (std::size_t i = 0; i < n_params; ++i) {
            m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * grad[i];
            v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * grad[i] * grad[i];
            params[i] -= lr_t * m[i] / (std::sqrt(v[i]) + cfg.adam_eps);
        }

        const double wall =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        result.log.push_back(TrainLogRow{step, loss_sum * weight, grad_norm, wall});
        if (on_checkpoint && step % cfg.checkpoint_every == 0 && step != cfg.steps) {
            on_checkpoint(step, net);
        }
    }
    if (on_checkpoint) {
        on_checkpoint(cfg.steps, net);
    }
    return result;
}

long double reference_episode_loss(std::span<const long double> params, const Posterior& prior, double psi,
                                   const ChannelParams& ch, int slots, double tau, Rng rng, const LossSpec& loss,
                                   MomentMode moments)
{
    using Real = long double;
    const std::size_t n = prior.size();
    if (params.size() != ScanPolicyNet::parameter_count(n)) {
        throw std::invalid_argument("reference loss: parameter count does not match the grid");
    }
    const AngularGrid grid = prior.grid();
    const Real pi = kPi;
    const Real two_pi = kTwoPi;
    auto wrap_pi = [&](Real v) {
        Real r = std::fmod(v + pi, two_pi);
        if (r <= 0) {
            r += two_pi;
        }
        return r - pi;
    };
    auto sqrt_logistic = [](Real v) {
        return v >= 0 ? 1 / std::sqrt(1 + std::exp(-v)) : std::exp(v / 2) / std::sqrt(1 + std::exp(v));
    };

    std::size_t off = 0;
    auto layer = [&](const std::vector<Real>& in, std::size_t out, bool relu) {
        std::vector<Real> y(out);
        const std::size_t b_off = off + out * in.size();
        for (std::size_t r = 0; r < out; ++r) {
            Real z = params[b_off + r];
            for (std::size_t c = 0; c < in.size(); ++c) {
                z += params[off + r * in.size() + c] * in[c];
            }
            y[r] = relu ? std::max<Real>(z, 0) : 1 / (1 + std::exp(-z));
        }
        off = b_off + out;
        return y;
    };

    const Real psi_eff = grid.center(grid.bin_of(psi));
    const Real amp = static_cast<Real>(ch.h) * std::sqrt(static_cast<Real>(ch.p));
    const Real sigma2 = ch.sigma2;
    const Real noise_sd = std::sqrt(sigma2 / 2);
    std::vector<Real> probs(prior.probs().begin(), prior.probs().end());
    std::vector<Real> log_post(n);
    for (std::size_t k = 0; k < n; ++k) {
        log_post[k] = probs[k] > 0 ? std::log(probs[k]) : -std::numeric_limits<Real>::infinity();
    }

    for (int i = 0; i < slots; ++i) {
        off = 0;
        const std::vector<Real> h1 = layer(probs, 4 * n, true);
        const std::vector<Real> h2 = layer(h1, 2 * n, true);
        const std::vector<Real> o = layer(h2, 2, false);
        const Real start = o[0] * two_pi;
        const Real length = std::clamp<Real>(o[1] * two_pi, grid.bin_width(), two_pi);
        const Real half = length / 2;
        const Real center = start + half;
        const Real level = std::sqrt(two_pi / length) * amp;
        auto amplitude = [&](Real angle) {
            return level * sqrt_logistic((half - std::fabs(wrap_pi(angle - center))) / tau);
        };
        const Real y_re = amplitude(psi_eff) + noise_sd * static_cast<Real>(rng.normal());
        rng.normal();  // imaginary part: bin-independent, drops out of the update

        Real top = -std::numeric_limits<Real>::infinity();
        for (std::size_t k = 0; k < n; ++k) {
            const Real d = y_re - amplitude(grid.center(k));
            log_post[k] -= d * d / sigma2;
            top = std::max(top, log_post[k]);
        }
        Real z = 0;
        for (std::size_t k = 0; k < n; ++k) {
            z += std::exp(log_post[k] - top);
        }
        const Real lse = top + std::log(z);
        for (std::size_t k = 0; k < n; ++k) {
            log_post[k] -= lse;
            probs[k] = std::exp(log_post[k]);
        }
    }

    Real mean = 0;
    if (moments == MomentMode::linear) {
        for (std::size_t k = 0; k < n; ++k) {
            mean += probs[k] * grid.center(k);
        }
    } else {
        Real s = 0;
        Real c = 0;
        for (std::size_t k = 0; k < n; ++k) {
            s += probs[k] * std::sin(static_cast<Real>(grid.center(k)));
            c += probs[k] * std::cos(static_cast<Real>(grid.center(k)));
        }
        mean = std::atan2(s, c);
    }
    auto deviation = [&](Real a) { return moments == MomentMode::circular ? wrap_pi(a - mean) : a - mean; };
    if (loss.kind == LossSpec::Kind::mmse) {
        const Real d = deviation(psi);
        return d * d;
    }
    Real acc = 0;
    for (std::size_t k = 0; k < n; ++k) {
        acc += probs[k] * std::pow(std::fabs(deviation(grid.center(k))), loss.order);
    }
    return acc;
}

GradcheckReport gradcheck(std::uint64_t seed, std::size_t n_bins, int slots, const GradcheckOptions& opt)
{
    ScanPolicyNet net = ScanPolicyNet::initialized(n_bins, seed);
    // Nonzero biases so every parameter block is exercised away from its
    // initial symmetric point.
    {
        Rng rng = Rng::stream(seed, 0xb1a5);
        auto p = net.parameters();
        const std::size_t n = n_bins;
        const std::size_t b1 = 4 * n * n;
        const std::size_t b2 = b1 + 4 * n + 8 * n * n;
        const std::size_t b3 = b2 + 2 * n + 4 * n;
        for (std::size_t i = 0; i < 4 * n; ++i) p[b1 + i] = rng.uniform(-0.1, 0.1);
        for (std::size_t i = 0; i < 2 * n; ++i) p[b2 + i] = rng.uniform(-0.1, 0.1);
        for (std::size_t i = 0; i < 2; ++i) p[b3 + i] = rng.uniform(-0.5, 0.5);
    }
    const AngularGrid grid(n_bins);
    const Posterior prior = Posterior::uniform(n_bins);
    Rng draw = Rng::stream(seed, 0xa0a);
    const double psi = sample_angle(prior, draw);
    const ChannelParams ch = ChannelParams::from_raw_snr_db(opt.raw_snr_db);
    const double tau = grid.bin_width();

    std::vector<double> analytic(net.parameters().size(), 0.0);
    {
        ad::Tape tape(opt.tape);
        Rng rng = Rng::stream(seed, 0xe915);
        const auto bound = net.bind(tape, analytic);
        const TapeEpisode ep = run_episode_train(tape, bound, prior, psi, ch, slots, tau, rng, opt.loss);
        tape.backward(ep.loss);
    }

    const std::size_t n_params = analytic.size();
    std::vector<std::size_t> coords(n_params);
    for (std::size_t i = 0; i < n_params; ++i) {
        coords[i] = i;
    }
    // Partial Fisher-Yates draw of distinct coordinates.
    Rng pick = Rng::stream(seed, 0xc00d);
    const std::size_t take = std::min(opt.coords, n_params);
    for (std::size_t i = 0; i < take; ++i) {
        std::swap(coords[i], coords[i + pick.index(n_params - i)]);
    }
    coords.resize(take);

    const std::vector<long double> base(net.parameters().begin(), net.parameters().end());
    const Rng noise = Rng::stream(seed, 0xe915);
    auto reference_at = [&](std::size_t c, long double delta) {
        std::vector<long double> theta = base;
        theta[c] += delta;
        return reference_episode_loss(theta, prior, psi, ch, slots, tau, noise, opt.loss);
    };

    GradcheckReport rep;
    rep.coords = take;
    for (std::size_t c : coords) {
        const long double h = opt.step;
        const auto numeric = static_cast<double>((reference_at(c, h) - reference_at(c, -h)) / (2 * h));
        const double a = analytic[c];
        const double rel = std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), opt.floor});
        if (rel > rep.max_rel_err || (rep.max_rel_err == 0.0 && c == coords.front())) {
            rep.max_rel_err = rel;
            rep.worst_coord = c;
            rep.worst_analytic = a;
            rep.worst_numeric = numeric;
        }
    }
    rep.passed = rep.max_rel_err <= opt.tolerance;
    return rep;
}

}  // namespace beamalign
