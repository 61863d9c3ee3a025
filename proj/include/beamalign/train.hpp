// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "beamalign/autodiff.hpp"
#include "beamalign/belief.hpp"
#include "beamalign/channel.hpp"
#include "beamalign/policy.hpp"
#include "beamalign/rng.hpp"

namespace beamalign {

struct LossSpec {
    enum class Kind { mmse, cam };
    Kind kind = Kind::cam;
    int order = 1;  ///< CAM moment order, >= 1

    static LossSpec mmse() { return {Kind::mmse, 2}; }
    static LossSpec cam(int n) { return {Kind::cam, n}; }
    std::string name() const;
};

struct TrainConfig {
    std::size_t n_bins = 360;
    int slots = 4;
    double epsilon = 0.1;
    PriorSpec prior = PriorSpec::uniform();
    /// One value trains at a fixed SNR; several are sampled uniformly per episode.
    std::vector<double> raw_snr_db{0.0};
    std::size_t batch_size = 128;
    std::size_t steps = 5000;
    double learning_rate = 3e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    /// Largest global L2 norm of the batch gradient; longer gradients are
    /// rescaled before the Adam update. 0 disables clipping.
    double grad_clip = 0.0;
    /// Soft-gain edge temperature; 0 selects one bin width.
    double tau = 0.0;
    std::uint64_t seed = 1;
    LossSpec loss = LossSpec::cam(1);
    MomentMode moments = MomentMode::circular;
    std::size_t checkpoint_every = 500;
    unsigned threads = 1;

    /// Throws ConfigError naming the first bad field.
    void validate() const;
    double effective_tau() const;
};

/// Record of one beam-alignment episode: f(0) is the prior, f(b) the final
/// posterior.
struct EpisodeTrace {
    double psi_true = 0.0;
    std::vector<Beam> beams;
    std::vector<Measurement> measurements;
    std::vector<Posterior> posteriors;
    double loss = 0.0;

    const Posterior& final_posterior() const { return posteriors.back(); }
    std::string dump() const;
};

/// Hard-gain episode without a tape. The channel sees the center of the bin
/// holding `psi`; with sigma2 == 0 the exact noiseless update is used. The
/// trace loss is evaluated on the final posterior (NaN if its mean is
/// undefined).
EpisodeTrace run_episode_eval(const Policy& policy, const Posterior& prior, double psi, const ChannelParams& ch,
                              int slots, Rng& rng, const LossSpec& loss = LossSpec::cam(1),
                              MomentMode moments = MomentMode::circular);

struct TapeEpisode {
    EpisodeTrace trace;
    ad::Value loss;
};

/// Differentiable episode: soft gains with temperature `tau`, the whole
/// recursion on `tape`, measurements reparameterized as mean + fixed noise
/// draw. Consumes the same random draws as run_episode_eval.
TapeEpisode run_episode_train(ad::Tape& tape, const ScanPolicyNet::Bound& net, const Posterior& prior, double psi,
                              const ChannelParams& ch, int slots, double tau, Rng& rng, const LossSpec& loss,
                              MomentMode moments = MomentMode::circular);

/// Squared distance between `psi` and the differentiable posterior mean.
ad::Value loss_mmse(const ad::Value& probs, double psi, MomentMode moments = MomentMode::circular);

/// Sum_k p_k d(c_k, mean)^n on the tape.
ad::Value loss_cam(const ad::Value& probs, int n, MomentMode moments = MomentMode::circular);

ad::Value episode_loss(const ad::Value& probs, double psi, const LossSpec& loss, MomentMode moments);

struct TrainLogRow {
    std::size_t step = 0;
    double loss = 0.0;
    double grad_norm = 0.0;
    double wall_ms = 0.0;
};

struct TrainResult {
    ScanPolicyNet net;
    std::vector<TrainLogRow> log;
};

/// Called with (step, weights) every `checkpoint_every` steps and at the end.
using CheckpointFn = std::function<void(std::size_t, const ScanPolicyNet&)>;

/// Adam on the batch-mean episode loss. Each step draws `batch_size`
/// episodes (AoA from the prior, fresh noise, SNR from the configured set);
/// the result depends only on the config, not on the thread count. Throws
/// NumericError on a non-finite loss or gradient.
TrainResult train(const TrainConfig& cfg, const CheckpointFn& on_checkpoint = {});

/// Mean loss and gradient over an explicit batch of episode indices of step
/// `step`; exposed for tests of batch linearity.
double batch_loss_and_grad(const TrainConfig& cfg, const ScanPolicyNet& net, const Posterior& prior,
                           std::size_t step, std::size_t first, std::size_t count, std::span<double> grad,
                           double weight);

struct GradcheckReport {
    double max_rel_err = 0.0;
    std::size_t worst_coord = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t coords = 0;
    bool passed = false;
};

struct GradcheckOptions {
    std::size_t coords = 64;
    double step = 1e-5;
    double tolerance = 1e-5;
    /// Denominator floor of the relative error max(|a|, |n|, floor).
    double floor = 1e-6;
    double raw_snr_db = 0.0;
    LossSpec loss = LossSpec::cam(1);
    ad::TapeOptions tape{};
};

/// The loss of run_episode_train recomputed with plain loops in long double.
/// `params` uses the network's flat layout; `rng` is taken by value so a
/// caller can replay the same noise. Rounding noise is far below that of the
/// double tape, which makes this the finite-difference oracle.
long double reference_episode_loss(std::span<const long double> params, const Posterior& prior, double psi,
                                   const ChannelParams& ch, int slots, double tau, Rng rng, const LossSpec& loss,
                                   MomentMode moments = MomentMode::circular);

/// Central finite differences of reference_episode_loss against the tape
/// gradient of one full episode, on a freshly initialized N-bin network with
/// seed `seed`.
GradcheckReport gradcheck(std::uint64_t seed, std::size_t n_bins, int slots, const GradcheckOptions& opt = {});

}  // namespace beamalign
