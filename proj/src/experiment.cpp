// SPDX-License-Identifier: Apache-2.0
#include "beamalign/experiment.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <iomanip>
#include <json.hpp>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "beamalign/errors.hpp"
#include "beamalign/rng.hpp"
#include "beamalign/train.hpp"

namespace beamalign {

namespace {

/// Neumaier-compensated running sum.
class CompensatedSum {
public:
    void add(double x)
    {
        const double t = sum_ + x;
        if (std::fabs(sum_) >= std::fabs(x)) {
            comp_ += (sum_ - t) + x;
        } else {
            comp_ += (x - t) + sum_;
        }
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

bool in_bin_range(std::size_t bin, std::size_t first, std::size_t count, std::size_t n)
{
    return (bin + n - first) % n < count;
}

}  // namespace

void EvalConfig::validate() const
{
    if (n_bins < 2) {
        throw ConfigError("n_bins", "must be >= 2");
    }
    if (!(epsilon > 0.0 && epsilon < 1.0)) {
        throw ConfigError("epsilon", "must lie in (0, 1)");
    }
    if (trials == 0) {
        throw ConfigError("trials", "must be >= 1");
    }
    for (int b : slots) {
        if (b < 0) {
            throw ConfigError("slots", "must be >= 0");
        }
    }
    for (double s : raw_snr_db) {
        if (!std::isfinite(s)) {
            throw ConfigError("raw_snr_db", "values must be finite");
        }
    }
}

std::uint64_t cell_seed(std::uint64_t seed, double raw_snr_db, int slots)
{
    return mix64(mix64(seed) ^ mix64(std::bit_cast<std::uint64_t>(raw_snr_db + 0.0)) ^
                 mix64(static_cast<std::uint64_t>(slots) + 0x51a7));
}

TrialOutcome run_trial(const Policy& policy, const Posterior& prior, const ChannelParams& ch, int slots,
                       double epsilon, std::uint64_t seed, std::size_t trial, MomentMode moments)
{
    TrialOutcome out;
    Rng rng = Rng::stream(seed, trial);
    const double psi = sample_angle(prior, rng);
    const EpisodeTrace trace = run_episode_eval(policy, prior, psi, ch, slots, rng, LossSpec::mmse(), moments);
    const Posterior& fin = trace.final_posterior();
    const CredibleBeam data = shortest_credible_beam(fin, epsilon);
    const AngularGrid grid = fin.grid();
    out.beamwidth = data.beam.length;
    out.miss = !in_bin_range(grid.bin_of(psi), data.first_bin, data.n_bins, grid.size());
    out.sq_err = trace.loss;
    out.failed = !std::isfinite(trace.loss);
    return out;
}

MetricsRecord evaluate_cell(const Policy& policy, const EvalConfig& cfg, double raw_snr_db, int slots)
{
    cfg.validate();
    const AngularGrid grid(cfg.n_bins);
    if (const ScanPolicyNet* net = policy.net(); net != nullptr && net->n_bins() != cfg.n_bins) {
        throw ConfigError("n_bins", "checkpoint was trained for N=" + std::to_string(net->n_bins()) +
                                        " but the evaluation grid has N=" + std::to_string(cfg.n_bins));
    }
    const Posterior prior = make_prior(cfg.prior, grid);
    const ChannelParams ch = ChannelParams::from_raw_snr_db(raw_snr_db);
    const std::uint64_t seed = cell_seed(cfg.seed, raw_snr_db, slots);

    std::vector<TrialOutcome> outcomes(cfg.trials);
    const unsigned n_threads =
        std::max(1U, std::min<unsigned>(cfg.threads, static_cast<unsigned>(std::min<std::size_t>(cfg.trials, 1024))));
    auto work = [&](unsigned worker) {
        const std::size_t first = worker * cfg.trials / n_threads;
        const std::size_t last = (worker + 1) * cfg.trials / n_threads;
        for (std::size_t t = first; t < last; ++t) {
            try {
                outcomes[t] = run_trial(policy, prior, ch, slots, cfg.epsilon, seed, t, cfg.moments);
            } catch (const std::exception&) {
                outcomes[t] = TrialOutcome{};
                outcomes[t].failed = true;
                outcomes[t].beamwidth = std::numeric_limits<double>::quiet_NaN();
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

    CompensatedSum width;
    CompensatedSum width_sq;
    CompensatedSum err;
    CompensatedSum miss;
    std::size_t counted = 0;
    std::size_t with_mean = 0;
    std::size_t failed = 0;
    for (const TrialOutcome& o : outcomes) {
        if (!std::isfinite(o.beamwidth)) {
            ++failed;
            continue;
        }
        const double w = to_degrees(o.beamwidth);
        width.add(w);
        width_sq.add(w * w);
        miss.add(o.miss ? 1.0 : 0.0);
        ++counted;
        if (o.failed) {
            ++failed;
        } else {
            err.add(o.sq_err);
            ++with_mean;
        }
    }

    MetricsRecord r;
    r.policy = policy.name();
    r.prior = cfg.prior.name();
    r.raw_snr_db = raw_snr_db;
    r.b = slots;
    r.epsilon = cfg.epsilon;
    r.trials = cfg.trials;
    r.failed_trials = failed;
    if (counted > 0) {
        const double n = static_cast<double>(counted);
        r.expected_beamwidth_deg = width.value() / n;
        const double var = counted > 1 ? std::max(0.0, (width_sq.value() - n * r.expected_beamwidth_deg *
                                                                                   r.expected_beamwidth_deg) /
                                                           (n - 1.0))
                                       : 0.0;
        r.ci95_beamwidth_deg = 1.96 * std::sqrt(var / n);
        r.empirical_error_prob = miss.value() / n;
    }
    r.mmse_rad2 = with_mean > 0 ? err.value() / static_cast<double>(with_mean)
                                : std::numeric_limits<double>::quiet_NaN();
    r.markov_beamwidth_deg =
        std::isfinite(r.mmse_rad2) ? to_degrees(markov_beamwidth(r.mmse_rad2, cfg.epsilon)) : r.mmse_rad2;
    return r;
}

std::vector<MetricsRecord> evaluate(const Policy& policy, const EvalConfig& cfg)
{
    if (cfg.slots.empty()) {
        throw ConfigError("slots", "needs a value");
    }
    return sweep(policy, cfg, cfg.raw_snr_db, {cfg.slots.front()});
}

std::vector<MetricsRecord> sweep(const Policy& policy, const EvalConfig& base, const std::vector<double>& snrs,
                                 const std::vector<int>& slots)
{
    std::vector<MetricsRecord> out;
    out.reserve(snrs.size() * slots.size());
    for (double snr : snrs) {
        for (int b : slots) {
            out.push_back(evaluate_cell(policy, base, snr, b));
        }
    }
    return out;
}

std::vector<CellDifference> compare(const std::vector<MetricsRecord>& a, const std::vector<MetricsRecord>& b)
{
    if (a.size() != b.size()) {
        throw std::invalid_argument("compare: record sets have different sizes");
    }
    std::vector<CellDifference> out;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].raw_snr_db != b[i].raw_snr_db || a[i].b != b[i].b) {
            throw std::invalid_argument("compare: cell " + std::to_string(i) + " is misaligned");
        }
        out.push_back(CellDifference{
            a[i].raw_snr_db, a[i].b, b[i].expected_beamwidth_deg - a[i].expected_beamwidth_deg,
            std::hypot(a[i].ci95_beamwidth_deg, b[i].ci95_beamwidth_deg)});
    }
    return out;
}

void write_metrics_csv(std::ostream& os, const std::vector<MetricsRecord>& records)
{
    os << kMetricsCsvHeader << '\n';
    os << std::setprecision(10);
    for (const MetricsRecord& r : records) {
        os << r.policy << ',' << r.prior << ',' << r.raw_snr_db << ',' << r.b << ',' << r.epsilon << ','
           << r.trials << ',' << r.expected_beamwidth_deg << ',' << r.ci95_beamwidth_deg << ',' << r.mmse_rad2
           << ',' << r.empirical_error_prob << ',' << r.markov_beamwidth_deg << '\n';
    }
}

std::string metrics_json(const std::vector<MetricsRecord>& records)
{
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const MetricsRecord& r : records) {
        nlohmann::ordered_json j;
        j["policy"] = r.policy;
        j["prior"] = r.prior;
        j["raw_snr_db"] = r.raw_snr_db;
        j["b"] = r.b;
        j["epsilon"] = r.epsilon;
        j["trials"] = r.trials;
        j["beamwidth_deg"] = r.expected_beamwidth_deg;
        j["ci95_deg"] = r.ci95_beamwidth_deg;
        j["mmse_rad2"] = r.mmse_rad2;
        j["err_prob"] = r.empirical_error_prob;
        j["markov_deg"] = r.markov_beamwidth_deg;
        arr.push_back(std::move(j));
    }
    return arr.dump(2) + "\n";
}

void write_figure_csv(std::ostream& os, const std::string& figure, const std::vector<Series>& series)
{
    const bool mmse = figure == "fig5a";
    os << "series,raw_snr_db,b," << (mmse ? "mmse_rad2" : "beamwidth_deg") << ",ci95\n";
    os << std::setprecision(10);
    for (const Series& s : series) {
        for (const MetricsRecord& r : s.records) {
            os << s.label << ',' << r.raw_snr_db << ',' << r.b << ','
               << (mmse ? r.mmse_rad2 : r.expected_beamwidth_deg) << ','
               << (mmse ? 0.0 : r.ci95_beamwidth_deg) << '\n';
        }
    }
}

void write_cam_shape_csv(std::ostream& os, std::size_t points)
{
    if (points < 2) {
        throw std::invalid_argument("cam shape needs at least two points");
    }
    os << "deviation_rad,cam1,cam2,cam3\n";
    os << std::setprecision(10);
    for (std::size_t i = 0; i < points; ++i) {
        const double x = -kPi + kTwoPi * static_cast<double>(i) / static_cast<double>(points - 1);
        const double a = std::fabs(x);
        os << x << ',' << a << ',' << a * a << ',' << a * a * a << '\n';
    }
}

}  // namespace beamalign
