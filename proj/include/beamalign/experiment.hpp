// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "beamalign/belief.hpp"
#include "beamalign/policy.hpp"

namespace beamalign {

struct EvalConfig {
    std::size_t n_bins = 360;
    PriorSpec prior = PriorSpec::uniform();
    std::vector<int> slots{4};
    double epsilon = 0.1;
    std::vector<double> raw_snr_db{0.0};
    std::size_t trials = 10000;
    std::uint64_t seed = 1;
    MomentMode moments = MomentMode::circular;
    unsigned threads = 1;

    void validate() const;
};

/// Aggregate over the trials of one (raw SNR, slots) cell.
struct MetricsRecord {
    std::string policy;
    std::string prior;
    double raw_snr_db = 0.0;
    int b = 0;
    double epsilon = 0.0;
    std::size_t trials = 0;
    double expected_beamwidth_deg = 0.0;
    double ci95_beamwidth_deg = 0.0;  ///< normal-approximation half-width
    double mmse_rad2 = 0.0;
    double empirical_error_prob = 0.0;
    double markov_beamwidth_deg = 0.0;
    std::size_t failed_trials = 0;  ///< excluded from the means
};

struct TrialOutcome {
    double beamwidth = 0.0;  ///< radians
    double sq_err = 0.0;
    bool miss = false;
    bool failed = false;
};

/// One trial: AoA from the prior, an eval-mode episode, then the shortest
/// credible data beam on the final posterior. Pure function of its inputs.
TrialOutcome run_trial(const Policy& policy, const Posterior& prior, const ChannelParams& ch, int slots,
                       double epsilon, std::uint64_t cell_seed, std::size_t trial, MomentMode moments);

/// Seed for a cell, derived from the master seed and the cell's coordinates
/// so a cell gets the same draws whichever sweep it appears in.
std::uint64_t cell_seed(std::uint64_t seed, double raw_snr_db, int slots);

/// Monte Carlo over `trials` for one cell. Aggregation runs in trial order
/// with compensated summation, independent of the thread count.
MetricsRecord evaluate_cell(const Policy& policy, const EvalConfig& cfg, double raw_snr_db, int slots);

/// One record per raw SNR for the first entry of cfg.slots.
std::vector<MetricsRecord> evaluate(const Policy& policy, const EvalConfig& cfg);

/// Cross product snrs x slots, SNR-major.
std::vector<MetricsRecord> sweep(const Policy& policy, const EvalConfig& base, const std::vector<double>& snrs,
                                 const std::vector<int>& slots);

struct CellDifference {
    double raw_snr_db = 0.0;
    int b = 0;
    double beamwidth_diff_deg = 0.0;  ///< b minus a
    double ci95_deg = 0.0;
};

/// Per-cell beamwidth differences (b - a). Throws std::invalid_argument on
/// misaligned cells.
std::vector<CellDifference> compare(const std::vector<MetricsRecord>& a, const std::vector<MetricsRecord>& b);

inline constexpr const char* kMetricsCsvHeader =
    "policy,prior,raw_snr_db,b,epsilon,trials,beamwidth_deg,ci95_deg,mmse_rad2,err_prob,markov_deg";

void write_metrics_csv(std::ostream& os, const std::vector<MetricsRecord>& records);
std::string metrics_json(const std::vector<MetricsRecord>& records);

/// A labelled set of records forming one curve of a figure.
struct Series {
    std::string label;
    std::vector<MetricsRecord> records;
};

/// Long-format plot data: "series,raw_snr_db,b,value,ci95". fig5a plots the
/// MMSE (rad^2); every other metrics figure plots the beamwidth (deg).
void write_figure_csv(std::ostream& os, const std::string& figure, const std::vector<Series>& series);

/// The loss shape behind the CAM-order comparison: |x|^n for n = 1, 2, 3 on
/// a grid over [-pi, pi]. Columns "deviation_rad,cam1,cam2,cam3".
void write_cam_shape_csv(std::ostream& os, std::size_t points = 361);

}  // namespace beamalign
