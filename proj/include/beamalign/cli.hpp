// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "beamalign/experiment.hpp"
#include "beamalign/train.hpp"

namespace beamalign::cli {

inline constexpr const char* kToolVersion = "1.0.0";
inline constexpr int kSchemaVersion = 1;

enum ExitCode : int {
    kOk = 0,
    kCheckFailed = 1,
    kConfigInvalid = 2,
    kNumericFailure = 3,
    kRuntimeFailure = 4,
};

/// Evaluation settings plus the policies to run. `checkpoints` pairs with the
/// "neural" entries of `policies`, in order.
struct EvalJob {
    EvalConfig eval;
    std::vector<std::string> policies{"bisection"};
    std::vector<std::string> checkpoints;
    int hpm_depth = 9;
    std::string figure = "sweep";
};

struct DumpJob {
    std::size_t n_bins = 360;
    PriorSpec prior = PriorSpec::uniform();
    int slots = 4;
    double raw_snr_db = 0.0;
    std::uint64_t seed = 1;
    std::string policy = "bisection";
    std::string checkpoint;
    int hpm_depth = 9;
    double psi = -1.0;  ///< negative: draw from the prior
};

// Flat JSON <-> config. Parsing rejects unknown keys and wrong types with a
// ConfigError naming the field; printing materializes every default.
TrainConfig train_config_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json to_json(const TrainConfig& cfg);
EvalJob eval_job_from_json(const nlohmann::ordered_json& j, bool sweep);
nlohmann::ordered_json to_json(const EvalJob& job, bool sweep);
DumpJob dump_job_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json to_json(const DumpJob& job);

/// Entry point behind the beamalign tool. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace beamalign::cli
