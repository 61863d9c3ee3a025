// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace beamalign {

/// Posterior mean is undefined because the resultant vector vanishes.
class UndefinedMean : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Conditioning on an event with zero posterior mass.
class InconsistentEvidence : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Raised where an operation needs sigma2 > 0.
class NoiselessRegime : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Invalid configuration. `field` names the offending key when known.
class ConfigError : public std::invalid_argument {
public:
    ConfigError(std::string field, const std::string& what)
        : std::invalid_argument(field.empty() ? what : field + ": " + what), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

/// Non-finite loss or gradient during training. `trace` holds a text dump
/// of the offending episode.
class NumericError : public std::runtime_error {
public:
    NumericError(const std::string& what, std::string trace)
        : std::runtime_error(what), trace_(std::move(trace)) {}
    const std::string& trace() const noexcept { return trace_; }

private:
    std::string trace_;
};

}  // namespace beamalign
