#pragma once

#include <stdexcept>
#include <string>

namespace bapr {

/// Shape or index disagreement between arguments.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A value outside the domain an operation accepts (non-finite entries,
/// out-of-range run-lengths, unnormalized beliefs, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Bayesian normalizer Z <= floor: the evidence assigns (numerically) zero
/// probability to every hypothesis.
class DegenerateNormalizer : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Fixed-point iteration did not reach the requested tolerance.
class ConvergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    IoError(const std::string& path, const std::string& what)
        : std::runtime_error(path + ": " + what), path_(path) {}

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

} // namespace bapr
