#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace causalstream {

/// Base class for all errors raised by the engine.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Input data failed validation (bad treatment code, missing intercept, ...).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Vector/matrix dimensions do not match the model spec.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Estimated propensity left the admissible interval (eps, 1-eps).
class PositivityError : public Error {
public:
    PositivityError(double propensity, long batch_index, long obs_index);

    double propensity = 0.0;
    long batch_index = -1;  // -1 when unknown
    long obs_index = -1;
};

/// A sensitivity/Jacobian matrix was numerically singular.
class SingularityError : public Error {
public:
    using Error::Error;
};

/// Newton iteration hit max_iter without meeting the step tolerance.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& msg, int iterations, double last_step_norm,
                     std::vector<double> last_iterate = {})
        : Error(msg),
          iterations(iterations),
          last_step_norm(last_step_norm),
          last_iterate(std::move(last_iterate)) {}

    int iterations = 0;
    double last_step_norm = 0.0;
    std::vector<double> last_iterate;  // diagnostics for the failed solve
};

/// Malformed CSV input; line is 1-based (header = line 1).
class CsvError : public Error {
public:
    CsvError(const std::string& msg, long line) : Error(msg), line(line) {}
    long line = 0;
};

/// State file could not be read, failed its checksum, or has a bad version.
class StateError : public Error {
public:
    using Error::Error;
};

/// Invalid monitor or simulation configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace causalstream
