#pragma once

#include <stdexcept>
#include <string>

namespace deqflow {

/// Invalid values or inconsistent shapes on a library call.
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A documented precondition of an operation does not hold.
class PreconditionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Requested configuration is outside the supported surface
/// (e.g. logistic loss with more than one output).
class UnsupportedConfig : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Iterative solve hit its iteration budget; carries the last residual.
class NonConvergence : public std::runtime_error {
public:
    NonConvergence(const std::string& msg, double last_residual, long iterations)
        : std::runtime_error(msg), last_residual(last_residual), iterations(iterations) {}
    double last_residual;
    long iterations;
};

/// A flow produced a non-finite loss; carries the offending step index.
class Divergence : public std::runtime_error {
public:
    Divergence(const std::string& msg, long step) : std::runtime_error(msg), step(step) {}
    long step;
};

/// Bad or unreadable run configuration (CLI layer).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace deqflow
