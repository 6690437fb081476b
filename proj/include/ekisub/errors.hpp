#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ekisub {

/// Root of the library's exception hierarchy.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed arguments to a pure operation (empty ensemble, size mismatch).
class InvalidInput : public Error {
public:
    using Error::Error;
};

/// Invalid configuration (non-PD covariance, out-of-range level, bad geometry).
class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Input for which the requested quantity is undefined, e.g. a distance
/// transform of an image without any set pixel.
class DegenerateInput : public Error {
public:
    using Error::Error;
};

/// Power-law fit on an unusable window (too few samples, nonpositive values).
class FitError : public Error {
public:
    using Error::Error;
};

/// Trajectories that cannot be compared (disjoint time supports).
class ComparisonError : public Error {
public:
    using Error::Error;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

/// Adaptive integrator could not keep its step above the configured minimum.
class StiffnessError : public NumericalError {
public:
    StiffnessError(const std::string& what, double time)
        : NumericalError(what + " at t=" + std::to_string(time)), time_(time) {}
    double time() const noexcept { return time_; }

private:
    double time_;
};

/// Failure of a forward-model evaluation. EKI drivers catch this family and
/// apply their failure policy.
class EvaluationError : public Error {
public:
    using Error::Error;
};

/// Physical parameters outside the model's domain (nonpositive density/modulus).
class DomainError : public EvaluationError {
public:
    using EvaluationError::EvaluationError;
};

class SolverDivergence : public EvaluationError {
public:
    SolverDivergence(const std::string& what, std::size_t step)
        : EvaluationError(what + " at step " + std::to_string(step)), step_(step) {}
    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

}  // namespace ekisub
