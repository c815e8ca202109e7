#pragma once

#include <stdexcept>
#include <string>

namespace wlab {

/// Base of every error raised by the library. `exit_code()` is the value the
/// `lab` CLI returns when the error escapes a subcommand.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual int exit_code() const noexcept { return 2; }
};

/// Malformed or out-of-range input (bad weights, dimension mismatch, ...).
class InvalidInput : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 1; }
};

class InternalError : public Error {
public:
    using Error::Error;
};

/// Quadrature refinement disagreed by more than the requested tolerance.
class AccuracyError : public Error {
public:
    using Error::Error;
};

/// A measure functional returned a non-finite value inside a difference quotient.
class EvalError : public Error {
public:
    using Error::Error;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

/// Particle weights collapsed (effective sample size below 2).
class DegeneracyError : public Error {
public:
    using Error::Error;
};

class NonConvergence : public Error {
public:
    using Error::Error;
};

/// One or more inequalities of a verification suite were violated.
class SuiteFailure : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 3; }
};

inline void require(bool ok, const std::string& what) {
    if (!ok) throw InvalidInput(what);
}

}  // namespace wlab
