#pragma once

#include <stdexcept>
#include <string>

namespace arrowlab {

// Exit codes used by the command-line runner.
enum class ExitCode : int { ok = 0, validation = 1, numerical = 2, acceptance = 3 };

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual ExitCode code() const noexcept { return ExitCode::validation; }
};

// Bad input value or broken type invariant.
class ValidationError : public Error {
public:
    using Error::Error;
};

// Shapes or dimensions that do not fit together.
class StructuralError : public Error {
public:
    using Error::Error;
};

// Out-of-range argument to an operation.
class ParameterError : public Error {
public:
    using Error::Error;
};

// Argument outside the domain of a function (e.g. log of a singular matrix).
class DomainError : public Error {
public:
    using Error::Error;
};

class NumericalError : public Error {
public:
    using Error::Error;
    ExitCode code() const noexcept override { return ExitCode::numerical; }
};

} // namespace arrowlab
