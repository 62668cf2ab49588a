#pragma once

#include <stdexcept>
#include <string>

namespace rmab {

/// Process exit codes shared by every command-line entry point.
enum ExitCode : int {
    kExitOk = 0,
    kExitInputError = 2,
    kExitNumericError = 3,
    kExitVerificationFailed = 4,
    kExitCapacityError = 5,
};

class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
    virtual int exit_code() const noexcept = 0;
};

/// Malformed or inconsistent user input (shapes, ranges, files).
class InputError : public Error {
  public:
    using Error::Error;
    int exit_code() const noexcept override { return kExitInputError; }
};

/// A numerical routine failed: singular system, divergence, no convergence.
class NumericError : public Error {
  public:
    using Error::Error;
    int exit_code() const noexcept override { return kExitNumericError; }
};

/// Requested problem exceeds a supported size limit.
class CapacityError : public Error {
  public:
    using Error::Error;
    int exit_code() const noexcept override { return kExitCapacityError; }
};

/// The budget constraint cannot be met inside the search bracket.
class InfeasibleError : public NumericError {
  public:
    using NumericError::NumericError;
};

} // namespace rmab
