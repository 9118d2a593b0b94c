#pragma once

#include <stdexcept>
#include <string>

namespace simrec {

// Base class for everything this library throws.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Unreadable, malformed or inconsistent input data.
struct DataError : Error {
  using Error::Error;
};

// NaN/Inf detected where the contract requires finite values.
struct NumericalError : Error {
  using Error::Error;
};

// Checkpoint file problems, with a machine-checkable kind.
struct CheckpointError : Error {
  enum class Kind { Version, Truncated, Checksum };
  Kind kind;
  CheckpointError(Kind k, const std::string& msg) : Error(msg), kind(k) {}
};

}  // namespace simrec
