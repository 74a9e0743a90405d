#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace glta {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Mismatched tensor/matrix extents.
struct DimensionError : Error {
  using Error::Error;
};

// A caller broke a documented precondition.
struct ContractError : Error {
  using Error::Error;
};

// An index (row, target id, ...) is out of range.
struct IndexError : Error {
  using Error::Error;
};

// NaN/Inf encountered while numeric checking is enabled.
struct NumericError : Error {
  using Error::Error;
};

// A sequence does not fit the model's maximum length.
struct LengthError : Error {
  LengthError(const std::string& msg, int64_t max_len) : Error(msg), max_len(max_len) {}
  int64_t max_len = 0;
};

// Malformed input file.
struct ParseError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

// Checkpoint produced by the wrong pipeline stage (or missing).
struct StageError : Error {
  using Error::Error;
};

// Network-level failure (connect, timeout).
struct TransportError : Error {
  using Error::Error;
};

// Authentication rejected; never retried.
struct AuthError : TransportError {
  using TransportError::TransportError;
};

// HTTP non-2xx after retries.
struct StatusError : Error {
  StatusError(int status, const std::string& msg) : Error(msg), status(status) {}
  int status = 0;
};

}  // namespace glta
