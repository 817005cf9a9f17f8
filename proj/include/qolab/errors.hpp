#pragma once

#include <stdexcept>
#include <string>

namespace qolab {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad generator / experiment settings.
struct ConfigError : Error {
  using Error::Error;
};

// A caller broke an operation's precondition.
struct ContractError : Error {
  using Error::Error;
};

// A randomized generator gave up after its retry budget.
struct GenerationError : Error {
  using Error::Error;
};

// Exhaustive operation refused because the input exceeds its size guard.
struct RefusalError : Error {
  using Error::Error;
};

// A plan cannot be expressed in the environment's action encoding.
struct EncodingError : Error {
  using Error::Error;
};

struct CalibrationError : Error {
  using Error::Error;
};

enum class IoErrorKind { MissingFile, Malformed, VersionMismatch, FingerprintMismatch };

struct IoError : Error {
  IoError(IoErrorKind k, const std::string& what) : Error(what), kind(k) {}
  IoErrorKind kind;
};

}  // namespace qolab
