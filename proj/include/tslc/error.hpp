#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tslc {

// Exit codes used by the CLI; each error class maps to one.
enum class ExitCode : int {
  Ok = 0,
  Internal = 1,
  Config = 2,
  Input = 3,
  Format = 4,
  Transport = 5,
  Integrity = 6,
  Security = 7,
};

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
  virtual ExitCode exit_code() const { return ExitCode::Internal; }
};

// Shape or rank mismatch between tensors.
struct DimensionError : Error {
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::Input; }
};

// Bad argument values (labels out of range, empty dataset, ...).
struct InputError : Error {
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::Input; }
};

// Unknown architecture, invalid partition parameters, bad run config.
struct ConfigError : Error {
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::Config; }
};

// Corrupt or truncated on-disk artifacts (checkpoints, datasets, pad stores).
struct FormatError : Error {
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::Format; }
};

// API misuse: non-scalar loss, training a non-frozen backbone, ...
struct ContractError : Error {
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::Internal; }
};

// Pad reuse, pad exhaustion, stale pads after a weight change.
struct SecurityError : Error {
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::Security; }
};

// Failed result verification; sessions abort on this.
struct IntegrityError : Error {
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::Integrity; }
};

struct TransportError : Error {
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::Transport; }
};

// Wire bytes that do not parse; carries the offending offset.
struct CodecError : Error {
  CodecError(const std::string& msg, std::size_t offset)
      : Error(msg + " (at offset " + std::to_string(offset) + ")"), offset(offset) {}
  std::size_t offset;
  ExitCode exit_code() const override { return ExitCode::Transport; }
};

}  // namespace tslc
