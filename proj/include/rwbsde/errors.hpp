#pragma once

#include <stdexcept>
#include <string>

namespace rwbsde {

enum class ErrorKind {
  Registry,
  Validation,
  Config,
  Capacity,
  Domain,
  Numeric,
  Convergence,
  Capability,
  NoReference,
  StateLookup,
  RareEvent,
  Ellipticity,
  InsufficientData,
  Io,
};

const char* to_string(ErrorKind kind) noexcept;

/// Single exception type for the library; `kind()` tells callers (and the CLI
/// exit-code mapping) what went wrong.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace rwbsde
