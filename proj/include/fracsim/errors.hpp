#pragma once

#include <stdexcept>

namespace fracsim {

/// A configuration field is missing, malformed or out of range.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// The memory target is below the smallest reachable footprint.
class InfeasibleTargetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a NaN or infinite loss.
class NonFiniteLossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An internal cross-check failed (simulator mismatch, accounting drift).
class InvariantViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace fracsim
