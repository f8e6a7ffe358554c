#pragma once

#include <stdexcept>

namespace loramp {

// Invalid configuration values (spreading factor, coding rate, oversampling, ...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Argument outside the domain of an operation (negative delay, mixed rates).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Offset or channel estimation could not separate the requested users.
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or truncated trace files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace loramp
