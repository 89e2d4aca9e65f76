#pragma once

#include <stdexcept>
#include <string>

namespace pandiff {

// Failure categories surfaced by the library. Callers that only care about
// "something went wrong" can catch std::runtime_error / std::logic_error.

struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericDomainError : std::domain_error {
  using std::domain_error::domain_error;
};

struct UndefinedMetric : std::domain_error {
  using std::domain_error::domain_error;
};

}  // namespace pandiff
