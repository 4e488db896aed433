#pragma once

#include <stdexcept>
#include <string>

namespace ifa {

// Every error the library raises derives from Error. The CLI maps the three
// families onto exit codes: ConfigError -> 1, DataError -> 2,
// NumericalError -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad arguments, bad config values, unknown modes.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or invalid input data (parse, shape, validation).
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite objectives or gradients, failed factorizations, rotations that
// never converged.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace ifa
