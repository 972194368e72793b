#pragma once

#include <stdexcept>
#include <string>

namespace rlp {

// Bad or inconsistent configuration supplied by the caller.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A non-finite value reached a place that requires finite numbers.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training loss became non-finite.
class DivergenceError : public NumericError {
 public:
  using NumericError::NumericError;
};

// Malformed file or record.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rlp
