#pragma once

#include <stdexcept>
#include <string>

namespace avr {

/// Malformed or inconsistent input data (files, indices, vocabularies).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numeric routine could not produce a finite or well-defined result.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace avr
