#pragma once

#include <stdexcept>
#include <string>

namespace gma {

// Exception hierarchy. The CLI maps each kind onto its own exit code:
// UsageError -> 2, DataError -> 3, everything else -> 4.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace gma
