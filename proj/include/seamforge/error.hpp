#pragma once

#include <stdexcept>
#include <string>

namespace seamforge {

// Base of every error raised by the library. The CLI maps subclasses onto
// exit codes: ConfigError and the argument/shape/format errors that only a
// bad configuration can reach -> 2, NumericalError -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated input files.
class FormatError : public Error {
 public:
  using Error::Error;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Singular systems, non-convergence, non-finite values.
class NumericalError : public Error {
 public:
  using Error::Error;
};

namespace detail {

template <typename E = InvalidArgument>
inline void require(bool cond, const std::string& what) {
  if (!cond) throw E(what);
}

}  // namespace detail
}  // namespace seamforge
