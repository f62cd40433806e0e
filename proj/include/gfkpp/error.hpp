#pragma once

#include <stdexcept>
#include <string>

namespace gfkpp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A documented precondition of an operation was violated by its inputs.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// A simulation produced a nonfinite or otherwise unusable value.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A configuration or graph description file is malformed.
class ConfigError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require(bool condition, const std::string& message) {
  if (!condition) throw PreconditionError(message);
}

}  // namespace detail
}  // namespace gfkpp
