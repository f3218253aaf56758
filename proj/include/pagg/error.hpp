#pragma once

#include <stdexcept>
#include <string>

namespace pagg {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A value violates a documented invariant (bad spec, bad shape, bad label).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A configuration cannot be satisfied by the data (e.g. fewer points than C).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file.
class ParseError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Non-finite quantity during numerical work.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace pagg
