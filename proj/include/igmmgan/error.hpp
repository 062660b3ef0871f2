#pragma once

#include <stdexcept>
#include <string>

namespace igmmgan {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A NaN/Inf appeared, or a matrix failed to factorize.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file or stream.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A value violates a domain constraint (coordinate bounds, label range, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or call sequence.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Persisted artifact failed an integrity check.
class ChecksumError : public Error {
 public:
  using Error::Error;
};

/// Persisted artifact was written by an incompatible format version.
class VersionError : public Error {
 public:
  using Error::Error;
};

}  // namespace igmmgan
