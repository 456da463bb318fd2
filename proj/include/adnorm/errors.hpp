#pragma once

#include <stdexcept>
#include <string>

namespace adnorm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An argument lies outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Result not representable in double precision.
class OverflowError : public Error {
 public:
  using Error::Error;
};

/// Input sample has (numerically) zero variance.
class ZeroVarianceError : public Error {
 public:
  explicit ZeroVarianceError(const std::string& where)
      : Error(where + ": input has zero variance") {}
};

/// Cholesky factorization failed even after the maximum diagonal jitter.
class FactorizationError : public Error {
 public:
  using Error::Error;
};

/// Sizes of two operands do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Malformed file or unexpected content while reading a container.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value; `key()` names the offending entry.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& message)
      : Error("config key '" + key + "': " + message), key_(std::move(key)), detail_(message) {}
  const std::string& key() const noexcept { return key_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string key_;
  std::string detail_;
};

}  // namespace adnorm
