#pragma once

#include <stdexcept>
#include <string>

namespace dmwm {

// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration (unknown env name, bad hyperparameter, env mismatch).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Caller supplied malformed input (non-finite action, length mismatch).
class InputError : public Error {
 public:
  using Error::Error;
};

// A computation produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Retryable: not enough data yet (e.g. replay has no episode of the requested length).
class NotReady : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Persisted file is malformed.
class FormatError : public Error {
 public:
  using Error::Error;
};

class VersionError : public FormatError {
 public:
  VersionError(const std::string& what, unsigned found, unsigned supported)
      : FormatError(what + ": file format version " + std::to_string(found) +
                    ", supported version " + std::to_string(supported)),
        found_(found),
        supported_(supported) {}
  unsigned found() const { return found_; }
  unsigned supported() const { return supported_; }

 private:
  unsigned found_;
  unsigned supported_;
};

class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace dmwm
