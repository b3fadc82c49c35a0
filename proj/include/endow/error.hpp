#pragma once

#include <stdexcept>
#include <string>

namespace endow {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input data (dataset records, sidecar files, protocol messages).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A looked-up item (variant, cache entry, annotation) does not exist.
class NotFoundError : public Error {
 public:
  using Error::Error;
};

/// Invalid run configuration. Maps to CLI exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Sequences that must pair up positionally have different lengths.
class MismatchError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure; the message carries the underlying cause.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Adapter could not be reached, or did not answer, after all retries.
class TransportError : public Error {
 public:
  using Error::Error;
};

/// Adapter answered, but with status=error or an ill-formed payload.
class AdapterError : public Error {
 public:
  using Error::Error;
};

/// A pipeline stage failed for one variant. Maps to CLI exit code 3.
class StageError : public Error {
 public:
  StageError(std::string stage, std::string variant, const std::string& what)
      : Error("stage '" + stage + "' failed for variant " + variant + ": " + what),
        stage_(std::move(stage)),
        variant_(std::move(variant)) {}

  const std::string& stage() const noexcept { return stage_; }
  const std::string& variant() const noexcept { return variant_; }

 private:
  std::string stage_;
  std::string variant_;
};

}  // namespace endow
