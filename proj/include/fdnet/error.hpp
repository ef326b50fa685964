#pragma once

#include <stdexcept>
#include <string>

namespace fdnet {

enum class ErrorKind {
    Dimension,
    Config,
    Io,
    Validation,
    Training,
    Version,
    Internal,
};

const char* error_kind_name(ErrorKind kind);

/// Base of every error thrown by the library. `kind()` drives the CLI's
/// machine-parsable error line.
class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

  private:
    ErrorKind kind_;
};

class DimensionError : public Error {
  public:
    explicit DimensionError(const std::string& what) : Error(ErrorKind::Dimension, what) {}
};

class ConfigError : public Error {
  public:
    explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what) {}
};

class IoError : public Error {
  public:
    explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

class ValidationError : public Error {
  public:
    explicit ValidationError(const std::string& what) : Error(ErrorKind::Validation, what) {}
};

class TrainingError : public Error {
  public:
    explicit TrainingError(const std::string& what) : Error(ErrorKind::Training, what) {}
};

/// Persisted artifact written by an incompatible format version.
class VersionError : public Error {
  public:
    explicit VersionError(const std::string& what) : Error(ErrorKind::Version, what) {}
};

class InternalError : public Error {
  public:
    explicit InternalError(const std::string& what) : Error(ErrorKind::Internal, what) {}
};

}  // namespace fdnet
