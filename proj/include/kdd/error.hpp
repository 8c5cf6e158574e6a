#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace kdd {

enum class ErrorKind {
  InvalidInput,
  InvalidShape,
  InvalidBandwidth,
  InvalidGraph,
  DegenerateBatch,
  DegenerateSet,
  NoStatisticsAvailable,
  ConfigError,
  FormatError,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// One concrete type per kind so callers and tests can catch precisely.
template <ErrorKind K>
class KindError : public Error {
 public:
  explicit KindError(const std::string& what) : Error(K, what) {}
};

using InvalidInput = KindError<ErrorKind::InvalidInput>;
using InvalidShape = KindError<ErrorKind::InvalidShape>;
using InvalidBandwidth = KindError<ErrorKind::InvalidBandwidth>;
using InvalidGraph = KindError<ErrorKind::InvalidGraph>;
using DegenerateBatch = KindError<ErrorKind::DegenerateBatch>;
using DegenerateSet = KindError<ErrorKind::DegenerateSet>;
using NoStatisticsAvailable = KindError<ErrorKind::NoStatisticsAvailable>;

class ConfigError : public Error {
 public:
  ConfigError(std::string field_path, const std::string& what)
      : Error(ErrorKind::ConfigError, field_path + ": " + what), field_path_(std::move(field_path)) {}
  const std::string& field_path() const noexcept { return field_path_; }

 private:
  std::string field_path_;
};

class FormatError : public Error {
 public:
  FormatError(std::size_t byte_offset, const std::string& what)
      : Error(ErrorKind::FormatError, what + " (at byte " + std::to_string(byte_offset) + ")"),
        byte_offset_(byte_offset) {}
  std::size_t byte_offset() const noexcept { return byte_offset_; }

 private:
  std::size_t byte_offset_;
};

}  // namespace kdd
