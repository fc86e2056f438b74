// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace interpkit {

/// Base class of every error thrown by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed archive header. `offset()` is the byte position where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class IntegrityError : public Error {
  using Error::Error;
};
class ValidationError : public Error {
  using Error::Error;
};
class ShapeError : public Error {
  using Error::Error;
};
class IoError : public Error {
  using Error::Error;
};
class StructureError : public Error {
  using Error::Error;
};
class UndefinedSimilarityError : public Error {
  using Error::Error;
};
class ConfigError : public Error {
  using Error::Error;
};
class InputError : public Error {
  using Error::Error;
};
class TrainingError : public Error {
  using Error::Error;
};
class ConfidenceUndefinedError : public Error {
  using Error::Error;
};
class RatingParseError : public Error {
  using Error::Error;
};
class ProfilingError : public Error {
  using Error::Error;
};
class ArgumentError : public Error {
  using Error::Error;
};
/// A pipeline stage failed; the message names the stage and, when known, the query.
class StageError : public Error {
  using Error::Error;
};

}  // namespace interpkit
