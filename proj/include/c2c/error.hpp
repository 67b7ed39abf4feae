#pragma once

#include <stdexcept>
#include <string>

namespace c2c {

/// Broad failure classes. The CLI maps these onto process exit codes.
enum class ErrorKind {
  kInvalidInput,
  kInvalidConfig,
  kInvalidState,
  kShapeError,
  kNumericalError,
  kConstructionFailed,
  kFormatError,
  kIoError,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class InvalidInput : public Error {
 public:
  explicit InvalidInput(const std::string& what) : Error(ErrorKind::kInvalidInput, what) {}
};

class InvalidConfig : public Error {
 public:
  explicit InvalidConfig(const std::string& what) : Error(ErrorKind::kInvalidConfig, what) {}
};

class InvalidState : public Error {
 public:
  explicit InvalidState(const std::string& what) : Error(ErrorKind::kInvalidState, what) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorKind::kShapeError, what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(ErrorKind::kNumericalError, what) {}
};

/// Raised by the split builders. `stage()` names the step that emptied a split.
class ConstructionFailed : public Error {
 public:
  ConstructionFailed(std::string stage, const std::string& what)
      : Error(ErrorKind::kConstructionFailed, stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

/// Malformed binary or text input. `offset()` is the byte position where
/// decoding stopped, or -1 when not applicable.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what, long long offset = -1)
      : Error(ErrorKind::kFormatError,
              offset >= 0 ? what + " (at byte " + std::to_string(offset) + ")" : what),
        offset_(offset) {}
  long long offset() const noexcept { return offset_; }

 private:
  long long offset_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::kIoError, what) {}
};

}  // namespace c2c
