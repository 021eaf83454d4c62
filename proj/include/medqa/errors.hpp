#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace medqa {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not line up for an operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A class index or token id outside its valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// An API called with arguments that violate its preconditions.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Invalid model, LoRA or training configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// NaN or infinity produced by a forward op or the training loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Bad user input at query time (for example a question that normalizes to nothing).
class InputError : public Error {
 public:
  using Error::Error;
};

/// The classifier predicted a label that has no entry in the answer bank.
class UnmappedLabelError : public ConfigError {
 public:
  explicit UnmappedLabelError(std::string label)
      : ConfigError("unmapped label: '" + label + "' has no entry in the answer bank"),
        label_(std::move(label)) {}
  const std::string& label() const noexcept { return label_; }

 private:
  std::string label_;
};

class ParseError : public Error {
 public:
  enum class Kind { Io, MissingHeader, ColumnCount, Quoting, EmptyField, DuplicateLabel, BadValue };

  ParseError(Kind kind, std::size_t line, const std::string& message)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + message : message),
        kind_(kind),
        line_(line),
        detail_(message) {}

  Kind kind() const noexcept { return kind_; }
  /// Message without the line prefix.
  const std::string& detail() const noexcept { return detail_; }
  /// 1-based line number of the offending row, 0 when not tied to a line.
  std::size_t line() const noexcept { return line_; }

 private:
  Kind kind_;
  std::size_t line_;
  std::string detail_;
};

class CheckpointError : public Error {
 public:
  enum class Kind { Io, BadMagic, Truncated, ManifestMismatch, Malformed };

  CheckpointError(Kind kind, const std::string& message) : Error(message), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace medqa
