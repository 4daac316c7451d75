#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace gpphs {

/// Broad failure classes. The CLI maps these onto process exit codes.
enum class ErrorClass {
  input,      // malformed user input: syntax, CSV, JSON, bad dimensions
  numerical,  // factorization, integration or optimization breakdown
  structure,  // PHS structure fails skew/symmetry/PSD checks
};

class Error : public std::runtime_error {
 public:
  Error(std::string kind, ErrorClass cls, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)), class_(cls) {}

  const std::string& kind() const noexcept { return kind_; }
  ErrorClass error_class() const noexcept { return class_; }

 private:
  std::string kind_;
  ErrorClass class_;
};

class SyntaxError : public Error {
 public:
  SyntaxError(std::size_t offset, std::string expected, const std::string& what)
      : Error("SyntaxError", ErrorClass::input, what),
        offset_(offset),
        expected_(std::move(expected)) {}

  /// Byte offset into the source text.
  std::size_t offset() const noexcept { return offset_; }
  /// Human-readable set of tokens that would have been accepted.
  const std::string& expected() const noexcept { return expected_; }

 private:
  std::size_t offset_;
  std::string expected_;
};

class BindError : public Error {
 public:
  explicit BindError(const std::string& what) : Error("BindError", ErrorClass::input, what) {}
};

class EvalError : public Error {
 public:
  EvalError(std::size_t offset, const std::string& what)
      : Error("EvalError", ErrorClass::numerical, what), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class DimensionMismatch : public Error {
 public:
  explicit DimensionMismatch(const std::string& what)
      : Error("DimensionMismatch", ErrorClass::input, what) {}
};

class NotPositiveDefinite : public Error {
 public:
  explicit NotPositiveDefinite(const std::string& what)
      : Error("NotPositiveDefinite", ErrorClass::numerical, what) {}
};

class NonFiniteState : public Error {
 public:
  NonFiniteState(double t, const std::string& what)
      : Error("NonFiniteState", ErrorClass::numerical, what), time_(t) {}
  double time() const noexcept { return time_; }

 private:
  double time_;
};

class StructureInvalid : public Error {
 public:
  StructureInvalid(std::string condition, const std::string& what)
      : Error("StructureInvalid", ErrorClass::structure, what), condition_(std::move(condition)) {}
  /// One of "skew", "symmetry", "psd", "params".
  const std::string& condition() const noexcept { return condition_; }

 private:
  std::string condition_;
};

class PortMismatch : public Error {
 public:
  explicit PortMismatch(const std::string& what) : Error("PortMismatch", ErrorClass::input, what) {}
};

class DegenerateData : public Error {
 public:
  explicit DegenerateData(const std::string& what)
      : Error("DegenerateData", ErrorClass::input, what) {}
};

class DegenerateGrid : public Error {
 public:
  explicit DegenerateGrid(const std::string& what)
      : Error("DegenerateGrid", ErrorClass::input, what) {}
};

class OptimizationFailed : public Error {
 public:
  explicit OptimizationFailed(const std::string& what)
      : Error("OptimizationFailed", ErrorClass::numerical, what) {}
};

/// Malformed file content; line/column are 1-based, 0 when unknown.
class ParseError : public Error {
 public:
  ParseError(std::string file, std::size_t line, std::size_t column, const std::string& what)
      : Error("ParseError", ErrorClass::input, what),
        file_(std::move(file)),
        line_(line),
        column_(column) {}
  const std::string& file() const noexcept { return file_; }
  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::string file_;
  std::size_t line_;
  std::size_t column_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("IoError", ErrorClass::input, what) {}
};

}  // namespace gpphs
