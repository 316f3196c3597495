#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace spectree {

// Requested rank or shape is incompatible with a matrix.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite data or a numerically singular quantity.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A scalar argument is outside the domain of a formula.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// The random model generator exhausted its retry budget.
class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A tree violates the structural invariants of a latent tree.
class StructureError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Bad user configuration (unknown mode, inconsistent flags).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Leaf label sets of two trees differ.
class LabelMismatchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed input file. Line and field are 1-based; 0 means "not applicable".
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t field)
      : std::runtime_error(format_message(what, line, field)), line_(line), field_(field) {}

  std::size_t line() const { return line_; }
  std::size_t field() const { return field_; }

 private:
  static std::string format_message(const std::string& what, std::size_t line, std::size_t field) {
    std::string msg = "parse error";
    if (line > 0) msg += " at line " + std::to_string(line);
    if (field > 0) msg += ", field " + std::to_string(field);
    return msg + ": " + what;
  }

  std::size_t line_;
  std::size_t field_;
};

// An internal invariant was violated. Indicates a bug, not bad input.
class DefectError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace spectree
