#pragma once

#include <stdexcept>
#include <string>

namespace citekit {

// Thrown when matrix/sequence dimensions do not line up. The message names
// both offending shapes.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Thrown for out-of-range values (labels, probabilities, negative losses).
class DomainError : public std::runtime_error {
 public:
  explicit DomainError(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when a computation produces or consumes non-finite values.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Thrown by file loaders on malformed content. Carries the 1-based line
// (or record) number when known.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error(what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Thrown when loaded data violates a declared invariant.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace citekit
