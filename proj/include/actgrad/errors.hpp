#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace actgrad {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);

/// Two operands (or an operand and a contract) disagree on shape.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& what, const Shape& lhs, const Shape& rhs);
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}

  const Shape& lhs() const noexcept { return lhs_; }
  const Shape& rhs() const noexcept { return rhs_; }

 private:
  Shape lhs_;
  Shape rhs_;
};

/// An operation was invoked out of order (backward before forward, stale cache).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A caller-supplied value is outside the operation's domain.
class ValueError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or unreadable input files (dataset batches, checkpoints, CSVs).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace actgrad
