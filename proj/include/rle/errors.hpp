#pragma once

#include <stdexcept>
#include <string>

namespace rle {

/// Mismatched dimensions or malformed inputs (caller bug or bad file).
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A precondition on values was violated (sigma out of range, bad config).
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Training or evaluation produced non-finite numbers, or a flow scale net
/// left its guarded range. The CLI maps this to exit code 3.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rle
