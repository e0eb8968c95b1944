#pragma once

#include <stdexcept>
#include <string>

namespace reptrfd {

// Dimension or layout mismatch between operands.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Index or parameter outside its admissible interval.
struct RangeError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

// Invalid model/task configuration. The message lists every violation.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Non-finite values, non-convergence or degenerate numerics.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Misuse of an API contract (e.g. backward from a non-scalar node).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// Malformed, truncated or unsupported file content.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Text parse failure; the message cites the offending line.
struct ParseError : FormatError {
  using FormatError::FormatError;
};

} // namespace reptrfd
