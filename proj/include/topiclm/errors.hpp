#pragma once

#include <stdexcept>
#include <string>

namespace topiclm {

// Shape or dimension disagreement between tensors.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed corpus input (bad JSON, bad field types).
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Structurally valid input that violates a domain invariant
// (overlapping mention spans, out-of-range span bounds).
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad run configuration (odd batch size, tau <= 0, missing paths).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Checkpoint load failures, distinguishable by kind.
struct CheckpointError : std::runtime_error {
  enum class Kind { io, bad_magic, bad_version, truncated, shape_mismatch };
  Kind kind;
  CheckpointError(Kind k, const std::string& msg)
      : std::runtime_error(msg), kind(k) {}
};

}  // namespace topiclm
