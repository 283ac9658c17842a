#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sew {

// Shape mismatch between operands or against a layer's expectation.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values, divergence, tolerance breaches.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Misuse of the computation graph (backward on a consumed tape, ...).
struct GraphError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Values outside an operation's domain (e.g. non-binary spike trains).
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration (bad keys, invalid parameter combinations).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File I/O and format violations.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Architecture-string rejection; carries the character offset.
struct ArchParseError : std::runtime_error {
  ArchParseError(const std::string& msg, std::size_t position)
      : std::runtime_error(msg + " (at position " + std::to_string(position) + ")"),
        pos(position) {}
  std::size_t pos;
};

}  // namespace sew
