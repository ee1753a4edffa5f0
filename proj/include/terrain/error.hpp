#pragma once

#include <stdexcept>
#include <string>

namespace terrain {

/// Operand dimensions do not agree.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A value is outside the domain an operation accepts.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A configuration document has a missing, unknown or out-of-range field.
/// The message starts with the dotted field path.
class ConfigError : public ArgumentError {
 public:
  using ArgumentError::ArgumentError;
};

/// Training produced a non-finite loss or gradient.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// On-disk data (manifest, sample file, checkpoint) is malformed or missing.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace terrain
