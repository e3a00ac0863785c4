#pragma once

#include <stdexcept>
#include <string>

namespace ecdiff {

/// Invalid configuration value or out-of-range parameter.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Tensor shapes that must agree do not.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Timestep or element index outside the valid range.
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Malformed trace file: bad magic, unsupported version, truncation.
class TraceFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A replay predictor was queried at a step the trace does not hold.
class MissingStepError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An error-ledger computation was asked for a cycle the trace does not cover.
class IncompleteTraceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Experiment configuration could not be parsed or validated.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ecdiff
