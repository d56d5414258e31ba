#pragma once

#include <stdexcept>
#include <string>

namespace pcgrpo {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument, shape, or configuration.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Raster too small for the requested tiling or mask.
class DimensionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Answer with the wrong number of slots or an out-of-vocabulary token.
class MalformedAnswer : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Policy / checkpoint schema does not match the puzzle.
class SchemaMismatch : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Randomised generation gave up after exhausting its retries.
class GenerationFailure : public Error {
 public:
  using Error::Error;
};

/// Non-finite numbers reached the optimizer.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Unparseable reply from an external judge.
class JudgeProtocolError : public Error {
 public:
  using Error::Error;
};

/// Could not reach or talk to an external judge.
class TransportError : public Error {
 public:
  using Error::Error;
};

}  // namespace pcgrpo
