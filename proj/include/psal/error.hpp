#ifndef PSAL_ERROR_HPP
#define PSAL_ERROR_HPP

#include <stdexcept>
#include <string>

namespace psal {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor or image shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Caller violated an operation precondition.
class UsageError : public Error {
 public:
  using Error::Error;
};

// A numeric parameter is out of its legal range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Metric is undefined for the given input (e.g. zero-variance map for NSS).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

// Checkpoint or config does not match what the reader expects.
class CompatibilityError : public Error {
 public:
  using Error::Error;
};

// Truncated or malformed file.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace psal

#endif  // PSAL_ERROR_HPP
