#pragma once

#include <stdexcept>
#include <string>

namespace salref {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad arguments or inconsistent inputs (dims mismatch, empty ROI, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents (bad magic, truncated header).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Recognized but unsupported file variant (datatype, endianness, gzip).
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

// Numerically degenerate input (constant region for z-scoring).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

// A texture family has no valid support (isolated voxel, no pairs).
class FeatureUndefinedError : public Error {
 public:
  using Error::Error;
};

// Training produced NaN loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Rejection sampling could not place the requested geometry.
class CapacityError : public Error {
 public:
  using Error::Error;
};

// Metric denominator is zero (or every bootstrap resample was).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace salref
