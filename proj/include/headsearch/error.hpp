#pragma once

#include <stdexcept>
#include <string>

namespace headsearch {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not conform.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A scalar was required (e.g. backward on a non-scalar loss).
class RankError : public ShapeError {
 public:
  using ShapeError::ShapeError;
};

// Batch too small for the requested statistic (BN with B=1, NT-Xent with B=1).
class DegenerateBatchError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ZeroNormError : public NumericError {
 public:
  using NumericError::NumericError;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed on-disk data (dataset records, checkpoints, genotype files).
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace headsearch
