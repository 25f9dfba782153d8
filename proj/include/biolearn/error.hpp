#pragma once

#include <stdexcept>
#include <string>

namespace biolearn {

// Base of every error the library throws. The CLI maps subclasses onto exit
// codes (see cli.hpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand dimensions do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A caller-supplied parameter is outside its documented range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// An on-disk artifact is malformed (bad magic, truncation, checksum).
class FormatError : public Error {
 public:
  using Error::Error;
};

// A dataset file is missing or fails its checksum.
class DataError : public Error {
 public:
  using Error::Error;
};

// A computation produced NaN/Inf or failed to converge.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Input values are outside the support of the requested operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

// The input is degenerate for the operation (all-zero matrix, constant
// sample, too few live units).
class DegenerateError : public DomainError {
 public:
  using DomainError::DomainError;
};

}  // namespace biolearn
