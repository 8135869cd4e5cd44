// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace seqfuse {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes or feature dimensions disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A precondition on an argument value does not hold.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input data (manifests, checkpoints, specs).
class DataError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf appeared where only finite values are allowed.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss or parameter.
class DivergenceError : public NumericError {
 public:
  using NumericError::NumericError;
};

/// Lookup of a record, session or camera failed.
class NotFoundError : public Error {
 public:
  using Error::Error;
};

/// Request conflicts with current state (e.g. confirming a camera twice).
class ConflictError : public Error {
 public:
  using Error::Error;
};

}  // namespace seqfuse
