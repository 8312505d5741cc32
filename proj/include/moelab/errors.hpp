// Copyright 2026 The moelab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace moelab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not satisfy an operation's shape contract.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An id or index lies outside its valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// A precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity was produced.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A ratio was requested whose denominator is zero (absent token, idle expert).
class UndefinedInputError : public Error {
 public:
  using Error::Error;
};

/// A fit could not be produced (non-convex parabola, no converged start).
class FitError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. `offset` is a byte offset or a 1-based line number,
/// depending on the format; the message says which.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Filesystem failure while reading or writing run artifacts.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace moelab
