#pragma once

#include <stdexcept>
#include <string>

namespace trajdiff {

// Base for every error thrown by the toolkit. The CLI maps the subclasses
// onto exit codes (usage 1, data 2, numeric 3).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes or out-of-range indices passed to an op.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid argument values (bad step index, bad config).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Malformed or unreadable input files, corrupt checkpoints.
class DataError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced by a forward op, diverging loss, negative radicands.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace trajdiff
