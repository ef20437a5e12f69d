#pragma once

#include <stdexcept>
#include <string>

namespace ragbias {

// Base for all harness errors. Fatal conditions throw; recoverable
// row-level problems are collected into reject reports instead.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Unreadable or malformed input files, schema mismatches.
class InputError : public Error {
 public:
  using Error::Error;
};

// Bad run configuration: missing assets, empty grids, invalid values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Network-layer failure that survived the retry budget.
class TransportError : public Error {
 public:
  using Error::Error;
};

// A metric was requested on an empty denominator.
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

// A structural invariant was violated (index/collection mismatch, etc.).
class InvariantError : public Error {
 public:
  using Error::Error;
};

}  // namespace ragbias
