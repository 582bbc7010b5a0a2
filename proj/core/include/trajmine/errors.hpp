#pragma once

#include <stdexcept>
#include <string>

namespace trajmine {

// Root of every error the library throws. Subclasses map onto CLI exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input table lacks a required column.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// Input rows violate a data invariant (ordering, duplicates).
class DataError : public Error {
 public:
  using Error::Error;
};

// A caller-supplied argument is outside its documented domain.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Non-finite value, lost positive-definiteness, or similar.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A metric is undefined for the given inputs (e.g. division by a zero error).
class MetricError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A pipeline stage ran before the stage producing its inputs, or inputs came
// from a different configuration.
class PrerequisiteError : public Error {
 public:
  using Error::Error;
};

}  // namespace trajmine
