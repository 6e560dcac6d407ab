#pragma once

#include <stdexcept>
#include <string>

namespace flowcausal {

// Base class for every error raised by the library. The CLI maps the
// subclasses onto its exit codes, so new error kinds should derive from one
// of the categories below rather than from Error directly.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller broke a documented precondition (empty batch, n < 2, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Operand shapes do not agree.
class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

// Argument outside the domain of a function (t outside [0,1], ...).
class DomainError : public ContractError {
 public:
  using ContractError::ContractError;
};

// Input file or config does not match the expected schema.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// A value in an otherwise well-formed input is not admissible.
class ValueError : public SchemaError {
 public:
  using SchemaError::SchemaError;
};

// Configuration file or flag problem.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Non-finite values during generation, training or integration.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace flowcausal
