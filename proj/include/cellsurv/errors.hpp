#pragma once

#include <stdexcept>
#include <string>

namespace cellsurv {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Argument outside an operation's mathematical domain (e.g. log of a non-positive value).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Input too small or empty for the operation to be defined.
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

// API misuse: calling an operation outside its lifetime or precondition contract.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Overflow or non-finite value produced from finite inputs.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Malformed input files.
class DataError : public Error {
 public:
  using Error::Error;
};

// Well-formed data that violates a cohort invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace cellsurv
