#pragma once

#include <stdexcept>
#include <string>

namespace gxe {

// Bad argument values (non-finite temperatures, lambda outside [0,1], ...).
class InvalidInputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Problems with supplied data: malformed CSV, unknown labels, empty bins,
// constant feature rows, non-PSD matrices, infeasible designs.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke a documented precondition (wrong parameter layout,
// unstandardized features, nonpositive variance parameter).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Factorization failures and other breakdowns of the linear algebra.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gxe
