#pragma once

#include <stdexcept>
#include <string>

namespace gmfg {

// Invalid argument or coordinate (maps to CLI exit code 2).
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

// Requested feature not available for the given input (exit code 2).
struct CapabilityError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Config or input validation failure (exit code 2).
struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Numerical breakdown: non-finite states, singular systems, blow-up (exit code 3).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Iteration did not converge (exit code 3).
struct ConvergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Two solutions were not produced from the same noise and cannot be compared.
struct CouplingError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace gmfg
