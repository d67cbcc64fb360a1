#ifndef SPINNET_ERRORS_HPP
#define SPINNET_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace spinnet {

/// Argument outside the domain of a closed-form expression (negative density, P >= 1, ...).
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Caller combined inputs that the operation does not accept (mixed-species pair, bad dims).
class MisuseError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Random network generation could not satisfy its constraints within the retry budget.
class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Curve fitting failed or the data cannot determine the model.
class FitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical failure in an integrator or eigensolver.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid run configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace spinnet

#endif  // SPINNET_ERRORS_HPP
