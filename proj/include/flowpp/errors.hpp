#pragma once

#include <stdexcept>
#include <string>

namespace flowpp {

/// Non-finite state, singular step or any other breakdown of the numerics.
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The Jacobian (or its inverse action) collapsed to zero volume.
class SingularJacobian : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

/// All particle weights underflowed after normalization.
class DegenerateEnsemble : public NumericalFailure {
 public:
  DegenerateEnsemble(const std::string& what, int level)
      : NumericalFailure(what), level_(level) {}
  int level() const noexcept { return level_; }

 private:
  int level_;
};

/// Malformed or out-of-range configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace flowpp
