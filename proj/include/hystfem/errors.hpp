#pragma once

#include <stdexcept>
#include <string>

namespace hystfem {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent mesh input.
class MeshError : public Error {
 public:
  using Error::Error;
};

/// Polarization outside the open saturation disk |J| < J_s.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Gate fluxes that do not sum to zero, or a boundary that does not
/// alternate between walls and gates.
class FluxBalanceError : public Error {
 public:
  using Error::Error;
};

class LinearSolverError : public Error {
 public:
  using Error::Error;
};

/// Iterative solver gave up. `residual` carries the last residual measure.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace hystfem
