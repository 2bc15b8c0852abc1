#ifndef HOMLAB_ERRORS_HPP
#define HOMLAB_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace homlab {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad or unknown configuration (unknown preset, resolution rule, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Misuse of an API (wrong grid kind, mismatched grids).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Non-finite coefficient sample during assembly.
class AssemblyError : public Error {
 public:
  AssemblyError(const std::string& what, long cell) : Error(what), cell_(cell) {}
  long cell() const noexcept { return cell_; }

 private:
  long cell_;
};

/// Iterative solver failure; carries the last relative residual.
class SolverError : public Error {
 public:
  SolverError(const std::string& what, double residual, bool breakdown)
      : Error(what), residual_(residual), breakdown_(breakdown) {}
  double residual() const noexcept { return residual_; }
  /// True when the operator showed non-positive curvature.
  bool breakdown() const noexcept { return breakdown_; }

 private:
  double residual_;
  bool breakdown_;
};

/// Periodic problem whose right-hand side is not mean-zero.
class CompatibilityError : public Error {
 public:
  using Error::Error;
};

/// L_eps is not positive definite at the requested epsilon.
class CoercivityError : public Error {
 public:
  CoercivityError(const std::string& what, double lambda1) : Error(what), lambda1_(lambda1) {}
  double lambda1() const noexcept { return lambda1_; }

 private:
  double lambda1_;
};

class SpectralError : public Error {
 public:
  SpectralError(const std::string& what, double worst_residual)
      : Error(what), worst_residual_(worst_residual) {}
  double worst_residual() const noexcept { return worst_residual_; }

 private:
  double worst_residual_;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

}  // namespace homlab

#endif  // HOMLAB_ERRORS_HPP
