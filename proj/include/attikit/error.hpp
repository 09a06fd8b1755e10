#pragma once

#include <stdexcept>
#include <string>

namespace attikit {

// Base class for all attikit errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Matrix passed to uncross() is not antisymmetric within tolerance.
class NotAntisymmetric : public Error {
 public:
  using Error::Error;
};

// Matrix cannot be projected onto SO(3) (det <= 0) or violates the
// rotation invariants where a valid rotation is required.
class NotProperRotation : public Error {
 public:
  using Error::Error;
};

// A noisy vector measurement collapsed to (near) zero length.
class DegenerateVector : public Error {
 public:
  using Error::Error;
};

// Eigenvalue gaps too small: the distinct-eigenvalue hypothesis fails
// (e.g. fewer than two non-parallel reference vectors).
class DegenerateEigenvalues : public Error {
 public:
  using Error::Error;
};

// Observation/gyro model violates its invariants.
class InvalidModel : public Error {
 public:
  using Error::Error;
};

// A gain matrix failed its (semi)definiteness check.
class GainNotPositiveDefinite : public Error {
 public:
  using Error::Error;
};

// Filter operation requires a covariance the state does not carry.
class CovarianceMissing : public Error {
 public:
  using Error::Error;
};

// Covariance lost positive definiteness (or symmetry beyond repair);
// the classic MEKF numerical-divergence failure mode.
class CovarianceNotPD : public Error {
 public:
  using Error::Error;
};

// Iteration failed to reach its residual tolerance.
class NoConvergence : public Error {
 public:
  using Error::Error;
};

// Exponential-stability certificate search exhausted its grid.
class NoCertificateFound : public Error {
 public:
  using Error::Error;
};

// Filter state became non-finite during a simulation run.
class DivergenceDetected : public Error {
 public:
  using Error::Error;
};

// Configuration document failed schema validation.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace attikit
