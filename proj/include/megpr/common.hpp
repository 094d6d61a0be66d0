#pragma once

// Shared error taxonomy and deterministic RNG stream derivation.
//
// Every failure the toolkit can produce maps onto one of the exception
// types below; the CLI translates ConfigError into exit code 2 and the
// numerical family into exit code 3.

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace megpr {

// Base class for all toolkit errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration, CLI arguments, or malformed input files.
struct ConfigError : Error {
  using Error::Error;
};

// Base class for runtime numerical failures.
struct NumericalError : Error {
  using Error::Error;
};

// Non-finite or otherwise out-of-domain numeric input.
struct DomainError : NumericalError {
  using NumericalError::NumericalError;
};

// Requested derivative order exceeds the supported maximum.
struct UnsupportedOrderError : NumericalError {
  using NumericalError::NumericalError;
};

// Gram matrix failed Cholesky factorization even at the jitter cap.
// Carries the parameter values that produced the failure so callers can
// report actionable diagnostics.
struct IllConditionedError : NumericalError {
  IllConditionedError(const std::string& msg, Eigen::VectorXd theta_in,
                      Eigen::VectorXd hyper_in)
      : NumericalError(msg),
        theta(std::move(theta_in)),
        hyper(std::move(hyper_in)) {}
  explicit IllConditionedError(const std::string& msg) : NumericalError(msg) {}

  Eigen::VectorXd theta;  // model parameters at failure (may be empty)
  Eigen::VectorXd hyper;  // kernel/noise hyperparameters at failure
};

// Numerical integration blew up; carries the time of failure.
struct IntegrationError : NumericalError {
  IntegrationError(const std::string& msg, double t_in)
      : NumericalError(msg), t(t_in) {}
  double t = 0.0;
};

// Rejection sampler exceeded its proposal budget with negligible acceptance.
struct SamplerStarvationError : NumericalError {
  using NumericalError::NumericalError;
};

// Optimizer aborted after exhausting its retry schedule.
struct FitAbortError : NumericalError {
  using NumericalError::NumericalError;
};

inline void require_finite(double x, const char* what) {
  if (!std::isfinite(x)) {
    throw DomainError(std::string("non-finite value for ") + what);
  }
}

// --- Deterministic RNG streams -------------------------------------------
//
// All stochastic components draw from std::mt19937_64 engines seeded
// through split_seed, so a master seed plus a stream index fully determines
// every draw.  Trials, initialization, and constraint sampling each get
// their own stream, which keeps results independent of execution order.

// SplitMix64 step; decorrelates consecutive stream indices.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Derives an independent child seed from a master seed and stream index.
inline std::uint64_t split_seed(std::uint64_t master, std::uint64_t stream) {
  return splitmix64(master ^ splitmix64(stream));
}

inline std::mt19937_64 make_rng(std::uint64_t master, std::uint64_t stream) {
  return std::mt19937_64(split_seed(master, stream));
}

}  // namespace megpr
