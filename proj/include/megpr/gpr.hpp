#pragma once

// Conventional single-output GP regression with the squared-exponential
// kernel.  Serves two roles: the smoother that produces fixed-point
// anchors from noisy observations (including derivative estimates for
// unobserved components), and the unconstrained baseline predictor that
// the constrained model is compared against.
//
// The GP is zero-mean; hyperparameters are chosen by maximizing the
// marginal likelihood with ADAM on log-parameters.

#include <megpr/kernel.hpp>

#include <Eigen/Core>

namespace megpr {

struct GprConfig {
  int iterations = 300;
  double learning_rate = 0.05;
  double init_noise_frac = 0.1;  // sigma init as fraction of amplitude
};

struct GprModel {
  SEKernelD kernel;
  double sigma = 0.0;            // observation noise standard deviation
  double lml = 0.0;              // marginal likelihood at the optimum
  bool median_fallback = false;  // optimizer diverged; median heuristic used
};

// Maximizes the marginal likelihood over (amplitude, length scale, noise).
// Deterministic.  If the optimizer produces a non-finite objective the
// hyperparameters fall back to the median heuristic (length scale = median
// pairwise distance, amplitude = data standard deviation) and the model is
// flagged.
GprModel fit_gpr_1d(const Eigen::VectorXd& t, const Eigen::VectorXd& y,
                    const GprConfig& config = {});

// Posterior mean and pointwise variance of the order-j derivative of the
// latent function at the query times, conditioning on (t, y) under the
// given hyperparameters.
void gpr_posterior(const Eigen::VectorXd& t, const Eigen::VectorXd& y,
                   const SEKernelD& kernel, double sigma,
                   const Eigen::VectorXd& query, int order,
                   Eigen::VectorXd& mean, Eigen::VectorXd& variance);

}  // namespace megpr
