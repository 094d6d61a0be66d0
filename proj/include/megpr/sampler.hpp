#pragma once

// Constraint-time sampling.
//
// Each optimizer iteration pins the differential-equation residual to zero
// at a fresh batch of times.  Uniform sampling draws them from
// U(0, t_max).  Potential-guided rejection sampling concentrates them
// where the constraint channel is least determined by the data: the
// potential
//
//   V(t) = k_vv(t,t) + sigma_v^2 - k_vx(t) (K_xx + noise)^{-1} k_xv(t)
//
// is the posterior variance of the residual given the observations alone,
// and proposals t ~ U(0, t_max) are accepted with probability
//
//   q(t) = exp( -(V(t) - sigma_v^2) / ((eta - sigma_v^2)/4) ),
//
// where eta bounds V from above (max over a 512-point grid of the prior
// term).  V ranges over [sigma_v^2, eta], so q ranges over [e^-4, 1].

#include <megpr/gram.hpp>
#include <megpr/system.hpp>

#include <Eigen/Core>

#include <functional>
#include <random>

namespace megpr {

// Times at which the residual is pinned to zero; at least one.
struct ConstraintSet {
  Eigen::VectorXd times;         // sorted ascending
  double acceptance_rate = 1.0;  // 1 for uniform draws

  void validate() const {
    if (times.size() < 1) {
      throw ConfigError("ConstraintSet: need at least one constraint time");
    }
    for (Eigen::Index i = 0; i < times.size(); ++i) {
      require_finite(times[i], "constraint time");
    }
  }
};

// Posterior variance of the constraint channel given observations only,
// factorized once and evaluated at many times.
class PotentialEvaluator {
 public:
  PotentialEvaluator(const SystemModel& model, const Dataset& data,
                     const Eigen::VectorXd& theta, const Hyper& hyper,
                     double t_max);

  // V(t), the potential above (includes sigma_v^2 on the prior term).
  double operator()(double t) const;

  // V at a batch of times (vectorized path, one linear solve).
  Eigen::VectorXd batch(const Eigen::VectorXd& ts) const;

  // Upper envelope of V: max over a 512-point grid of k_vv(t,t)+sigma_v^2.
  double eta() const { return eta_; }
  double sigma_v2() const { return sigma_v2_; }

 private:
  SystemModel model_;
  StackedLayout layout_;
  Eigen::VectorXd theta_;
  SEKernelD kernel_;
  double sigma_v2_ = 0.0;
  double eta_ = 0.0;
  CholResult chol_;
  RowCoeffs coeffs_;  // observation-row coefficients, reused per query
};

// Piecewise-linear cache of V on a uniform grid.  The optimizer refreshes
// V only periodically, and between refreshes proposals are scored against
// this cache: V is smooth, so a dense grid changes acceptance
// probabilities negligibly while making each proposal O(1) instead of a
// full linear solve.
class GriddedPotential {
 public:
  GriddedPotential(const PotentialEvaluator& pot, double t_max,
                   int grid_points = 512);

  double operator()(double t) const;
  double eta() const { return eta_; }
  double sigma_v2() const { return sigma_v2_; }

 private:
  double t_max_;
  double eta_;
  double sigma_v2_;
  Eigen::VectorXd values_;  // V at grid nodes, 0..t_max inclusive
};

ConstraintSet sample_constraints_uniform(double t_max, int n_c,
                                         std::mt19937_64& rng);

// Functional core: accepts any potential.  Throws SamplerStarvationError
// if 1e6 proposals pass with acceptance below 1e-4.
ConstraintSet sample_constraints_rejection(
    const std::function<double(double)>& potential, double sigma_v2,
    double eta, double t_max, int n_c, std::mt19937_64& rng);

// Convenience overload building the evaluator from the model.
ConstraintSet sample_constraints_rejection(const SystemModel& model,
                                           const Dataset& data,
                                           const Eigen::VectorXd& theta,
                                           const Hyper& hyper, double t_max,
                                           int n_c, std::mt19937_64& rng);

}  // namespace megpr
