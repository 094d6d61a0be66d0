#pragma once

// Semi-stochastic joint maximization of the marginal likelihood over model
// parameters theta and kernel/noise hyperparameters beta.
//
// "Semi" because the data term is fixed while the constraint term is
// stochastic: every iteration keeps all n observations and re-pins the
// differential-equation residual at n_c freshly sampled times, so the
// constraint channel acts as an infinitely exchangeable regularizer
// rather than a fixed design.  ADAM runs on theta (raw, box-projected)
// and on log amplitude / log length scale / log per-channel noise.

#include <megpr/gram.hpp>
#include <megpr/sampler.hpp>
#include <megpr/system.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace megpr {

enum class ConstraintMode { uniform, rejection };

struct FitConfig {
  int iterations = 2000;
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  int n_constraints = 0;  // <= 0 means "match the observation time count"
  ConstraintMode mode = ConstraintMode::rejection;
  int refresh_every = 100;  // rejection mode: V refresh period (iterations)
  double sigma_v = 1e-4;

  std::uint64_t seed = 0;
  std::optional<Eigen::VectorXd> theta_init;  // else uniform in init range

  // Stopping: EMA of the stochastic objective (decay 0.9); stop when it
  // fails to improve by plateau_rel_tol (relative) for plateau_window
  // iterations.
  double ema_decay = 0.9;
  double plateau_rel_tol = 1e-6;
  int plateau_window = 200;

  int max_chol_retries = 5;  // per-iteration halved-step retries
  bool record_trace = true;
  double t_max = 0.0;  // <= 0 means "use the dataset window"
};

struct TraceRow {
  int iter = 0;
  double objective = 0.0;
  double grad_norm = 0.0;
  Eigen::VectorXd theta;
  double amplitude = 0.0;
  double length_scale = 0.0;
  Eigen::VectorXd sigma_y;
};

struct EstimationResult {
  Eigen::VectorXd theta;  // best-seen iterate (by smoothed objective)
  Hyper hyper;
  double objective = 0.0;        // smoothed objective at the best iterate
  double final_objective = 0.0;  // raw objective at the last iteration
  int iterations_run = 0;
  std::string stop_reason;  // "budget" or "plateau"
  Eigen::VectorXd constraint_times;  // final draw, frozen for prediction
  double sampler_acceptance = 1.0;   // last rejection-sampler rate
  int chol_retries = 0;              // halved-step retries consumed
  std::vector<TraceRow> trace;
};

// Single-model fit.
EstimationResult semi_adam_fit(const SystemModel& model, const Dataset& data,
                               const FitConfig& config);

// Ensemble fit: averages the objective and gradient over models that
// differ only in their (frozen) fixed-point anchor tables, implementing
// Monte-Carlo marginalization over anchor uncertainty.  All models must
// share parameter count and observation structure.
EstimationResult semi_adam_fit(const std::vector<SystemModel>& ensemble,
                               const Dataset& data, const FitConfig& config);

// Frozen anchor-table draws for the ensemble (entrywise Gaussian around
// the posterior means; sample 0 onward all carry noise unless variances
// are zero, in which case every draw equals the posterior mean).
std::vector<FixedPointTable> draw_anchor_tables(const FixedPointTable& table,
                                                int samples,
                                                std::uint64_t seed);

}  // namespace megpr
