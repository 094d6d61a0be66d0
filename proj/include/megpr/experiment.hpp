#pragma once

// Repeated-trial experiment driver: synthesizes datasets along reference
// trajectories, runs independent fits with per-trial RNG streams, and
// aggregates mean/SD statistics (plus optional predictor-vs-baseline MSE
// comparisons) into reports that serialize deterministically.

#include <megpr/fit.hpp>
#include <megpr/io.hpp>
#include <megpr/predict.hpp>
#include <megpr/system.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace megpr {

// How fit_dataset picks the starting parameters when the config carries
// no explicit ones: a uniform draw from the initialization box, or the
// gradient-matching guess (see init_guess.hpp).
enum class InitMode { uniform, constraint_match };

// Everything a single fit needs beyond the dataset: optimizer settings,
// anchor-marginalization width, and optional box overrides.
struct FitOptions {
  FitConfig config;
  InitMode init_mode = InitMode::uniform;
  int mc_anchor_samples = 1;  // >1: ensemble fit over anchor-table draws
  std::optional<Eigen::VectorXd> theta_lower;  // box override (both or none)
  std::optional<Eigen::VectorXd> theta_upper;
  PrepOptions prep;
};

// Reads the shared estimator keys (iterations, learning_rate,
// n_constraints, constraint_mode, sigma_v, seed, theta_init, theta_bounds,
// refresh_every, ...) from a flat config.
FitOptions fit_options_from_config(const Config& cfg);

// Prepares the model for the dataset (anchor route included) and runs the
// fit; fills *prep_out with the prepared model when non-null.
EstimationResult fit_dataset(const std::string& system, const Dataset& data,
                             const FitOptions& opts,
                             PreparedModel* prep_out = nullptr);

struct ExperimentSpec {
  std::string name = "experiment";
  std::string system;
  std::vector<int> n_values;        // observation counts (grid axis 1)
  std::vector<double> sigma_values; // noise levels (grid axis 2)
  int trials = 100;
  Eigen::VectorXd theta_true;  // defaults to the registry ground truth
  Eigen::VectorXd x0;          // defaults to the registry initial state
  double t_max = 0.0;          // <= 0: registry default
  std::uint64_t seed = 1;
  FitOptions fit;

  bool compute_mse = false;  // predictor/ODE/GPR MSE block (first cell)
  int mse_grid = 200;        // dense truth-grid size for the MSE block
  int workers = 0;           // trial concurrency; 0 = hardware

  void validate() const;
  static ExperimentSpec from_config(const Config& cfg);
};

struct MseRow {
  int order = 0;       // derivative order of the latent component
  double model = 0.0;  // constrained predictor
  double ode = 0.0;    // reference integration at the estimate
  double gpr = 0.0;    // unconstrained GPR baseline
};

struct CellReport {
  int n = 0;
  double sigma = 0.0;
  Eigen::MatrixXd theta_rows;  // trials x p; NaN rows for failed trials
  std::vector<int> failed;     // failed trial indices, ascending
  Eigen::VectorXd mean;        // over successful trials
  Eigen::VectorXd sd;          // sample SD (ddof = 1); zero if single trial
  bool single_trial = false;
  double mean_iterations = 0.0;
  std::vector<MseRow> mse;  // empty unless the MSE block ran on this cell
};

struct ExperimentReport {
  ExperimentSpec spec;
  std::vector<CellReport> cells;
  // Posterior curves behind the MSE rows (orders 0..2); transient, not
  // serialized into reports.
  std::vector<PosteriorCurve> mse_curves;
};

// Reference trajectory at n evenly spaced midpoint times in (0, t_max),
// observed components masked per the system registry, iid Gaussian noise
// added to observed entries.  Deterministic under `seed`.
Dataset generate_dataset(const std::string& system, int n, double sigma,
                         const Eigen::VectorXd& theta,
                         const Eigen::VectorXd& x0, double t_max,
                         std::uint64_t seed);

// Recomputes mean/sd/single_trial from theta_rows and failed.
void aggregate_cell(CellReport& cell);

// Runs the full (n x sigma) grid.  Trials use independent RNG streams
// derived from the spec seed by (cell, trial) index, so results do not
// depend on the worker count.  A cell with more than 20% failed trials
// aborts the experiment.
ExperimentReport run_experiment(const ExperimentSpec& spec);

// Deterministic serializations.  The CSV form is the canonical one:
// parse_report_csv restores every serialized field, and re-emitting the
// parsed report reproduces the input byte for byte.
std::string emit_report_csv(const ExperimentReport& report);
ExperimentReport parse_report_csv(const std::string& text);
std::string emit_report_json(const ExperimentReport& report);
std::string emit_report_markdown(const ExperimentReport& report);

// Compares a report's cells against the built-in reference statistics
// (benchmark tables); cells without a reference are skipped.  One line of
// text per gate, "[PASS]"/"[FAIL]"/"[SKIP]" prefixed.
struct CheckResult {
  bool passed = true;
  std::vector<std::string> lines;
};
CheckResult check_report(const ExperimentReport& report);

}  // namespace megpr
