#pragma once

// Dynamical systems expressed as differential-operator relations on a
// single latent component.
//
// One component u of the state is modeled as a GP; every other observable
// component is expressed as a linear differential operator applied to u,
// and the dynamics themselves collapse to a single constraint operator
// L_v with (L_v u)(t) = 0 along solutions.  Nonlinear systems first pass
// through piecewise linearization, which makes the operator coefficients
// piecewise constants in time (anchored at fixed points) while keeping
// them smooth functions of the parameters.

#include <megpr/data.hpp>
#include <megpr/diffop.hpp>
#include <megpr/linearize.hpp>
#include <megpr/ode.hpp>

#include <Eigen/Core>

#include <optional>
#include <string>
#include <vector>

namespace megpr {

struct SystemModel {
  std::string name;
  int dim = 0;
  int latent = 0;  // index of the component modeled directly as the GP

  // Operator mapping u to each component; disengaged where the component
  // is not expressible through a differential operator (such components
  // cannot carry observation channels).
  std::vector<std::optional<DiffOperator>> component_ops;

  // L_v: the embedded differential equation, (L_v u)(t) = 0 on solutions.
  DiffOperator constraint_op;

  std::vector<std::string> param_names;
  Eigen::VectorXd lower_bounds;  // feasibility box for the optimizer
  Eigen::VectorXd upper_bounds;
  Eigen::VectorXd init_lo;  // default initialization range
  Eigen::VectorXd init_hi;

  int n_params() const { return int(param_names.size()); }

  void validate() const {
    if (dim <= 0 || int(component_ops.size()) != dim) {
      throw ConfigError("SystemModel: component operator list must match dim");
    }
    if (latent < 0 || latent >= dim || !component_ops[size_t(latent)]) {
      throw ConfigError("SystemModel: latent component must have an operator");
    }
    if (constraint_op.terms.empty() || constraint_op.max_order() < 1) {
      throw ConfigError("SystemModel: constraint operator must differentiate");
    }
    if (lower_bounds.size() != n_params() ||
        upper_bounds.size() != n_params()) {
      throw ConfigError("SystemModel: bounds must match parameter count");
    }
  }
};

// --- Benchmark system registry --------------------------------------------

struct SystemInfo {
  std::string name;
  int dim = 0;
  int n_params = 0;
  int latent = 0;
  Eigen::VectorXd default_theta;      // benchmark ground truth
  Eigen::VectorXd default_x0;         // benchmark initial state
  double default_t_max = 10.0;
  std::vector<int> observed_default;  // components observed in the benchmark
  bool needs_linearization = false;
  std::vector<int> anchor_components;  // states the linearization reads
  SmootherSpec smoother;               // how a smoother fills the anchors
};

// Known names: "linear-chain", "van-der-pol", "fitzhugh-nagumo".
const SystemInfo& system_info(const std::string& name);
std::vector<std::string> system_names();
OdeSystem system_ode(const std::string& name);

// First-order Taylor data for the nonlinear benchmark fields.
LinearizedField van_der_pol_field();
LinearizedField fitzhugh_nagumo_field();

// x1' = -th1 x1, x2' = th1 x1 - th2 x2, x3' = th2 x2, with u := x2.
// x1 = (u' + th2 u)/th1; x3 has no operator form and is left disengaged;
// constraint u'' + (th1 + th2) u' + th1 th2 u = 0.
SystemModel build_linear_chain();

// u'' = th (1 - u^2) u' - u with u := position.  Requires anchors for
// (u, u'); the velocity is the order-1 operator of u and the constraint
// comes from linearizing the nonlinear damping around the anchors.
SystemModel build_van_der_pol(const FixedPointTable& anchors);

// FitzHugh-Nagumo with u := x1; x2 is recovered by inverting the
// linearized first equation and the constraint embeds the second.
SystemModel build_fitzhugh_nagumo(const FixedPointTable& anchors);

SystemModel build_system(const std::string& name,
                         const FixedPointTable* anchors = nullptr);

// --- Model preparation ------------------------------------------------------
//
// Chooses the fixed-point route for a dataset: raw observations when the
// noise level is at most 5% of the pooled dynamic range and every state
// the Jacobian reads is observed; the GPR smoother otherwise.  Smoothing
// flattens trajectory extremes, and linearized coefficients that square
// the state inherit that shrinkage as parameter bias, so raw anchors win
// whenever the noise is small enough for them.

struct PrepOptions {
  std::optional<double> noise_sigma;  // known observation noise, if any
  bool force_smoother = false;
  GprConfig gpr;
};

struct PreparedModel {
  SystemModel model;
  FixedPointTable anchors;       // empty (size 0) for linear systems
  bool used_smoother = false;
  bool smoother_fallback = false;
  std::vector<GprModel> smoother_models;
};

PreparedModel prepare_model(const std::string& system, const Dataset& data,
                            const PrepOptions& opts = {});

// --- Stacking ---------------------------------------------------------------
//
// The joint GP observation vector stacks, component-major and time-minor,
// every observed entry of each operator-expressible component, followed by
// the constraint block (one zero-valued row per constraint time).

struct StackedLayout {
  std::vector<int> row_comp;      // component index per row; -1 = constraint
  std::vector<int> row_index;     // obs rows: dataset time index; constraint
                                  // rows: index into the constraint times
  Eigen::VectorXd row_times;      // evaluation time per row
  std::vector<int> channels;      // observed components, ascending
  int n_obs = 0;
  int n_con = 0;

  int rows() const { return n_obs + n_con; }

  // Position of a component in `channels` (for per-channel noise).
  int channel_slot(int comp) const {
    for (size_t i = 0; i < channels.size(); ++i) {
      if (channels[i] == comp) return int(i);
    }
    return -1;
  }
};

StackedLayout make_layout(const SystemModel& model, const Dataset& data,
                          const Eigen::VectorXd& constraint_times);

// Operator governing one stacked row (component operator or L_v).
const DiffOperator& row_operator(const SystemModel& model,
                                 const StackedLayout& layout, int row);

// Centered observation vector z: observed value minus the operator offset
// for data rows, zero minus the constraint offset for constraint rows.
Eigen::VectorXd center_observations(const SystemModel& model,
                                    const Dataset& data,
                                    const StackedLayout& layout,
                                    const Eigen::VectorXd& theta);

// dz/dtheta (rows x p): offsets are the only theta-dependent part of z.
Eigen::MatrixXd center_observations_grad(const SystemModel& model,
                                         const Dataset& data,
                                         const StackedLayout& layout,
                                         const Eigen::VectorXd& theta);

}  // namespace megpr
