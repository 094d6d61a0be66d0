#pragma once

// Piecewise linearization of nonlinear vector fields around fixed-point
// anchors.
//
// A nonlinear field f(s; theta) is replaced, on the segment owned by the
// anchor nearest in time, by its first-order Taylor expansion
//
//   f(s) ~= Jtilde s + ctilde,   Jtilde = grad f(s_k),
//   ctilde = f(s_k) - Jtilde s_k,
//
// which is exact at the anchor itself.  The resulting Jacobian entries and
// offsets become piecewise-constant-in-time operator coefficients; within
// a segment they are constants, so differential operators never
// differentiate through them.

#include <megpr/common.hpp>
#include <megpr/data.hpp>
#include <megpr/diffop.hpp>
#include <megpr/gpr.hpp>

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <vector>

namespace megpr {

// Anchor states indexed by time.  `variances` carries per-entry posterior
// variances when anchors come from a smoother (zero for raw observations);
// Monte-Carlo marginalization draws anchor tables from them.
struct FixedPointTable {
  Eigen::VectorXd times;      // sorted strictly increasing
  Eigen::MatrixXd states;     // n_anchors x D
  Eigen::MatrixXd variances;  // n_anchors x D (zero when exact)

  Eigen::Index size() const { return times.size(); }

  void validate() const {
    if (size() == 0) throw ConfigError("FixedPointTable: no anchors");
    if (states.rows() != size() ||
        (variances.size() > 0 && (variances.rows() != size() ||
                                  variances.cols() != states.cols()))) {
      throw ConfigError("FixedPointTable: inconsistent shapes");
    }
    for (Eigen::Index i = 0; i < size(); ++i) {
      require_finite(times[i], "anchor time");
      if (i > 0 && !(times[i] > times[i - 1])) {
        throw ConfigError("FixedPointTable: times must be strictly increasing");
      }
      for (Eigen::Index j = 0; j < states.cols(); ++j) {
        require_finite(states(i, j), "anchor state");
      }
    }
  }

  // Index of the anchor nearest to t; exact midpoints resolve to the left
  // (earlier) anchor.
  Eigen::Index nearest(double t) const;
};

// First-order data for a vector field: value, state Jacobian, and their
// analytic parameter gradients.
struct LinearizedField {
  int dim = 0;
  int n_params = 0;
  std::function<Eigen::VectorXd(const Eigen::VectorXd& s,
                                const Eigen::VectorXd& theta)>
      rhs;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd& s,
                                const Eigen::VectorXd& theta)>
      jacobian;
  // d f / d theta_p, columns indexed by p (dim x n_params).
  std::function<Eigen::MatrixXd(const Eigen::VectorXd& s,
                                const Eigen::VectorXd& theta)>
      rhs_param_grad;
  // d Jtilde / d theta_p, one dim x dim matrix per parameter.
  std::function<std::vector<Eigen::MatrixXd>(const Eigen::VectorXd& s,
                                             const Eigen::VectorXd& theta)>
      jacobian_param_grad;
};

// Linearization bound to an anchor table.  Jacobian entries and offsets
// are exposed as piecewise operator coefficients.
struct PiecewiseLinearization {
  LinearizedField field;
  FixedPointTable table;

  // Jtilde_{ij}(t; theta): Jacobian entry at the anchor owning t.
  Coefficient jac_coeff(int i, int j) const;

  // ctilde_i(t; theta) = f_i(s_k) - sum_j Jtilde_{ij} s_{k,j}.
  Coefficient offset_coeff(int i) const;

  // Convenience: full Jtilde and ctilde at the anchor owning t.
  Eigen::MatrixXd jacobian_at(double t, const Eigen::VectorXd& theta) const;
  Eigen::VectorXd offset_at(double t, const Eigen::VectorXd& theta) const;
};

PiecewiseLinearization linearize(LinearizedField field, FixedPointTable table);

// Anchors straight from the observations.  Every component listed in
// `required` must be fully observed; anchor variances are zero.
FixedPointTable fixed_points_from_observations(
    const Dataset& data, const std::vector<int>& required);

// How a smoother fills one component of the anchor table: either fit a GP
// to that component's own observations, or differentiate the smoother of
// another (source) component — the route for latent states defined as
// derivatives, such as the Van der Pol velocity.
struct SmootherSpec {
  struct Derived {
    int target = 0;  // component to fill
    int source = 0;  // observed component whose smoother is differentiated
    int order = 1;   // derivative order applied to the source smoother
  };
  std::vector<int> direct;      // components smoothed from their own data
  std::vector<Derived> derived;
};

// Result of the smoothing pass: the anchor table (posterior means at the
// observation times, posterior variances alongside) plus the per-component
// GP models for diagnostics.
struct SmoothedAnchors {
  FixedPointTable table;
  std::vector<GprModel> models;  // indexed by component; default where unused
  bool any_median_fallback = false;
};

SmoothedAnchors fixed_points_from_gpr(const Dataset& data,
                                      const SmootherSpec& spec,
                                      const GprConfig& config = {});

// Monte-Carlo marginalization over anchor uncertainty: draws S anchor
// tables from N(states, variances) entrywise, evaluates `inner` on each,
// and averages objective and gradient.  S = 1 with zero variances
// reproduces the deterministic path exactly.
struct McObjective {
  double objective = 0.0;
  Eigen::VectorXd gradient;
};

McObjective mc_marginalize_fixed_points(
    const FixedPointTable& table, int samples, std::uint64_t seed,
    const std::function<McObjective(const FixedPointTable&)>& inner);

}  // namespace megpr
