#pragma once

// Reference ODE integration (classic RK4 with a fixed fine step) and the
// right-hand sides of the benchmark systems.  The integrator provides the
// ground truth for data generation and for mean-squared-error comparisons;
// the Jacobians supply exact first and second derivatives of trajectories,
//
//   u'  = f(x),      u'' = (grad f · f)(x)   componentwise,
//
// which the prediction tests use as derivative ground truth.

#include <megpr/common.hpp>

#include <Eigen/Core>

#include <functional>

namespace megpr {

// dx/dt = f(t, x; theta), written into dx.
using OdeRhs = std::function<void(double t, const Eigen::VectorXd& x,
                                  const Eigen::VectorXd& theta,
                                  Eigen::VectorXd& dx)>;

// State Jacobian df/dx, written into J (dim x dim).
using OdeJacobian = std::function<void(double t, const Eigen::VectorXd& x,
                                       const Eigen::VectorXd& theta,
                                       Eigen::MatrixXd& J)>;

struct OdeSystem {
  int dim = 0;
  OdeRhs rhs;
  OdeJacobian jacobian;
};

// Integrates x' = f with RK4 at fixed step `step` (default t_max / 1e4)
// and returns the trajectory at the requested grid times (sorted,
// non-negative).  Rows of the result align with grid entries.  Throws
// IntegrationError, carrying the failure time, if the state stops being
// finite.
Eigen::MatrixXd rk4_integrate(const OdeSystem& sys,
                              const Eigen::VectorXd& theta,
                              const Eigen::VectorXd& x0,
                              const Eigen::VectorXd& grid,
                              double step = 0.0);

// First derivatives along a trajectory: row i is f(t_i, x_i).
Eigen::MatrixXd ode_first_derivatives(const OdeSystem& sys,
                                      const Eigen::VectorXd& theta,
                                      const Eigen::MatrixXd& traj,
                                      const Eigen::VectorXd& grid);

// Second derivatives along a trajectory: row i is J(t_i, x_i) f(t_i, x_i)
// (valid for autonomous systems, which all benchmark systems are).
Eigen::MatrixXd ode_second_derivatives(const OdeSystem& sys,
                                       const Eigen::VectorXd& theta,
                                       const Eigen::MatrixXd& traj,
                                       const Eigen::VectorXd& grid);

// x1' = -th1 x1;  x2' = th1 x1 - th2 x2;  x3' = th2 x2.
OdeSystem linear_chain_ode();

// u' = w;  w' = th (1 - u^2) w - u.
OdeSystem van_der_pol_ode();

// x1' = th3 (x1 - x1^3/3 + x2);  x2' = -(x1 - th1 + th2 x2) / th3.
OdeSystem fitzhugh_nagumo_ode();

}  // namespace megpr
