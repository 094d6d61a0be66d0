#include <megpr/ode.hpp>

#include <cmath>
#include <string>

namespace megpr {

Eigen::MatrixXd rk4_integrate(const OdeSystem& sys,
                              const Eigen::VectorXd& theta,
                              const Eigen::VectorXd& x0,
                              const Eigen::VectorXd& grid, double step) {
  if (sys.dim <= 0 || !sys.rhs) {
    throw ConfigError("rk4_integrate: system has no right-hand side");
  }
  if (x0.size() != sys.dim) {
    throw ConfigError("rk4_integrate: initial state dimension mismatch");
  }
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    require_finite(grid[i], "integration grid time");
    if (grid[i] < 0.0 || (i > 0 && grid[i] < grid[i - 1])) {
      throw ConfigError("rk4_integrate: grid must be sorted and >= 0");
    }
  }

  const double t_end = grid.size() > 0 ? grid[grid.size() - 1] : 0.0;
  double h = step > 0.0 ? step : (t_end > 0.0 ? t_end / 1e4 : 1e-4);

  Eigen::MatrixXd out(grid.size(), sys.dim);
  Eigen::VectorXd x = x0;
  Eigen::VectorXd k1(sys.dim), k2(sys.dim), k3(sys.dim), k4(sys.dim),
      xt(sys.dim);
  double t = 0.0;

  auto rk4_step = [&](double dt) {
    sys.rhs(t, x, theta, k1);
    xt = x + 0.5 * dt * k1;
    sys.rhs(t + 0.5 * dt, xt, theta, k2);
    xt = x + 0.5 * dt * k2;
    sys.rhs(t + 0.5 * dt, xt, theta, k3);
    xt = x + dt * k3;
    sys.rhs(t + dt, xt, theta, k4);
    x += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    t += dt;
    if (!x.allFinite()) {
      throw IntegrationError(
          "rk4_integrate: state became non-finite at t=" + std::to_string(t),
          t);
    }
  };

  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    // March in whole steps of h, then a short final step landing exactly
    // on the grid time.
    while (t + h < grid[i] - 1e-12 * (1.0 + grid[i])) rk4_step(h);
    const double rem = grid[i] - t;
    if (rem > 1e-14 * (1.0 + grid[i])) rk4_step(rem);
    out.row(i) = x.transpose();
  }
  return out;
}

Eigen::MatrixXd ode_first_derivatives(const OdeSystem& sys,
                                      const Eigen::VectorXd& theta,
                                      const Eigen::MatrixXd& traj,
                                      const Eigen::VectorXd& grid) {
  Eigen::MatrixXd out(traj.rows(), traj.cols());
  Eigen::VectorXd x(sys.dim), dx(sys.dim);
  for (Eigen::Index i = 0; i < traj.rows(); ++i) {
    x = traj.row(i).transpose();
    sys.rhs(grid[i], x, theta, dx);
    out.row(i) = dx.transpose();
  }
  return out;
}

Eigen::MatrixXd ode_second_derivatives(const OdeSystem& sys,
                                       const Eigen::VectorXd& theta,
                                       const Eigen::MatrixXd& traj,
                                       const Eigen::VectorXd& grid) {
  if (!sys.jacobian) {
    throw ConfigError("ode_second_derivatives: system has no Jacobian");
  }
  Eigen::MatrixXd out(traj.rows(), traj.cols());
  Eigen::VectorXd x(sys.dim), dx(sys.dim);
  Eigen::MatrixXd J(sys.dim, sys.dim);
  for (Eigen::Index i = 0; i < traj.rows(); ++i) {
    x = traj.row(i).transpose();
    sys.rhs(grid[i], x, theta, dx);
    sys.jacobian(grid[i], x, theta, J);
    out.row(i) = (J * dx).transpose();
  }
  return out;
}

OdeSystem linear_chain_ode() {
  OdeSystem sys;
  sys.dim = 3;
  sys.rhs = [](double, const Eigen::VectorXd& x, const Eigen::VectorXd& th,
               Eigen::VectorXd& dx) {
    dx[0] = -th[0] * x[0];
    dx[1] = th[0] * x[0] - th[1] * x[1];
    dx[2] = th[1] * x[1];
  };
  sys.jacobian = [](double, const Eigen::VectorXd&, const Eigen::VectorXd& th,
                    Eigen::MatrixXd& J) {
    J.setZero();
    J(0, 0) = -th[0];
    J(1, 0) = th[0];
    J(1, 1) = -th[1];
    J(2, 1) = th[1];
  };
  return sys;
}

OdeSystem van_der_pol_ode() {
  OdeSystem sys;
  sys.dim = 2;
  sys.rhs = [](double, const Eigen::VectorXd& x, const Eigen::VectorXd& th,
               Eigen::VectorXd& dx) {
    dx[0] = x[1];
    dx[1] = th[0] * (1.0 - x[0] * x[0]) * x[1] - x[0];
  };
  sys.jacobian = [](double, const Eigen::VectorXd& x,
                    const Eigen::VectorXd& th, Eigen::MatrixXd& J) {
    J(0, 0) = 0.0;
    J(0, 1) = 1.0;
    J(1, 0) = -2.0 * th[0] * x[0] * x[1] - 1.0;
    J(1, 1) = th[0] * (1.0 - x[0] * x[0]);
  };
  return sys;
}

OdeSystem fitzhugh_nagumo_ode() {
  OdeSystem sys;
  sys.dim = 2;
  sys.rhs = [](double, const Eigen::VectorXd& x, const Eigen::VectorXd& th,
               Eigen::VectorXd& dx) {
    dx[0] = th[2] * (x[0] - x[0] * x[0] * x[0] / 3.0 + x[1]);
    dx[1] = -(x[0] - th[0] + th[1] * x[1]) / th[2];
  };
  sys.jacobian = [](double, const Eigen::VectorXd& x,
                    const Eigen::VectorXd& th, Eigen::MatrixXd& J) {
    J(0, 0) = th[2] * (1.0 - x[0] * x[0]);
    J(0, 1) = th[2];
    J(1, 0) = -1.0 / th[2];
    J(1, 1) = -th[1] / th[2];
  };
  return sys;
}

}  // namespace megpr
