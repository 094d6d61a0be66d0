#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <megpr/experiment.hpp>
#include <megpr/ode.hpp>
#include <megpr/predict.hpp>

#include "testutil.hpp"

#include <cmath>

using namespace megpr;

namespace {

Hyper make_hyper(double a, double l, double sigma_y, double sigma_v) {
  Hyper h;
  h.kernel = SEKernelD{a, l};
  h.noise.obs_noise = Eigen::VectorXd::Constant(1, sigma_y);
  h.noise.constraint_reg = sigma_v;
  return h;
}

// Noiseless chain-reaction setup conditioned at the true parameters.
struct ChainSetup {
  SystemModel model = build_linear_chain();
  Dataset data;
  Eigen::VectorXd theta;
  Hyper hyper = make_hyper(0.25, 1.0, 1e-4, 1e-4);
  Eigen::VectorXd con_times = Eigen::VectorXd::LinSpaced(40, 0.1, 9.9);

  ChainSetup() {
    theta = Eigen::Vector2d(1.0, 1.0);
    data = generate_dataset("linear-chain", 30, 0.0, theta,
                            Eigen::Vector3d(1.0, 0.0, 0.0), 10.0, 5);
  }
};

}  // namespace

TEST_CASE("the posterior interpolates noiseless observations") {
  SystemModel m = build_linear_chain();
  Dataset d;
  d.times = Eigen::VectorXd::LinSpaced(5, 0.0, 8.0);
  d.values = Eigen::MatrixXd::Constant(
      5, 3, std::numeric_limits<double>::quiet_NaN());
  d.present = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(
      5, 3, false);
  for (int i = 0; i < 5; ++i) {
    d.values(i, 1) = std::sin(d.times[i]);
    d.present(i, 1) = true;
  }
  d.t_max = 8.0;

  Eigen::VectorXd theta(2);
  theta << 1.0, 1.0;
  const Hyper h = make_hyper(1.0, 1.5, 1e-8, 1e-4);
  const PosteriorCurve c = predict(m, d, Eigen::VectorXd(), theta, h, 1, 0,
                                   d.times);
  CHECK(c.component == 1);
  CHECK(c.order == 0);
  for (int i = 0; i < 5; ++i) {
    CHECK(std::abs(c.mean[i] - d.values(i, 1)) < 1e-6);
    CHECK(c.variance[i] >= 0.0);
    CHECK(c.variance[i] < 1e-6);
  }
}

TEST_CASE("derivative curves differentiate the value curve") {
  ChainSetup s;
  const Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(401, 0.0, 10.0);
  const PosteriorCurve u =
      predict(s.model, s.data, s.con_times, s.theta, s.hyper, 1, 0, grid);
  const PosteriorCurve du =
      predict(s.model, s.data, s.con_times, s.theta, s.hyper, 1, 1, grid);

  const double h = grid[1] - grid[0];
  const double scale = du.mean.cwiseAbs().maxCoeff();
  double worst = 0.0;
  for (int i = 1; i + 1 < grid.size(); ++i) {
    const double fd = (u.mean[i + 1] - u.mean[i - 1]) / (2.0 * h);
    worst = std::max(worst, std::abs(fd - du.mean[i]));
  }
  CHECK(worst < 0.01 * scale);
}

TEST_CASE("component curves are operator transforms of the latent curve") {
  ChainSetup s;
  const Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(50, 0.0, 10.0);
  const PosteriorCurve x1 =
      predict(s.model, s.data, s.con_times, s.theta, s.hyper, 0, 0, grid);
  const PosteriorCurve u =
      predict(s.model, s.data, s.con_times, s.theta, s.hyper, 1, 0, grid);
  const PosteriorCurve du =
      predict(s.model, s.data, s.con_times, s.theta, s.hyper, 1, 1, grid);

  // x1 = (u' + th2 u)/th1 must hold exactly for the posterior means.
  for (int i = 0; i < grid.size(); ++i) {
    const double want = (du.mean[i] + s.theta[1] * u.mean[i]) / s.theta[0];
    CHECK(std::abs(x1.mean[i] - want) < 1e-8);
  }
}

TEST_CASE("the embedded equation pins the predicted residual near zero") {
  ChainSetup s;
  const Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(120, 0.0, 10.0);
  const PosteriorCurve v = predict_operator(
      s.model, s.data, s.con_times, s.theta, s.hyper, s.model.constraint_op,
      grid);
  CHECK(v.component == -1);
  // Residual scale: prior sd of the constraint channel.
  const double prior_sd = std::sqrt(op_cov(s.model.constraint_op,
                                           s.model.constraint_op,
                                           s.hyper.kernel, 5.0, 5.0, s.theta));
  for (int i = 0; i < grid.size(); ++i) {
    // The mean is pinned at the 40 constraint times and may overshoot a
    // couple of percent of the prior scale between them.
    CHECK(std::abs(v.mean[i]) < 0.03 * prior_sd);
    CHECK(v.variance[i] >= 0.0);
    CHECK(v.variance[i] <=
          op_cov(s.model.constraint_op, s.model.constraint_op, s.hyper.kernel,
                 grid[i], grid[i], s.theta) +
              1e-10);
  }
}

TEST_CASE("constraints only ever shrink the posterior variance") {
  ChainSetup s;
  const Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(60, 0.0, 10.0);
  const PosteriorCurve with = predict(s.model, s.data, s.con_times, s.theta,
                                      s.hyper, 1, 0, grid);
  const PosteriorCurve without = predict(s.model, s.data, Eigen::VectorXd(),
                                         s.theta, s.hyper, 1, 0, grid);
  for (int i = 0; i < grid.size(); ++i) {
    CHECK(with.variance[i] <= without.variance[i] + 1e-8);
  }
}

TEST_CASE("the baseline is plain GP regression") {
  ChainSetup s;
  Eigen::VectorXd t, y;
  s.data.observed_series(1, t, y);
  const Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(30, 0.0, 10.0);

  const PosteriorCurve base = gpr_baseline(t, y, grid, 1);
  const GprModel gm = fit_gpr_1d(t, y);
  Eigen::VectorXd mean, var;
  gpr_posterior(t, y, gm.kernel, gm.sigma, grid, 1, mean, var);
  CHECK(base.mean == mean);
  CHECK(base.variance == var);
  CHECK(base.order == 1);

  // An unconstrained prediction through the joint model with the same
  // hyperparameters matches the plain GP posterior.
  Hyper h = make_hyper(gm.kernel.amplitude, gm.kernel.length_scale, gm.sigma,
                       1e-4);
  const PosteriorCurve joint =
      predict(s.model, s.data, Eigen::VectorXd(), s.theta, h, 1, 0, grid);
  Eigen::VectorXd mean0, var0;
  gpr_posterior(t, y, gm.kernel, gm.sigma, grid, 0, mean0, var0);
  for (int i = 0; i < grid.size(); ++i) {
    CHECK(std::abs(joint.mean[i] - mean0[i]) < 1e-8);
    CHECK(std::abs(joint.variance[i] - var0[i]) < 1e-8);
  }
}

TEST_CASE("invalid queries are rejected") {
  ChainSetup s;
  const Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(5, 0.0, 10.0);
  CHECK_THROWS_AS(predict(s.model, s.data, s.con_times, s.theta, s.hyper, 3,
                          0, grid),
                  ConfigError);
  CHECK_THROWS_AS(predict(s.model, s.data, s.con_times, s.theta, s.hyper, 2,
                          0, grid),
                  ConfigError);  // x3 has no operator form
  CHECK_THROWS_AS(predict(s.model, s.data, s.con_times, s.theta, s.hyper, 1,
                          5, grid),
                  UnsupportedOrderError);
  Eigen::VectorXd mean, var;
  Eigen::VectorXd t, y;
  s.data.observed_series(1, t, y);
  CHECK_THROWS_AS(gpr_posterior(t, y, s.hyper.kernel, 0.1, grid, 5, mean, var),
                  UnsupportedOrderError);
}

TEST_CASE("reference integration ground truths") {
  SUBCASE("exponential decay") {
    OdeSystem sys;
    sys.dim = 1;
    sys.rhs = [](double, const Eigen::VectorXd& x, const Eigen::VectorXd&,
                 Eigen::VectorXd& dx) { dx[0] = -x[0]; };
    sys.jacobian = [](double, const Eigen::VectorXd&, const Eigen::VectorXd&,
                      Eigen::MatrixXd& J) { J(0, 0) = -1.0; };
    const Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(7, 0.0, 3.0);
    const Eigen::MatrixXd x = rk4_integrate(
        sys, Eigen::VectorXd(), Eigen::VectorXd::Ones(1), grid);
    for (int i = 0; i < grid.size(); ++i) {
      CHECK(std::abs(x(i, 0) - std::exp(-grid[i])) < 1e-9);
    }

    const Eigen::MatrixXd dx = ode_first_derivatives(sys, Eigen::VectorXd(),
                                                     x, grid);
    const Eigen::MatrixXd ddx = ode_second_derivatives(sys, Eigen::VectorXd(),
                                                       x, grid);
    CHECK(std::abs(dx(2, 0) + x(2, 0)) < 1e-12);
    CHECK(std::abs(ddx(2, 0) - x(2, 0)) < 1e-12);
  }

  SUBCASE("chain reaction at equal rates has the closed form t e^{-t}") {
    Eigen::VectorXd grid(3);
    grid << 1.0, 5.0, 10.0;
    const Eigen::MatrixXd x = rk4_integrate(
        linear_chain_ode(), Eigen::Vector2d(1.0, 1.0),
        Eigen::Vector3d(1.0, 0.0, 0.0), grid, 1e-3);
    for (int i = 0; i < 3; ++i) {
      CHECK(std::abs(x(i, 1) - grid[i] * std::exp(-grid[i])) < 1e-6);
    }
    // Second derivative of x2 at t=0 is -th1^2 x1 - th2 (th1 x1 - th2 x2).
    Eigen::VectorXd zero(1);
    zero << 0.0;
    const Eigen::MatrixXd x0 = rk4_integrate(
        linear_chain_ode(), Eigen::Vector2d(1.0, 1.0),
        Eigen::Vector3d(1.0, 0.0, 0.0), zero);
    const Eigen::MatrixXd ddx = ode_second_derivatives(
        linear_chain_ode(), Eigen::Vector2d(1.0, 1.0), x0, zero);
    CHECK(std::abs(ddx(0, 1) + 2.0) < 1e-12);
  }

  SUBCASE("Van der Pol stays on its bounded limit cycle") {
    const Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(100, 0.0, 20.0);
    const Eigen::MatrixXd x = rk4_integrate(
        van_der_pol_ode(), Eigen::VectorXd::Constant(1, 0.5),
        Eigen::Vector2d(2.0, 0.0), grid);
    CHECK(x.col(0).cwiseAbs().maxCoeff() <= 3.0);
    CHECK(x.col(0).cwiseAbs().maxCoeff() >= 1.5);
  }

  SUBCASE("a finite-time blow-up raises an integration error") {
    OdeSystem sys;
    sys.dim = 1;
    sys.rhs = [](double, const Eigen::VectorXd& x, const Eigen::VectorXd&,
                 Eigen::VectorXd& dx) { dx[0] = x[0] * x[0]; };
    sys.jacobian = [](double, const Eigen::VectorXd& x,
                      const Eigen::VectorXd&, Eigen::MatrixXd& J) {
      J(0, 0) = 2.0 * x[0];
    };
    Eigen::VectorXd grid(2);
    grid << 0.0, 2.0;
    CHECK_THROWS_AS(rk4_integrate(sys, Eigen::VectorXd(),
                                  Eigen::VectorXd::Ones(1), grid),
                    IntegrationError);
  }
}
