#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <megpr/ode.hpp>
#include <megpr/sampler.hpp>

#include "testutil.hpp"

#include <cmath>

using namespace megpr;
using testutil::rel_err;

namespace {

// Chain-reaction setup with data confined to [0, 5] inside a [0, 10]
// window, so the potential has an obvious data-starved half.
struct Setup {
  SystemModel model = build_linear_chain();
  Dataset data;
  Eigen::VectorXd theta;
  Hyper hyper;
  double t_max = 10.0;

  Setup() {
    const Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(30, 0.1, 4.9);
    const Eigen::MatrixXd x = rk4_integrate(
        linear_chain_ode(), Eigen::Vector2d(1.0, 1.0),
        Eigen::Vector3d(1.0, 0.0, 0.0), grid);
    data.times = grid;
    data.values = Eigen::MatrixXd::Constant(
        30, 3, std::numeric_limits<double>::quiet_NaN());
    data.present = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::
        Constant(30, 3, false);
    data.values.col(1) = x.col(1);
    data.present.col(1) = true;
    data.t_max = t_max;

    theta = Eigen::Vector2d(1.0, 1.0);
    hyper.kernel = SEKernelD{0.3, 1.0};
    hyper.noise.obs_noise = Eigen::VectorXd::Constant(1, 0.05);
    hyper.noise.constraint_reg = 1e-4;
  }
};

}  // namespace

TEST_CASE("potential stays above the regularizer floor and below eta") {
  Setup s;
  PotentialEvaluator pot(s.model, s.data, s.theta, s.hyper, s.t_max);
  CHECK(pot.sigma_v2() == doctest::Approx(1e-8));
  CHECK(pot.eta() > pot.sigma_v2());

  const Eigen::VectorXd ts = Eigen::VectorXd::LinSpaced(64, 0.0, s.t_max);
  const Eigen::VectorXd v = pot.batch(ts);
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    CHECK(v[i] >= pot.sigma_v2() - 1e-8 * pot.eta());
    CHECK(v[i] <= pot.eta() * (1.0 + 1e-8));
  }
}

TEST_CASE("far from the data the potential recovers the prior envelope") {
  Setup s;
  PotentialEvaluator pot(s.model, s.data, s.theta, s.hyper, s.t_max);
  // The chain-reaction constraint has constant coefficients, so the prior
  // term is flat and eta equals it; at 50 length scales the data
  // correction is gone.
  CHECK(rel_err(pot(50.0), pot.eta()) < 0.01);
}

TEST_CASE("the potential is low where data pins the constraint") {
  Setup s;
  PotentialEvaluator pot(s.model, s.data, s.theta, s.hyper, s.t_max);
  CHECK(pot(2.5) < 0.5 * pot(9.0));

  // The acceptance probability exp(-(V - sigma_v^2)/((eta - sigma_v^2)/4))
  // is near one where the data pin the residual (low V) and near exp(-4)
  // in the data-starved half, so draws concentrate where the data live.
  auto rng = make_rng(123, 0);
  const ConstraintSet set = sample_constraints_rejection(
      s.model, s.data, s.theta, s.hyper, s.t_max, 400, rng);
  REQUIRE(set.times.size() == 400);
  int late = 0;
  for (Eigen::Index i = 0; i < set.times.size(); ++i) {
    if (set.times[i] > 5.0) ++late;
  }
  CHECK(late < 100);
  CHECK(set.acceptance_rate > 0.0);
  CHECK(set.acceptance_rate <= 1.0);
  for (Eigen::Index i = 1; i < set.times.size(); ++i) {
    CHECK(set.times[i] >= set.times[i - 1]);
  }
}

TEST_CASE("the gridded cache tracks the exact potential") {
  Setup s;
  PotentialEvaluator pot(s.model, s.data, s.theta, s.hyper, s.t_max);
  GriddedPotential grid(pot, s.t_max);

  CHECK(grid.eta() == pot.eta());
  CHECK(grid.sigma_v2() == pot.sigma_v2());
  // Exact at the nodes, close in between.
  for (int i : {0, 100, 256, 512}) {
    const double t = s.t_max * double(i) / 512.0;
    CHECK(rel_err(grid(t), pot(t), 1e-14) < 1e-10);
  }
  auto rng = make_rng(5, 0);
  std::uniform_real_distribution<double> unif(0.0, s.t_max);
  for (int i = 0; i < 100; ++i) {
    const double t = unif(rng);
    CHECK(std::abs(grid(t) - pot(t)) < 0.01 * pot.eta());
  }
}

TEST_CASE("flat potentials give the analytic acceptance rates") {
  const double sigma_v2 = 1e-8;
  const double eta = sigma_v2 + 4.0;

  SUBCASE("at the floor every proposal is accepted") {
    auto rng = make_rng(7, 0);
    const ConstraintSet set = sample_constraints_rejection(
        [&](double) { return sigma_v2; }, sigma_v2, eta, 10.0, 5000, rng);
    CHECK(set.acceptance_rate == 1.0);
  }

  SUBCASE("at the envelope the rate settles near exp(-4)") {
    auto rng = make_rng(8, 0);
    const int n_c = 2000;
    const ConstraintSet set = sample_constraints_rejection(
        [&](double) { return eta; }, sigma_v2, eta, 10.0, n_c, rng);
    const double q = std::exp(-4.0);
    // Proposal count ~ NegBinomial; 3 standard errors on the rate.
    const double se = q * std::sqrt((1.0 - q) / double(n_c));
    CHECK(std::abs(set.acceptance_rate - q) < 3.0 * se);
  }

  SUBCASE("a degenerate envelope accepts everything") {
    auto rng = make_rng(9, 0);
    const ConstraintSet set = sample_constraints_rejection(
        [&](double) { return sigma_v2; }, sigma_v2, sigma_v2, 10.0, 100, rng);
    CHECK(set.acceptance_rate == 1.0);
  }
}

TEST_CASE("a potential far above its envelope starves the sampler") {
  const double sigma_v2 = 1e-8;
  const double eta = sigma_v2 + 4.0;  // scale = 1
  auto rng = make_rng(10, 0);
  CHECK_THROWS_AS(sample_constraints_rejection(
                      [&](double) { return sigma_v2 + 60.0; }, sigma_v2, eta,
                      10.0, 1, rng),
                  SamplerStarvationError);
}

TEST_CASE("uniform sampling is seeded, sorted, and unbiased") {
  auto rng1 = make_rng(21, 0);
  auto rng2 = make_rng(21, 0);
  const ConstraintSet a = sample_constraints_uniform(10.0, 50, rng1);
  const ConstraintSet b = sample_constraints_uniform(10.0, 50, rng2);
  CHECK(a.times == b.times);
  CHECK(a.acceptance_rate == 1.0);
  for (Eigen::Index i = 1; i < a.times.size(); ++i) {
    CHECK(a.times[i] >= a.times[i - 1]);
  }

  auto rng3 = make_rng(22, 0);
  const int big = 100000;
  const ConstraintSet c = sample_constraints_uniform(10.0, big, rng3);
  const double se = (10.0 / std::sqrt(12.0)) / std::sqrt(double(big));
  CHECK(std::abs(c.times.mean() - 5.0) < 3.0 * se);

  auto rng4 = make_rng(23, 0);
  CHECK_THROWS_AS(sample_constraints_uniform(10.0, 0, rng4), ConfigError);
  CHECK_THROWS_AS(sample_constraints_uniform(0.0, 5, rng4), ConfigError);
}

TEST_CASE("rejection sampling is reproducible for a fixed seed") {
  Setup s;
  auto rng1 = make_rng(31, 1);
  auto rng2 = make_rng(31, 1);
  const ConstraintSet a = sample_constraints_rejection(
      s.model, s.data, s.theta, s.hyper, s.t_max, 25, rng1);
  const ConstraintSet b = sample_constraints_rejection(
      s.model, s.data, s.theta, s.hyper, s.t_max, 25, rng2);
  CHECK(a.times == b.times);
  CHECK(a.acceptance_rate == b.acceptance_rate);
}
