#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <megpr/kernel.hpp>

#include "testutil.hpp"

#include <Eigen/Eigenvalues>

#include <random>

using namespace megpr;
using testutil::rel_err;
using testutil::se_deriv_fd;
using testutil::se_deriv_scale;

TEST_CASE("base kernel values") {
  SEKernelD k{1.0, 1.0};
  CHECK(se_eval_deriv(k, 0, 0, 0.0, 0.0) == doctest::Approx(1.0));
  // Odd derivative at zero separation vanishes by symmetry.
  CHECK(se_eval_deriv(k, 1, 0, 0.0, 0.0) == doctest::Approx(0.0));
  // Diagonal is amplitude^2 at any t.
  SEKernelD k2{3.0, 0.7};
  CHECK(se_eval_deriv(k2, 0, 0, 5.1, 5.1) == doctest::Approx(9.0));
  // d/dt k at unit separation: -r phi(r) for unit hyperparameters.
  CHECK(se_eval_deriv(k, 1, 0, 1.0, 0.0) ==
        doctest::Approx(-std::exp(-0.5)));
  // cov(u', u') at zero separation is a^2 / l^2.
  SEKernelD k3{2.0, 0.5};
  CHECK(se_eval_deriv(k3, 1, 1, 2.0, 2.0) == doctest::Approx(4.0 / 0.25));
}

TEST_CASE("Hermite recurrence closed forms") {
  const auto he = hermite_sequence(2.0, 4);
  CHECK(he[0] == doctest::Approx(1.0));
  CHECK(he[1] == doctest::Approx(2.0));
  CHECK(he[2] == doctest::Approx(3.0));    // r^2 - 1
  CHECK(he[3] == doctest::Approx(2.0));    // r^3 - 3r
  CHECK(he[4] == doctest::Approx(-5.0));   // r^4 - 6r^2 + 3
}

TEST_CASE("derivatives match the single-step finite-difference recursion") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> ut(-3.0, 3.0);
  std::uniform_real_distribution<double> ua(0.5, 2.5);
  std::uniform_real_distribution<double> ul(0.4, 2.0);

  for (int m = 0; m <= kMaxDerivOrder; ++m) {
    for (int n = 0; n <= kMaxDerivOrder; ++n) {
      for (int probe = 0; probe < 25; ++probe) {
        SEKernelD k{ua(rng), ul(rng)};
        const double t = ut(rng);
        const double t2 = ut(rng);
        const double got = se_eval_deriv(k, m, n, t, t2);
        const double want = se_deriv_fd(k, m, n, t, t2);
        const double guard = 1e-8 * se_deriv_scale(k, m + n);
        CAPTURE(m);
        CAPTURE(n);
        CAPTURE(t);
        CAPTURE(t2);
        CHECK(rel_err(got, want, guard) < 1e-6);
      }
    }
  }
}

TEST_CASE("spec probe at (2,2)") {
  SEKernelD k{1.0, 1.0};
  const double got = se_eval_deriv(k, 2, 2, 0.3, -0.4);
  const double want = se_deriv_fd(k, 2, 2, 0.3, -0.4);
  CHECK(rel_err(got, want) < 1e-6);
}

TEST_CASE("hyperparameter gradients") {
  SUBCASE("diagonal value and amplitude partial") {
    SEKernelD k{2.0, 1.0};
    const auto g = se_eval_hyper_grad(k, 0, 0, 1.3, 1.3);
    CHECK(g.value == doctest::Approx(4.0));
    CHECK(g.d_amplitude == doctest::Approx(4.0));
    CHECK(g.d_length_scale == doctest::Approx(0.0));
  }
  SUBCASE("length-scale partial vs finite differences, spec probe") {
    SEKernelD k{1.0, 0.5};
    const auto g = se_eval_hyper_grad(k, 0, 0, 0.0, 1.0);
    const double h = 1e-5;
    const double fd = (se_eval_deriv(SEKernelD{1.0, 0.5 + h}, 0, 0, 0.0, 1.0) -
                       se_eval_deriv(SEKernelD{1.0, 0.5 - h}, 0, 0, 0.0, 1.0)) /
                      (2 * h);
    CHECK(rel_err(g.d_length_scale, fd) < 1e-5);
  }
  SUBCASE("all outputs vs finite differences at (1,1)") {
    SEKernelD k{1.0, 1.0};
    const auto g = se_eval_hyper_grad(k, 1, 1, 0.0, 0.7);
    CHECK(g.value == doctest::Approx(se_eval_deriv(k, 1, 1, 0.0, 0.7)));
    const double h = 1e-5;
    const double fd_a =
        (se_eval_deriv(SEKernelD{1.0 + h, 1.0}, 1, 1, 0.0, 0.7) -
         se_eval_deriv(SEKernelD{1.0 - h, 1.0}, 1, 1, 0.0, 0.7)) /
        (2 * h);
    const double fd_l =
        (se_eval_deriv(SEKernelD{1.0, 1.0 + h}, 1, 1, 0.0, 0.7) -
         se_eval_deriv(SEKernelD{1.0, 1.0 - h}, 1, 1, 0.0, 0.7)) /
        (2 * h);
    CHECK(rel_err(g.d_amplitude, fd_a) < 1e-5);
    CHECK(rel_err(g.d_length_scale, fd_l) < 1e-5);
  }
  SUBCASE("random probes across orders") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> ut(-2.0, 2.0);
    std::uniform_real_distribution<double> ua(0.5, 2.0);
    std::uniform_real_distribution<double> ul(0.5, 1.5);
    std::uniform_int_distribution<int> uo(0, kMaxDerivOrder);
    for (int probe = 0; probe < 100; ++probe) {
      SEKernelD k{ua(rng), ul(rng)};
      const int m = uo(rng), n = uo(rng);
      const double t = ut(rng), t2 = ut(rng);
      const auto g = se_eval_hyper_grad(k, m, n, t, t2);
      const double h = 1e-6;
      SEKernelD kap = k, kam = k, klp = k, klm = k;
      kap.amplitude += h;
      kam.amplitude -= h;
      klp.length_scale += h;
      klm.length_scale -= h;
      const double fd_a = (se_eval_deriv(kap, m, n, t, t2) -
                           se_eval_deriv(kam, m, n, t, t2)) /
                          (2 * h);
      const double fd_l = (se_eval_deriv(klp, m, n, t, t2) -
                           se_eval_deriv(klm, m, n, t, t2)) /
                          (2 * h);
      const double guard = 1e-6 * se_deriv_scale(k, m + n);
      CAPTURE(m);
      CAPTURE(n);
      CHECK(rel_err(g.d_amplitude, fd_a, guard) < 1e-4);
      CHECK(rel_err(g.d_length_scale, fd_l, guard / k.length_scale) < 1e-4);
    }
  }
}

TEST_CASE("symmetry and sign properties") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ut(-3.0, 3.0);
  SEKernelD k{1.3, 0.8};
  for (int probe = 0; probe < 50; ++probe) {
    const double t = ut(rng), t2 = ut(rng);
    for (int m = 0; m <= kMaxDerivOrder; ++m) {
      for (int n = 0; n <= kMaxDerivOrder; ++n) {
        // Adjoint symmetry of the cross-covariance.
        CHECK(se_eval_deriv(k, m, n, t, t2) ==
              doctest::Approx(se_eval_deriv(k, n, m, t2, t)));
      }
    }
    // Stationarity: d/dt k = -d/dt' k.
    CHECK(se_eval_deriv(k, 1, 0, t, t2) ==
          doctest::Approx(-se_eval_deriv(k, 0, 1, t, t2)));
  }
}

TEST_CASE("derivative Gram matrices are numerically PSD") {
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> ut(0.0, 10.0);
  std::uniform_int_distribution<int> uo(0, 2);
  SEKernelD k{1.0, 1.2};
  for (int rep = 0; rep < 5; ++rep) {
    const int n = 12;
    Eigen::VectorXd times(n);
    std::vector<int> orders(n);
    for (int i = 0; i < n; ++i) {
      times[i] = ut(rng);
      orders[size_t(i)] = uo(rng);
    }
    Eigen::MatrixXd K(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        K(i, j) = se_eval_deriv(k, orders[size_t(i)], orders[size_t(j)],
                                times[i], times[j]);
      }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(K);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-8 * K.trace());
  }
}

TEST_CASE("vectorized derivative tables match the scalar evaluator") {
  SEKernelD k{1.7, 0.9};
  Eigen::VectorXd rows(4), cols(3);
  rows << 0.0, 0.5, 1.5, 4.0;
  cols << -1.0, 0.25, 2.0;
  SEDerivTable table;
  table.build(k, rows, cols, 2 * kMaxDerivOrder, true);

  for (int m = 0; m <= kMaxDerivOrder; ++m) {
    for (int n = 0; n <= kMaxDerivOrder; ++n) {
      const double sign = (m % 2 == 0) ? 1.0 : -1.0;
      for (Eigen::Index i = 0; i < rows.size(); ++i) {
        for (Eigen::Index j = 0; j < cols.size(); ++j) {
          const double want = se_eval_deriv(k, m, n, rows[i], cols[j]);
          CHECK(sign * table.dq[size_t(m + n)](i, j) ==
                doctest::Approx(want).epsilon(1e-12));
          const auto g = se_eval_hyper_grad(k, m, n, rows[i], cols[j]);
          CHECK(sign * table.dlen_q[size_t(m + n)](i, j) ==
                doctest::Approx(g.d_length_scale).epsilon(1e-10));
        }
      }
    }
  }
}

TEST_CASE("domain and order errors") {
  SEKernelD k{1.0, 1.0};
  CHECK_THROWS_AS(se_eval_deriv(k, kMaxDerivOrder + 1, 0, 0.0, 0.0),
                  UnsupportedOrderError);
  CHECK_THROWS_AS(se_eval_deriv(k, 0, -1, 0.0, 0.0), UnsupportedOrderError);
  CHECK_THROWS_AS(
      se_eval_deriv(k, 0, 0, std::numeric_limits<double>::quiet_NaN(), 0.0),
      DomainError);
  SEKernelD bad{-1.0, 1.0};
  CHECK_THROWS_AS(se_eval_deriv(bad, 0, 0, 0.0, 0.0), DomainError);
  SEKernelD bad2{1.0, 0.0};
  CHECK_THROWS_AS(se_eval_deriv(bad2, 0, 0, 0.0, 0.0), DomainError);
}

TEST_CASE("noise spec validation") {
  NoiseSpec noise;
  noise.obs_noise = Eigen::VectorXd::Constant(2, 0.1);
  CHECK_NOTHROW(noise.validate());
  noise.obs_noise[1] = -0.5;
  CHECK_THROWS_AS(noise.validate(), DomainError);
}
