#include <megpr/gpr.hpp>

#include <megpr/adam.hpp>
#include <megpr/chol.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

namespace megpr {

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  std::nth_element(v.begin(), v.begin() + mid - 1, v.end());
  return 0.5 * (v[mid - 1] + hi);
}

double sample_std(const Eigen::VectorXd& y) {
  if (y.size() < 2) return 1.0;
  const double mu = y.mean();
  return std::sqrt((y.array() - mu).square().sum() / double(y.size() - 1));
}

double median_pairwise_distance(const Eigen::VectorXd& t) {
  std::vector<double> d;
  d.reserve(size_t(t.size()) * (t.size() - 1) / 2);
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    for (Eigen::Index j = i + 1; j < t.size(); ++j) {
      d.push_back(std::abs(t[i] - t[j]));
    }
  }
  double m = median(std::move(d));
  return m > 0.0 ? m : 1.0;
}

double median_gap(const Eigen::VectorXd& t) {
  std::vector<double> gaps;
  gaps.reserve(size_t(std::max<Eigen::Index>(t.size() - 1, 0)));
  for (Eigen::Index i = 1; i < t.size(); ++i) gaps.push_back(t[i] - t[i - 1]);
  double m = median(std::move(gaps));
  return m > 0.0 ? m : 1.0;
}

// Marginal likelihood and its gradient in (log a, log l, log sigma).
// Returns false if anything came out non-finite.
bool lml_and_grad(const Eigen::VectorXd& t, const Eigen::VectorXd& y,
                  const Eigen::Vector3d& logp, double& value,
                  Eigen::Vector3d& grad) {
  SEKernelD k{std::exp(logp[0]), std::exp(logp[1])};
  const double sigma = std::exp(logp[2]);
  const Eigen::Index n = t.size();

  SEDerivTable tab;
  tab.build(k, t, t, 0, true);
  Eigen::MatrixXd K = tab.dq[0].matrix();
  K.diagonal().array() += sigma * sigma;

  CholResult ch;
  try {
    ch = chol_with_jitter(K);
  } catch (const IllConditionedError&) {
    return false;
  }
  Eigen::VectorXd alpha = ch.llt.solve(y);
  value = -0.5 * y.dot(alpha) - 0.5 * ch.log_det -
          0.5 * double(n) * std::log(2.0 * std::numbers::pi);
  if (!std::isfinite(value)) return false;

  Eigen::MatrixXd W = ch.llt.solve(Eigen::MatrixXd::Identity(n, n));
  // d/d log a: dK = 2 a^2 Phi = 2 (K - sigma^2 I - jitter I).
  {
    Eigen::MatrixXd dK = tab.dq[0].matrix() * 2.0;
    grad[0] = 0.5 * alpha.dot(dK * alpha) - 0.5 * (W.array() * dK.array()).sum();
  }
  // d/d log l: dK = l * dlen.
  {
    Eigen::MatrixXd dK = tab.dlen_q[0].matrix() * k.length_scale;
    grad[1] = 0.5 * alpha.dot(dK * alpha) - 0.5 * (W.array() * dK.array()).sum();
  }
  // d/d log sigma: dK = 2 sigma^2 I.
  grad[2] = sigma * sigma * (alpha.squaredNorm() - W.trace());
  return grad.allFinite();
}

}  // namespace

GprModel fit_gpr_1d(const Eigen::VectorXd& t, const Eigen::VectorXd& y,
                    const GprConfig& config) {
  if (t.size() != y.size() || t.size() < 2) {
    throw ConfigError("fit_gpr_1d: need at least two matching samples");
  }

  const double amp0 = std::max(sample_std(y), 1e-8);
  const double len0 = 2.0 * median_gap(t);
  GprModel fallback;
  fallback.kernel = {std::max(sample_std(y), 1e-8), median_pairwise_distance(t)};
  fallback.sigma = config.init_noise_frac * fallback.kernel.amplitude;
  fallback.median_fallback = true;

  Eigen::Vector3d logp(std::log(amp0), std::log(len0),
                       std::log(config.init_noise_frac * amp0));
  AdamState adam;
  adam.reset(3);

  double value = 0.0;
  Eigen::Vector3d grad;
  Eigen::Vector3d best_logp = logp;
  double best_value = -std::numeric_limits<double>::infinity();

  for (int it = 0; it < config.iterations; ++it) {
    if (!lml_and_grad(t, y, logp, value, grad)) {
      double dummy = 0.0;
      Eigen::Vector3d g;
      if (!lml_and_grad(t, y, best_logp, dummy, g)) return fallback;
      logp = best_logp;  // resume from the best point seen
      adam.reset(3);
      continue;
    }
    if (value > best_value) {
      best_value = value;
      best_logp = logp;
    }
    logp += adam.propose(grad, config.learning_rate);
    if (!logp.allFinite()) return fallback;
  }

  GprModel out;
  out.kernel = {std::exp(best_logp[0]), std::exp(best_logp[1])};
  out.sigma = std::exp(best_logp[2]);
  Eigen::Vector3d g;
  if (!lml_and_grad(t, y, best_logp, out.lml, g)) return fallback;
  return out;
}

void gpr_posterior(const Eigen::VectorXd& t, const Eigen::VectorXd& y,
                   const SEKernelD& kernel, double sigma,
                   const Eigen::VectorXd& query, int order,
                   Eigen::VectorXd& mean, Eigen::VectorXd& variance) {
  if (t.size() != y.size() || t.size() == 0) {
    throw ConfigError("gpr_posterior: mismatched training data");
  }
  if (order < 0 || order > kMaxDerivOrder) {
    throw UnsupportedOrderError("gpr_posterior: unsupported derivative order");
  }

  SEDerivTable tab;
  tab.build(kernel, t, t, 0, false);
  Eigen::MatrixXd K = tab.dq[0].matrix();
  K.diagonal().array() += sigma * sigma;
  CholResult ch = chol_with_jitter(std::move(K));
  Eigen::VectorXd alpha = ch.llt.solve(y);

  // Cross-covariances cov(u^(order)(t*), u(t_i)) = d^order/dt*^order k.
  SEDerivTable cross;
  cross.build(kernel, query, t, order, false);
  const double sign = (order % 2 == 0) ? 1.0 : -1.0;
  Eigen::MatrixXd Kqt = sign * cross.dq[order].matrix();

  mean = Kqt * alpha;
  const double prior_var = se_eval_deriv(kernel, order, order, 0.0, 0.0);
  Eigen::MatrixXd sol = ch.llt.solve(Kqt.transpose());
  variance = (prior_var - (Kqt.array() * sol.transpose().array())
                              .rowwise()
                              .sum())
                 .matrix();
  variance = variance.cwiseMax(0.0);
}

}  // namespace megpr
