#include <megpr/sampler.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

namespace megpr {

PotentialEvaluator::PotentialEvaluator(const SystemModel& model,
                                       const Dataset& data,
                                       const Eigen::VectorXd& theta,
                                       const Hyper& hyper, double t_max)
    : model_(model), theta_(theta), kernel_(hyper.kernel) {
  layout_ = make_layout(model, data, Eigen::VectorXd());
  hyper.validate(int(layout_.channels.size()));
  sigma_v2_ = hyper.noise.constraint_reg * hyper.noise.constraint_reg;

  coeffs_ = row_coefficients(model_, layout_, theta_, false);
  SEDerivTable table;
  table.build(kernel_, layout_.row_times, layout_.row_times,
              2 * coeffs_.max_order, false);
  Eigen::MatrixXd K = assemble_gram_noiseless(coeffs_, table);
  for (int r = 0; r < layout_.rows(); ++r) {
    const double s = hyper.noise.obs_noise[layout_.channel_slot(
        layout_.row_comp[size_t(r)])];
    K(r, r) += s * s;
  }
  chol_ = chol_with_jitter(std::move(K));

  // eta: the prior constraint-variance envelope over a fixed grid.
  const int grid_n = 512;
  eta_ = 0.0;
  for (int i = 0; i < grid_n; ++i) {
    const double t = t_max * (double(i) + 0.5) / double(grid_n);
    const double prior =
        op_cov(model_.constraint_op, model_.constraint_op, kernel_, t, t,
               theta_) +
        sigma_v2_;
    eta_ = std::max(eta_, prior);
  }
}

Eigen::VectorXd PotentialEvaluator::batch(const Eigen::VectorXd& ts) const {
  for (Eigen::Index i = 0; i < ts.size(); ++i) {
    require_finite(ts[i], "potential query time");
  }
  const auto cv = op_coefficients(model_.constraint_op, ts, theta_);
  SEDerivTable cross;
  cross.build(kernel_, ts, layout_.row_times,
              model_.constraint_op.max_order() + coeffs_.max_order, false);
  Eigen::MatrixXd Kvx = bilinear_cross(cv, coeffs_.c, cross.dq);
  Eigen::MatrixXd sol = chol_.llt.solve(Kvx.transpose());

  Eigen::VectorXd out(ts.size());
  for (Eigen::Index i = 0; i < ts.size(); ++i) {
    const double prior =
        op_cov(model_.constraint_op, model_.constraint_op, kernel_, ts[i],
               ts[i], theta_) +
        sigma_v2_;
    out[i] = prior - Kvx.row(i).dot(sol.col(i));
  }
  return out;
}

double PotentialEvaluator::operator()(double t) const {
  Eigen::VectorXd one(1);
  one[0] = t;
  return batch(one)[0];
}

GriddedPotential::GriddedPotential(const PotentialEvaluator& pot,
                                   double t_max, int grid_points)
    : t_max_(t_max), eta_(pot.eta()), sigma_v2_(pot.sigma_v2()) {
  if (grid_points < 2) {
    throw ConfigError("GriddedPotential: need at least two grid points");
  }
  Eigen::VectorXd ts(grid_points + 1);
  for (int i = 0; i <= grid_points; ++i) {
    ts[i] = t_max * double(i) / double(grid_points);
  }
  values_ = pot.batch(ts);
}

double GriddedPotential::operator()(double t) const {
  const double x = std::clamp(t, 0.0, t_max_) / t_max_ *
                   double(values_.size() - 1);
  const Eigen::Index lo =
      std::min<Eigen::Index>(Eigen::Index(x), values_.size() - 2);
  const double w = x - double(lo);
  return (1.0 - w) * values_[lo] + w * values_[lo + 1];
}

ConstraintSet sample_constraints_uniform(double t_max, int n_c,
                                         std::mt19937_64& rng) {
  if (n_c < 1) {
    throw ConfigError("sample_constraints_uniform: n_c must be >= 1");
  }
  if (!(t_max > 0.0)) {
    throw ConfigError("sample_constraints_uniform: t_max must be positive");
  }
  std::uniform_real_distribution<double> unif(0.0, t_max);
  std::vector<double> draws(static_cast<size_t>(n_c));
  for (auto& d : draws) d = unif(rng);
  std::sort(draws.begin(), draws.end());
  ConstraintSet out;
  out.times = Eigen::Map<const Eigen::VectorXd>(draws.data(), n_c);
  out.acceptance_rate = 1.0;
  return out;
}

ConstraintSet sample_constraints_rejection(
    const std::function<double(double)>& potential, double sigma_v2,
    double eta, double t_max, int n_c, std::mt19937_64& rng) {
  if (n_c < 1) {
    throw ConfigError("sample_constraints_rejection: n_c must be >= 1");
  }
  if (!(t_max > 0.0)) {
    throw ConfigError("sample_constraints_rejection: t_max must be positive");
  }

  // Degenerate envelope: V is flat at the floor everywhere, accept all.
  const double span = eta - sigma_v2;
  const double scale = span > 0.0 ? span / 4.0 : 0.0;

  constexpr long kBudget = 1000000;
  constexpr double kMinRate = 1e-4;

  std::uniform_real_distribution<double> unif01(0.0, 1.0);
  std::uniform_real_distribution<double> unif_t(0.0, t_max);
  std::vector<double> accepted;
  accepted.reserve(size_t(n_c));
  long proposals = 0;
  while (int(accepted.size()) < n_c) {
    const double t = unif_t(rng);
    const double u = unif01(rng);
    double q = 1.0;
    if (scale > 0.0) {
      const double v = potential(t);
      q = std::exp(-(v - sigma_v2) / scale);
    }
    ++proposals;
    if (u <= q) accepted.push_back(t);
    if (proposals >= kBudget &&
        double(accepted.size()) / double(proposals) < kMinRate) {
      throw SamplerStarvationError(
          "sample_constraints_rejection: acceptance below 1e-4 after 1e6 "
          "proposals; potential scale is degenerate");
    }
  }

  std::sort(accepted.begin(), accepted.end());
  ConstraintSet out;
  out.times = Eigen::Map<const Eigen::VectorXd>(accepted.data(), n_c);
  out.acceptance_rate = double(n_c) / double(proposals);
  return out;
}

ConstraintSet sample_constraints_rejection(const SystemModel& model,
                                           const Dataset& data,
                                           const Eigen::VectorXd& theta,
                                           const Hyper& hyper, double t_max,
                                           int n_c, std::mt19937_64& rng) {
  PotentialEvaluator pot(model, data, theta, hyper, t_max);
  return sample_constraints_rejection(
      [&pot](double t) { return pot(t); }, pot.sigma_v2(), pot.eta(), t_max,
      n_c, rng);
}

}  // namespace megpr
