#include <megpr/init_guess.hpp>

#include <megpr/diffop.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

namespace megpr {
namespace {

constexpr int kMinSeriesLength = 8;
constexpr int kStarts = 8;
constexpr int kEvalsPerStart = 400;

// Smoothed latent curve and its derivatives, all on the dataset's grid.
struct LatentCurves {
  Eigen::VectorXd times;
  std::vector<Eigen::VectorXd> deriv;  // deriv[m] = posterior mean of u^(m)
};

// Highest derivative the objective reads: the constraint order joined with
// the orders of every engaged operator that has observations to match.
int required_order(const SystemModel& model, const Dataset& data) {
  int order = model.constraint_op.max_order();
  for (int j = 0; j < model.dim; ++j) {
    if (j == model.latent || !model.component_ops[size_t(j)]) continue;
    bool any = false;
    for (Eigen::Index i = 0; i < data.n_times() && !any; ++i) {
      any = data.present(i, j);
    }
    if (any) {
      order = std::max(order, model.component_ops[size_t(j)]->max_order());
    }
  }
  return order;
}

std::optional<LatentCurves> smooth_latent(const SystemModel& model,
                                          const Dataset& data,
                                          const FixedPointTable* anchors,
                                          int max_order,
                                          const GprConfig& gpr_cfg) {
  // Source series: the latent component's own observations when present,
  // otherwise the anchor-table column for the latent state.
  std::vector<double> ts, ys;
  for (Eigen::Index i = 0; i < data.n_times(); ++i) {
    if (data.present(i, model.latent)) {
      ts.push_back(data.times[i]);
      ys.push_back(data.values(i, model.latent));
    }
  }
  if (int(ts.size()) < kMinSeriesLength && anchors != nullptr &&
      anchors->size() >= kMinSeriesLength) {
    ts.clear();
    ys.clear();
    for (Eigen::Index i = 0; i < anchors->size(); ++i) {
      ts.push_back(anchors->times[i]);
      ys.push_back(anchors->states(i, model.latent));
    }
  }
  if (int(ts.size()) < kMinSeriesLength) return std::nullopt;

  const Eigen::Map<const Eigen::VectorXd> t(ts.data(), Eigen::Index(ts.size()));
  const Eigen::Map<const Eigen::VectorXd> y(ys.data(), Eigen::Index(ys.size()));
  const GprModel gp = fit_gpr_1d(t, y, gpr_cfg);

  LatentCurves curves;
  curves.times = data.times;
  curves.deriv.resize(size_t(max_order) + 1);
  Eigen::VectorXd variance;
  for (int m = 0; m <= max_order; ++m) {
    gpr_posterior(t, y, gp.kernel, gp.sigma, curves.times, m,
                  curves.deriv[size_t(m)], variance);
  }
  return curves;
}

double apply_operator(const DiffOperator& op, const LatentCurves& curves,
                      Eigen::Index i, const Eigen::VectorXd& theta) {
  const double t = curves.times[i];
  double value = op.offset.eval(t, theta, nullptr);
  for (const OperatorTerm& term : op.terms) {
    value += term.coeff.eval(t, theta, nullptr) *
             curves.deriv[size_t(term.order)][i];
  }
  return value;
}

// Mean-square constraint residual of the smoothed curve plus, per observed
// non-latent component, the mean-square mismatch between the transformed
// curve and the data.  The latent channel itself carries no parameter
// information here (its operator is the identity) and is skipped.
double score(const SystemModel& model, const Dataset& data,
             const LatentCurves& curves, const Eigen::VectorXd& theta) {
  double total = 0.0;
  double vsum = 0.0;
  for (Eigen::Index i = 0; i < curves.times.size(); ++i) {
    const double v = apply_operator(model.constraint_op, curves, i, theta);
    vsum += v * v;
  }
  total = vsum / double(curves.times.size());
  for (int j = 0; j < model.dim; ++j) {
    if (j == model.latent || !model.component_ops[size_t(j)]) continue;
    const DiffOperator& op = *model.component_ops[size_t(j)];
    double rsum = 0.0;
    int count = 0;
    for (Eigen::Index i = 0; i < data.n_times(); ++i) {
      if (!data.present(i, j)) continue;
      const double r = apply_operator(op, curves, i, theta) - data.values(i, j);
      rsum += r * r;
      ++count;
    }
    if (count > 0) total += rsum / double(count);
  }
  return std::isfinite(total) ? total : std::numeric_limits<double>::infinity();
}

Eigen::VectorXd clamp_box(Eigen::VectorXd x, const Eigen::VectorXd& lo,
                          const Eigen::VectorXd& hi) {
  return x.cwiseMax(lo).cwiseMin(hi);
}

// Standard Nelder-Mead with every candidate projected into [lo, hi].
Eigen::VectorXd nelder_mead(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& start, const Eigen::VectorXd& lo,
    const Eigen::VectorXd& hi, int max_evals, double* best_value) {
  const Eigen::Index p = start.size();
  std::vector<Eigen::VectorXd> vert;
  std::vector<double> fval;
  vert.push_back(clamp_box(start, lo, hi));
  fval.push_back(f(vert[0]));
  int evals = 1;
  for (Eigen::Index i = 0; i < p; ++i) {
    Eigen::VectorXd v = vert[0];
    const double step = 0.2 * (hi[i] - lo[i]);
    v[i] += (v[i] + step <= hi[i]) ? step : -step;
    vert.push_back(clamp_box(v, lo, hi));
    fval.push_back(f(vert.back()));
    ++evals;
  }

  std::vector<size_t> idx(vert.size());
  const auto resort = [&]() {
    for (size_t k = 0; k < idx.size(); ++k) idx[k] = k;
    std::sort(idx.begin(), idx.end(),
              [&](size_t a, size_t b) { return fval[a] < fval[b]; });
  };
  resort();

  while (evals < max_evals) {
    const size_t best = idx.front();
    const size_t worst = idx.back();
    const size_t second = idx[idx.size() - 2];
    if (fval[worst] - fval[best] <= 1e-12 * (1.0 + std::abs(fval[best]))) break;

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(p);
    for (size_t k : idx) {
      if (k != worst) centroid += vert[k];
    }
    centroid /= double(p);

    const Eigen::VectorXd reflected =
        clamp_box(centroid + (centroid - vert[worst]), lo, hi);
    const double fr = f(reflected);
    ++evals;
    if (fr < fval[best]) {
      const Eigen::VectorXd expanded =
          clamp_box(centroid + 2.0 * (centroid - vert[worst]), lo, hi);
      const double fe = f(expanded);
      ++evals;
      vert[worst] = fe < fr ? expanded : reflected;
      fval[worst] = std::min(fe, fr);
    } else if (fr < fval[second]) {
      vert[worst] = reflected;
      fval[worst] = fr;
    } else {
      const Eigen::VectorXd contracted =
          clamp_box(centroid + 0.5 * (vert[worst] - centroid), lo, hi);
      const double fc = f(contracted);
      ++evals;
      if (fc < fval[worst]) {
        vert[worst] = contracted;
        fval[worst] = fc;
      } else {
        for (size_t k : idx) {
          if (k == best) continue;
          vert[k] = clamp_box(vert[best] + 0.5 * (vert[k] - vert[best]), lo, hi);
          fval[k] = f(vert[k]);
          ++evals;
        }
      }
    }
    resort();
  }
  resort();
  *best_value = fval[idx.front()];
  return vert[idx.front()];
}

}  // namespace

std::optional<InitGuess> constraint_match_init(const SystemModel& model,
                                               const Dataset& data,
                                               const FixedPointTable* anchors,
                                               std::uint64_t seed,
                                               const GprConfig& gpr_cfg) {
  const int max_order = required_order(model, data);
  const std::optional<LatentCurves> curves =
      smooth_latent(model, data, anchors, max_order, gpr_cfg);
  if (!curves) return std::nullopt;

  // Positive boxes are searched in log space so the simplex moves are
  // scale-free across parameters spanning decades.
  const bool log_space = (model.lower_bounds.array() > 0.0).all();
  const auto transform = [&](Eigen::VectorXd v) {
    if (log_space) v = v.array().log().matrix();
    return v;
  };
  const auto to_theta = [&](Eigen::VectorXd w) {
    if (log_space) w = w.array().exp().matrix();
    return w;
  };
  const Eigen::VectorXd wlo = transform(model.lower_bounds);
  const Eigen::VectorXd whi = transform(model.upper_bounds);
  const Eigen::VectorXd slo = transform(model.init_lo);
  const Eigen::VectorXd shi = transform(model.init_hi);

  const auto objective = [&](const Eigen::VectorXd& w) {
    return score(model, data, *curves, to_theta(w));
  };

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Eigen::Index p = model.n_params();
  double best = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_w;
  for (int s = 0; s < kStarts; ++s) {
    Eigen::VectorXd w0(p);
    for (Eigen::Index i = 0; i < p; ++i) {
      w0[i] = slo[i] + (shi[i] - slo[i]) * unit(rng);
    }
    double value = std::numeric_limits<double>::infinity();
    const Eigen::VectorXd w =
        nelder_mead(objective, w0, wlo, whi, kEvalsPerStart, &value);
    if (value < best) {
      best = value;
      best_w = w;
    }
  }
  if (best_w.size() == 0 || !std::isfinite(best)) return std::nullopt;

  InitGuess guess;
  guess.theta = to_theta(best_w);
  guess.objective = best;
  return guess;
}

}  // namespace megpr
