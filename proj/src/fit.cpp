#include <megpr/fit.hpp>

#include <megpr/adam.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

namespace megpr {

namespace {

double median_adjacent_gap(const Eigen::VectorXd& t) {
  std::vector<double> gaps;
  for (Eigen::Index i = 1; i < t.size(); ++i) gaps.push_back(t[i] - t[i - 1]);
  if (gaps.empty()) return 1.0;
  const size_t mid = gaps.size() / 2;
  std::nth_element(gaps.begin(), gaps.begin() + mid, gaps.end());
  double hi = gaps[mid];
  if (gaps.size() % 2 == 1) return hi > 0 ? hi : 1.0;
  std::nth_element(gaps.begin(), gaps.begin() + mid - 1, gaps.end());
  const double m = 0.5 * (gaps[mid - 1] + hi);
  return m > 0 ? m : 1.0;
}

double pooled_observed_std(const Dataset& data) {
  double sum = 0.0, count = 0.0;
  for (Eigen::Index i = 0; i < data.n_times(); ++i) {
    for (Eigen::Index j = 0; j < data.dim(); ++j) {
      if (data.present(i, j)) {
        sum += data.values(i, j);
        count += 1.0;
      }
    }
  }
  if (count < 2.0) return 1.0;
  const double mean = sum / count;
  double sq = 0.0;
  for (Eigen::Index i = 0; i < data.n_times(); ++i) {
    for (Eigen::Index j = 0; j < data.dim(); ++j) {
      if (data.present(i, j)) {
        const double d = data.values(i, j) - mean;
        sq += d * d;
      }
    }
  }
  const double s = std::sqrt(sq / (count - 1.0));
  return s > 0 ? s : 1.0;
}

std::string format_vector(const Eigen::VectorXd& v) {
  std::ostringstream os;
  os << "(";
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) os << ", ";
    os << v[i];
  }
  os << ")";
  return os.str();
}

}  // namespace

std::vector<FixedPointTable> draw_anchor_tables(const FixedPointTable& table,
                                                int samples,
                                                std::uint64_t seed) {
  if (samples < 1) {
    throw ConfigError("draw_anchor_tables: samples must be >= 1");
  }
  table.validate();
  const bool exact =
      table.variances.size() == 0 || table.variances.maxCoeff() <= 0.0;

  std::vector<FixedPointTable> out;
  out.reserve(size_t(samples));
  for (int s = 0; s < samples; ++s) {
    FixedPointTable draw = table;
    if (!exact && samples > 1) {
      auto rng = make_rng(seed, std::uint64_t(s));
      std::normal_distribution<double> gauss(0.0, 1.0);
      for (Eigen::Index i = 0; i < draw.states.rows(); ++i) {
        for (Eigen::Index j = 0; j < draw.states.cols(); ++j) {
          const double sd = std::sqrt(std::max(table.variances(i, j), 0.0));
          draw.states(i, j) += sd * gauss(rng);
        }
      }
    }
    out.push_back(std::move(draw));
  }
  return out;
}

EstimationResult semi_adam_fit(const SystemModel& model, const Dataset& data,
                               const FitConfig& config) {
  return semi_adam_fit(std::vector<SystemModel>{model}, data, config);
}

EstimationResult semi_adam_fit(const std::vector<SystemModel>& ensemble,
                               const Dataset& data, const FitConfig& config) {
  if (ensemble.empty()) {
    throw ConfigError("semi_adam_fit: empty model ensemble");
  }
  for (const auto& m : ensemble) m.validate();
  data.validate();
  const SystemModel& model0 = ensemble.front();
  const int p = model0.n_params();
  for (const auto& m : ensemble) {
    if (m.n_params() != p || m.dim != model0.dim) {
      throw ConfigError("semi_adam_fit: ensemble models disagree in shape");
    }
  }

  const double t_max = config.t_max > 0.0 ? config.t_max : data.t_max;
  if (!(t_max > 0.0)) {
    throw ConfigError("semi_adam_fit: no positive time window");
  }
  const int n_c = config.n_constraints > 0 ? config.n_constraints
                                           : int(data.n_times());
  if (config.iterations < 1) {
    throw ConfigError("semi_adam_fit: iterations must be >= 1");
  }

  // Channel count from a probe layout (no constraints yet).
  StackedLayout probe = make_layout(model0, data, Eigen::VectorXd());
  const int n_channels = int(probe.channels.size());

  // --- Initialization -----------------------------------------------------
  auto theta_rng = make_rng(config.seed, 0);
  auto constraint_rng = make_rng(config.seed, 1);

  Eigen::VectorXd theta(p);
  if (config.theta_init) {
    if (config.theta_init->size() != p) {
      throw ConfigError("semi_adam_fit: theta_init size mismatch");
    }
    theta = *config.theta_init;
  } else {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int i = 0; i < p; ++i) {
      theta[i] = model0.init_lo[i] +
                 (model0.init_hi[i] - model0.init_lo[i]) * unif(theta_rng);
    }
  }
  theta = theta.cwiseMax(model0.lower_bounds).cwiseMin(model0.upper_bounds);

  const double amp0 = pooled_observed_std(data);
  const double len0 = 2.0 * median_adjacent_gap(data.times);

  // Optimization state: [theta; log amp; log len; log sigma_y...].
  const int dim = p + 2 + n_channels;
  Eigen::VectorXd x(dim);
  x.head(p) = theta;
  x[p] = std::log(amp0);
  x[p + 1] = std::log(len0);
  for (int j = 0; j < n_channels; ++j) x[p + 2 + j] = std::log(0.1 * amp0);

  auto unpack = [&](const Eigen::VectorXd& v, Eigen::VectorXd& th,
                    Hyper& hy) {
    th = v.head(p);
    hy.kernel.amplitude = std::exp(v[p]);
    hy.kernel.length_scale = std::exp(v[p + 1]);
    hy.noise.obs_noise = v.segment(p + 2, n_channels).array().exp().matrix();
    hy.noise.constraint_reg = config.sigma_v;
  };

  // Averaged objective and gradient (in optimization coordinates) across
  // the ensemble for one constraint draw.
  auto evaluate = [&](const Eigen::VectorXd& v,
                      const Eigen::VectorXd& constraint_times, double& value,
                      Eigen::VectorXd& grad) {
    Eigen::VectorXd th;
    Hyper hy;
    unpack(v, th, hy);
    value = 0.0;
    grad = Eigen::VectorXd::Zero(dim);
    for (const auto& m : ensemble) {
      StackedLayout layout = make_layout(m, data, constraint_times);
      LmlGradient g = lml_gradient(m, data, layout, th, hy);
      value += g.value;
      grad.head(p) += g.grad_theta;
      grad[p] += g.d_amplitude * hy.kernel.amplitude;
      grad[p + 1] += g.d_length_scale * hy.kernel.length_scale;
      for (int j = 0; j < n_channels; ++j) {
        grad[p + 2 + j] += g.d_sigma_y[j] * hy.noise.obs_noise[j];
      }
    }
    const double inv = 1.0 / double(ensemble.size());
    value *= inv;
    grad *= inv;
  };

  // Rejection mode keeps a gridded potential snapshot, refreshed
  // periodically at the current parameters.
  std::optional<GriddedPotential> potential;
  double last_acceptance = 1.0;
  auto refresh_potential = [&](const Eigen::VectorXd& v) {
    Eigen::VectorXd th;
    Hyper hy;
    unpack(v, th, hy);
    PotentialEvaluator pot(model0, data, th, hy, t_max);
    potential.emplace(pot, t_max);
  };

  auto draw_constraints = [&]() -> ConstraintSet {
    if (config.mode == ConstraintMode::uniform) {
      return sample_constraints_uniform(t_max, n_c, constraint_rng);
    }
    ConstraintSet cs = sample_constraints_rejection(
        [&](double t) { return (*potential)(t); }, potential->sigma_v2(),
        potential->eta(), t_max, n_c, constraint_rng);
    last_acceptance = cs.acceptance_rate;
    return cs;
  };

  // --- Main loop ------------------------------------------------------------
  AdamState adam;
  adam.beta1 = config.beta1;
  adam.beta2 = config.beta2;
  adam.eps = config.eps;
  adam.reset(dim);

  EstimationResult result;
  result.stop_reason = "budget";

  double ema = 0.0;
  double best_ema = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_x = x;
  Eigen::VectorXd x_prev = x;
  int last_improve_iter = 0;
  Eigen::VectorXd grad(dim);
  double value = 0.0;
  Eigen::VectorXd last_constraints;

  int it = 0;
  for (; it < config.iterations; ++it) {
    if (config.mode == ConstraintMode::rejection &&
        (it % std::max(config.refresh_every, 1) == 0)) {
      refresh_potential(x);
    }
    ConstraintSet cs = draw_constraints();
    last_constraints = cs.times;

    // Evaluate; on an ill-conditioned Gram, reject the iterate that the
    // previous step produced and retry that step at half the size.
    bool ok = false;
    for (int attempt = 0; attempt <= config.max_chol_retries; ++attempt) {
      try {
        evaluate(x, cs.times, value, grad);
        ok = true;
        break;
      } catch (const IllConditionedError& e) {
        if (it == 0) {
          throw FitAbortError(std::string("semi_adam_fit: initial point is "
                                          "ill-conditioned: ") +
                              e.what());
        }
        ++result.chol_retries;
        // Reject the iterate: walk halfway back toward the previous
        // accepted point, the same as re-taking that step at half size.
        x = 0.5 * (x + x_prev);
        x.head(p) =
            x.head(p).cwiseMax(model0.lower_bounds).cwiseMin(model0.upper_bounds);
      }
    }
    if (!ok) {
      Eigen::VectorXd th;
      Hyper hy;
      unpack(x, th, hy);
      throw FitAbortError(
          "semi_adam_fit: Gram stayed ill-conditioned after " +
          std::to_string(config.max_chol_retries) +
          " halved-step retries at iteration " + std::to_string(it) +
          "; theta=" + format_vector(th) + ", amplitude=" +
          std::to_string(hy.kernel.amplitude) + ", length_scale=" +
          std::to_string(hy.kernel.length_scale));
    }

    ema = (it == 0) ? value : config.ema_decay * ema +
                                  (1.0 - config.ema_decay) * value;
    const double tol =
        config.plateau_rel_tol * std::max(1.0, std::abs(best_ema));
    if (ema > best_ema + tol) {
      last_improve_iter = it;
    }
    if (ema > best_ema) {
      best_ema = ema;
      best_x = x;
    }

    if (config.record_trace) {
      TraceRow row;
      row.iter = it;
      row.objective = value;
      row.grad_norm = grad.norm();
      row.theta = x.head(p);
      row.amplitude = std::exp(x[p]);
      row.length_scale = std::exp(x[p + 1]);
      row.sigma_y = x.segment(p + 2, n_channels).array().exp().matrix();
      result.trace.push_back(std::move(row));
    }

    if (it - last_improve_iter >= config.plateau_window) {
      result.stop_reason = "plateau";
      ++it;
      break;
    }

    x_prev = x;
    x += adam.propose(grad, config.learning_rate);
    x.head(p) =
        x.head(p).cwiseMax(model0.lower_bounds).cwiseMin(model0.upper_bounds);
  }

  result.iterations_run = it;
  result.final_objective = value;
  result.objective = best_ema;
  unpack(best_x, result.theta, result.hyper);
  result.constraint_times = last_constraints;
  result.sampler_acceptance = last_acceptance;
  return result;
}

}  // namespace megpr
