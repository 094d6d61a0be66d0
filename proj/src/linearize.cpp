#include <megpr/linearize.hpp>

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

namespace megpr {

Eigen::Index FixedPointTable::nearest(double t) const {
  const Eigen::Index n = times.size();
  const double* begin = times.data();
  const double* it = std::lower_bound(begin, begin + n, t);
  Eigen::Index hi = it - begin;
  if (hi == 0) return 0;
  if (hi >= n) return n - 1;
  const Eigen::Index lo = hi - 1;
  // Left tie-break: the earlier anchor wins an exact midpoint.
  return (t - times[lo] <= times[hi] - t) ? lo : hi;
}

Coefficient PiecewiseLinearization::jac_coeff(int i, int j) const {
  if (i < 0 || j < 0 || i >= field.dim || j >= field.dim) {
    throw ConfigError("jac_coeff: index out of range");
  }
  auto field_copy = field;
  auto table_copy = table;
  return Coefficient::piecewise(
      [field_copy, table_copy, i, j](double t, const Eigen::VectorXd& theta,
                                     Eigen::VectorXd* grad) {
        const Eigen::VectorXd s =
            table_copy.states.row(table_copy.nearest(t)).transpose();
        if (grad) {
          const auto dJ = field_copy.jacobian_param_grad(s, theta);
          for (Eigen::Index p = 0; p < grad->size(); ++p) {
            (*grad)[p] = dJ[size_t(p)](i, j);
          }
        }
        return field_copy.jacobian(s, theta)(i, j);
      });
}

Coefficient PiecewiseLinearization::offset_coeff(int i) const {
  if (i < 0 || i >= field.dim) {
    throw ConfigError("offset_coeff: index out of range");
  }
  auto field_copy = field;
  auto table_copy = table;
  return Coefficient::piecewise(
      [field_copy, table_copy, i](double t, const Eigen::VectorXd& theta,
                                  Eigen::VectorXd* grad) {
        const Eigen::VectorXd s =
            table_copy.states.row(table_copy.nearest(t)).transpose();
        const Eigen::MatrixXd J = field_copy.jacobian(s, theta);
        const Eigen::VectorXd f = field_copy.rhs(s, theta);
        if (grad) {
          const Eigen::MatrixXd df = field_copy.rhs_param_grad(s, theta);
          const auto dJ = field_copy.jacobian_param_grad(s, theta);
          for (Eigen::Index p = 0; p < grad->size(); ++p) {
            (*grad)[p] = df(i, p) - dJ[size_t(p)].row(i).dot(s);
          }
        }
        return f[i] - J.row(i).dot(s);
      });
}

Eigen::MatrixXd PiecewiseLinearization::jacobian_at(
    double t, const Eigen::VectorXd& theta) const {
  const Eigen::VectorXd s = table.states.row(table.nearest(t)).transpose();
  return field.jacobian(s, theta);
}

Eigen::VectorXd PiecewiseLinearization::offset_at(
    double t, const Eigen::VectorXd& theta) const {
  const Eigen::VectorXd s = table.states.row(table.nearest(t)).transpose();
  return field.rhs(s, theta) - field.jacobian(s, theta) * s;
}

PiecewiseLinearization linearize(LinearizedField field, FixedPointTable table) {
  if (field.dim <= 0 || !field.rhs || !field.jacobian) {
    throw ConfigError("linearize: field is incomplete");
  }
  table.validate();
  if (table.states.cols() != field.dim) {
    throw ConfigError("linearize: anchor dimension does not match the field");
  }
  return PiecewiseLinearization{std::move(field), std::move(table)};
}

FixedPointTable fixed_points_from_observations(const Dataset& data,
                                               const std::vector<int>& required) {
  data.validate();
  for (int c : required) {
    if (c < 0 || c >= data.dim()) {
      throw ConfigError("fixed_points_from_observations: bad component index");
    }
    for (Eigen::Index i = 0; i < data.n_times(); ++i) {
      if (!data.present(i, c)) {
        throw ConfigError(
            "fixed_points_from_observations: component " + std::to_string(c) +
            " is not observed at every time; use the smoother instead");
      }
    }
  }
  FixedPointTable table;
  table.times = data.times;
  table.states = Eigen::MatrixXd::Zero(data.n_times(), data.dim());
  table.variances = Eigen::MatrixXd::Zero(data.n_times(), data.dim());
  for (Eigen::Index i = 0; i < data.n_times(); ++i) {
    for (Eigen::Index j = 0; j < data.dim(); ++j) {
      if (data.present(i, j)) table.states(i, j) = data.values(i, j);
    }
  }
  return table;
}

SmoothedAnchors fixed_points_from_gpr(const Dataset& data,
                                      const SmootherSpec& spec,
                                      const GprConfig& config) {
  data.validate();
  SmoothedAnchors out;
  out.table.times = data.times;
  out.table.states = Eigen::MatrixXd::Zero(data.n_times(), data.dim());
  out.table.variances = Eigen::MatrixXd::Zero(data.n_times(), data.dim());
  out.models.resize(size_t(data.dim()));
  std::vector<bool> fitted(size_t(data.dim()), false);

  for (int c : spec.direct) {
    Eigen::VectorXd t, y;
    data.observed_series(c, t, y);
    if (t.size() < 2) {
      throw ConfigError("fixed_points_from_gpr: component " +
                        std::to_string(c) + " has too few observations");
    }
    GprModel model = fit_gpr_1d(t, y, config);
    out.any_median_fallback |= model.median_fallback;
    Eigen::VectorXd mean, var;
    gpr_posterior(t, y, model.kernel, model.sigma, data.times, 0, mean, var);
    out.table.states.col(c) = mean;
    out.table.variances.col(c) = var;
    out.models[size_t(c)] = model;
    fitted[size_t(c)] = true;
  }

  for (const auto& d : spec.derived) {
    Eigen::VectorXd t, y;
    data.observed_series(d.source, t, y);
    if (t.size() < 2) {
      throw ConfigError("fixed_points_from_gpr: source component " +
                        std::to_string(d.source) + " has too few observations");
    }
    if (d.source < 0 || d.source >= data.dim() || !fitted[size_t(d.source)]) {
      throw ConfigError(
          "fixed_points_from_gpr: derived component needs its source smoothed "
          "first (add the source to `direct`)");
    }
    const GprModel& model = out.models[size_t(d.source)];
    Eigen::VectorXd mean, var;
    gpr_posterior(t, y, model.kernel, model.sigma, data.times, d.order, mean,
                  var);
    out.table.states.col(d.target) = mean;
    out.table.variances.col(d.target) = var;
  }

  return out;
}

McObjective mc_marginalize_fixed_points(
    const FixedPointTable& table, int samples, std::uint64_t seed,
    const std::function<McObjective(const FixedPointTable&)>& inner) {
  if (samples < 1) {
    throw ConfigError("mc_marginalize_fixed_points: samples must be >= 1");
  }
  table.validate();

  const bool exact = table.variances.size() == 0 ||
                     table.variances.maxCoeff() <= 0.0;
  if (samples == 1 && exact) return inner(table);

  McObjective acc;
  for (int s = 0; s < samples; ++s) {
    FixedPointTable draw = table;
    if (!exact) {
      auto rng = make_rng(seed, std::uint64_t(s));
      std::normal_distribution<double> gauss(0.0, 1.0);
      for (Eigen::Index i = 0; i < draw.states.rows(); ++i) {
        for (Eigen::Index j = 0; j < draw.states.cols(); ++j) {
          const double sd = std::sqrt(std::max(table.variances(i, j), 0.0));
          draw.states(i, j) += sd * gauss(rng);
        }
      }
    }
    McObjective one = inner(draw);
    if (s == 0) {
      acc = std::move(one);
    } else {
      acc.objective += one.objective;
      acc.gradient += one.gradient;
    }
  }
  acc.objective /= double(samples);
  if (acc.gradient.size() > 0) acc.gradient /= double(samples);
  return acc;
}

}  // namespace megpr
