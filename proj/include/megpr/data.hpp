#pragma once

// Observation container shared across the toolkit.  Rows are time points
// (strictly increasing), columns are system components; the presence mask
// records which entries are actually observed (partial observation is the
// norm: most benchmark systems expose a single component).

#include <megpr/common.hpp>

#include <Eigen/Core>

namespace megpr {

struct Dataset {
  Eigen::VectorXd times;                          // n, strictly increasing
  Eigen::MatrixXd values;                         // n x D; NaN where absent
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> present;  // n x D
  double t_max = 0.0;  // right end of the observation window

  Eigen::Index n_times() const { return times.size(); }
  Eigen::Index dim() const { return values.cols(); }

  void validate() const {
    if (values.rows() != times.size() || present.rows() != times.size() ||
        present.cols() != values.cols()) {
      throw ConfigError("Dataset: inconsistent shapes");
    }
    for (Eigen::Index i = 0; i < times.size(); ++i) {
      require_finite(times[i], "observation time");
      if (i > 0 && !(times[i] > times[i - 1])) {
        throw ConfigError("Dataset: times must be strictly increasing");
      }
    }
    if (times.size() > 0 && !(t_max >= times[times.size() - 1])) {
      throw ConfigError("Dataset: t_max must cover the observation window");
    }
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
      for (Eigen::Index j = 0; j < values.cols(); ++j) {
        if (present(i, j)) require_finite(values(i, j), "observed value");
      }
    }
  }

  // Times and values of one component's observed entries.
  void observed_series(Eigen::Index comp, Eigen::VectorXd& t,
                       Eigen::VectorXd& y) const {
    Eigen::Index count = 0;
    for (Eigen::Index i = 0; i < n_times(); ++i) {
      if (present(i, comp)) ++count;
    }
    t.resize(count);
    y.resize(count);
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < n_times(); ++i) {
      if (present(i, comp)) {
        t[k] = times[i];
        y[k] = values(i, comp);
        ++k;
      }
    }
  }
};

}  // namespace megpr
