#include <megpr/predict.hpp>

#include <string>

namespace megpr {

PosteriorCurve predict_operator(const SystemModel& model, const Dataset& data,
                                const Eigen::VectorXd& constraint_times,
                                const Eigen::VectorXd& theta,
                                const Hyper& hyper,
                                const DiffOperator& query_op,
                                const Eigen::VectorXd& query_times) {
  StackedLayout layout = make_layout(model, data, constraint_times);
  JointGram gram = assemble_gram(model, data, layout, theta, hyper);
  Eigen::VectorXd z = center_observations(model, data, layout, theta);
  Eigen::VectorXd alpha = gram.chol.llt.solve(z);

  RowCoeffs coeffs = row_coefficients(model, layout, theta, false);
  const auto qc = op_coefficients(query_op, query_times, theta);
  SEDerivTable cross;
  cross.build(hyper.kernel, query_times, layout.row_times,
              query_op.max_order() + coeffs.max_order, false);
  Eigen::MatrixXd Kqx = bilinear_cross(qc, coeffs.c, cross.dq);

  PosteriorCurve out;
  out.times = query_times;
  out.mean = Kqx * alpha;
  for (Eigen::Index i = 0; i < query_times.size(); ++i) {
    out.mean[i] += op_offset(query_op, query_times[i], theta);
  }

  Eigen::MatrixXd sol = gram.chol.llt.solve(Kqx.transpose());
  out.variance.resize(query_times.size());
  for (Eigen::Index i = 0; i < query_times.size(); ++i) {
    const double prior = op_cov(query_op, query_op, hyper.kernel,
                                query_times[i], query_times[i], theta);
    out.variance[i] = prior - Kqx.row(i).dot(sol.col(i));
  }
  out.variance = out.variance.cwiseMax(0.0);
  return out;
}

PosteriorCurve predict(const SystemModel& model, const Dataset& data,
                       const Eigen::VectorXd& constraint_times,
                       const Eigen::VectorXd& theta, const Hyper& hyper,
                       int comp, int order,
                       const Eigen::VectorXd& query_times) {
  if (comp < 0 || comp >= model.dim) {
    throw ConfigError("predict: component index out of range");
  }
  if (!model.component_ops[size_t(comp)]) {
    throw ConfigError("predict: component " + std::to_string(comp + 1) +
                      " has no operator form and cannot be predicted");
  }
  if (order < 0) throw ConfigError("predict: negative derivative order");

  const DiffOperator query_op =
      compose_with_derivative(*model.component_ops[size_t(comp)], order);
  PosteriorCurve out = predict_operator(model, data, constraint_times, theta,
                                        hyper, query_op, query_times);
  out.component = comp;
  out.order = order;
  return out;
}

PosteriorCurve gpr_baseline(const Eigen::VectorXd& t, const Eigen::VectorXd& y,
                            const Eigen::VectorXd& query, int order,
                            const GprConfig& config) {
  GprModel model = fit_gpr_1d(t, y, config);
  PosteriorCurve out;
  out.times = query;
  out.order = order;
  gpr_posterior(t, y, model.kernel, model.sigma, query, order, out.mean,
                out.variance);
  return out;
}

}  // namespace megpr
