#pragma once

// Posterior curves for components and their derivatives.
//
// Conditioning set: every stacked observation row plus the frozen
// constraint rows (residual pinned to zero at the constraint times).  A
// query for component i at derivative order j uses the operator
// component_ops[i] composed with d^j/dt^j, so predicted components are,
// by construction, the operator transforms of the predicted latent .

#include <megpr/gram.hpp>
#include <megpr/gpr.hpp>
#include <megpr/system.hpp>

#include <Eigen/Core>

namespace megpr {

struct PosteriorCurve {
  Eigen::VectorXd times;
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;  // pointwise, clamped at zero
  int component = -1;        // -1 when the query was a bare operator
  int order = 0;
};

// Posterior of (query_op u) at the query times.
PosteriorCurve predict_operator(const SystemModel& model, const Dataset& data,
                                const Eigen::VectorXd& constraint_times,
                                const Eigen::VectorXd& theta,
                                const Hyper& hyper,
                                const DiffOperator& query_op,
                                const Eigen::VectorXd& query_times);

// Posterior of d^order/dt^order of component `comp`.
PosteriorCurve predict(const SystemModel& model, const Dataset& data,
                       const Eigen::VectorXd& constraint_times,
                       const Eigen::VectorXd& theta, const Hyper& hyper,
                       int comp, int order,
                       const Eigen::VectorXd& query_times);

// Unconstrained GPR baseline on a single series: fits hyperparameters by
// marginal likelihood, then predicts the order-j derivative.
PosteriorCurve gpr_baseline(const Eigen::VectorXd& t, const Eigen::VectorXd& y,
                            const Eigen::VectorXd& query, int order,
                            const GprConfig& config = {});

}  // namespace megpr
