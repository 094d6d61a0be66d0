#pragma once

// Minimal ADAM state shared by the joint optimizer and the GPR
// hyperparameter fit.  Maximization convention: callers pass the gradient
// of the objective being maximized and the update ascends.

#include <Eigen/Core>

namespace megpr {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  Eigen::VectorXd m;  // first-moment estimate
  Eigen::VectorXd v;  // second-moment estimate
  long step = 0;

  void reset(Eigen::Index n) {
    m = Eigen::VectorXd::Zero(n);
    v = Eigen::VectorXd::Zero(n);
    step = 0;
  }

  // Consumes one gradient and returns the (bias-corrected) ascent step.
  // The caller applies it, which lets rejected iterates rescale the same
  // step without perturbing the moment estimates twice.
  Eigen::VectorXd propose(const Eigen::VectorXd& grad, double lr) {
    if (m.size() != grad.size()) reset(grad.size());
    ++step;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v.array().matrix() + (1.0 - beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(beta1, double(step));
    const double c2 = 1.0 - std::pow(beta2, double(step));
    Eigen::ArrayXd mhat = m.array() / c1;
    Eigen::ArrayXd vhat = v.array() / c2;
    return (lr * mhat / (vhat.sqrt() + eps)).matrix();
  }
};

}  // namespace megpr
