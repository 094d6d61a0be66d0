#pragma once

// Linear differential operators acting on a scalar GP.
//
// An operator L = sum_m c_m(t, theta) d^m/dt^m + b(t, theta) maps the
// latent function u to  (L u)(t) = sum_m c_m(t) u^(m)(t) + b(t).  Applying
// two operators to the two arguments of the kernel yields the covariance
// between transformed processes,
//
//   cov((L1 u)(t), (L2 u)(t')) =
//       sum_m sum_n c1_m(t) c2_n(t') d^m/dt^m d^n/dt'^n k(t, t'),
//
// where the coefficients are treated as locally constant: derivatives act
// on the kernel only, matching the piecewise-linearization semantics in
// which coefficients are frozen within a segment.  Additive offsets b
// shift means and never enter covariances.

#include <megpr/common.hpp>
#include <megpr/kernel.hpp>

#include <Eigen/Core>

#include <algorithm>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace megpr {

enum class CoeffKind { constant, parametric, piecewise };

// Scalar coefficient c(t, theta) with an analytic parameter gradient.
//
// The evaluator writes d c / d theta into *grad (preallocated to the
// parameter count) when grad is non-null; it must fill every entry.
struct Coefficient {
  using Fn =
      std::function<double(double t, const Eigen::VectorXd& theta,
                           Eigen::VectorXd* grad)>;

  CoeffKind kind = CoeffKind::constant;
  Fn fn;

  double eval(double t, const Eigen::VectorXd& theta,
              Eigen::VectorXd* grad = nullptr) const {
    double v = fn ? fn(t, theta, grad) : 0.0;
    if (!fn && grad) grad->setZero();
    return v;
  }

  static Coefficient constant(double c) {
    Coefficient out;
    out.kind = CoeffKind::constant;
    out.fn = [c](double, const Eigen::VectorXd&, Eigen::VectorXd* grad) {
      if (grad) grad->setZero();
      return c;
    };
    return out;
  }

  static Coefficient zero() { return constant(0.0); }
  static Coefficient one() { return constant(1.0); }

  static Coefficient parametric(Fn fn) {
    Coefficient out;
    out.kind = CoeffKind::parametric;
    out.fn = std::move(fn);
    return out;
  }

  static Coefficient piecewise(Fn fn) {
    Coefficient out;
    out.kind = CoeffKind::piecewise;
    out.fn = std::move(fn);
    return out;
  }

  // c(t) = this(t) + other(t); used when merging operators.
  Coefficient plus(const Coefficient& other) const {
    Coefficient out;
    out.kind = (kind == CoeffKind::constant && other.kind == CoeffKind::constant)
                   ? CoeffKind::constant
                   : std::max(kind, other.kind);
    Fn a = fn, b = other.fn;
    out.fn = [a, b](double t, const Eigen::VectorXd& theta,
                    Eigen::VectorXd* grad) {
      double v = 0.0;
      if (a && b) {
        Eigen::VectorXd gb;
        Eigen::VectorXd* gbp = nullptr;
        if (grad) {
          gb.resize(grad->size());
          gbp = &gb;
        }
        v = a(t, theta, grad) + b(t, theta, gbp);
        if (grad) *grad += gb;
      } else if (a) {
        v = a(t, theta, grad);
      } else if (b) {
        v = b(t, theta, grad);
      } else if (grad) {
        grad->setZero();
      }
      return v;
    };
    return out;
  }
};

// One term c_m(t, theta) d^m/dt^m of a differential operator.
struct OperatorTerm {
  int order = 0;
  Coefficient coeff;
};

// L = sum of terms plus an additive offset b(t, theta).
//
// Terms carry distinct derivative orders, kept sorted ascending; the order
// of each term must lie in [0, kMaxDerivOrder].
struct DiffOperator {
  std::vector<OperatorTerm> terms;
  Coefficient offset = Coefficient::zero();

  int max_order() const {
    int m = 0;
    for (const auto& t : terms) m = std::max(m, t.order);
    return m;
  }

  void add_term(int order, Coefficient c) {
    if (order < 0 || order > kMaxDerivOrder) {
      throw UnsupportedOrderError("DiffOperator: term order " +
                                  std::to_string(order) +
                                  " outside [0," +
                                  std::to_string(kMaxDerivOrder) + "]");
    }
    for (auto& t : terms) {
      if (t.order == order) {
        t.coeff = t.coeff.plus(std::move(c));
        return;
      }
    }
    terms.push_back({order, std::move(c)});
    std::sort(terms.begin(), terms.end(),
              [](const OperatorTerm& a, const OperatorTerm& b) {
                return a.order < b.order;
              });
  }

  static DiffOperator identity() {
    DiffOperator op;
    op.add_term(0, Coefficient::one());
    return op;
  }

  // d^j/dt^j as a bare operator.
  static DiffOperator derivative(int j) {
    DiffOperator op;
    op.add_term(j, Coefficient::one());
    return op;
  }
};

// L1 + L2: merges term lists (coefficients on equal orders add) and sums
// offsets.
inline DiffOperator merge_operators(const DiffOperator& a,
                                    const DiffOperator& b) {
  DiffOperator out = a;
  for (const auto& t : b.terms) out.add_term(t.order, t.coeff);
  out.offset = a.offset.plus(b.offset);
  return out;
}

// L composed with d^j/dt^j from the right: L(d^j u).  Term orders shift up
// by j; the offset survives only for j = 0 (piecewise-constant offsets
// differentiate to zero between anchors).
inline DiffOperator compose_with_derivative(const DiffOperator& op, int j) {
  if (j == 0) return op;
  DiffOperator out;
  for (const auto& t : op.terms) out.add_term(t.order + j, t.coeff);
  out.offset = Coefficient::zero();
  return out;
}

// cov((L1 u)(t), (L2 u)(t2)); offsets do not contribute.
inline double op_cov(const DiffOperator& a, const DiffOperator& b,
                     const SEKernelD& k, double t, double t2,
                     const Eigen::VectorXd& theta) {
  double acc = 0.0;
  for (const auto& ta : a.terms) {
    const double ca = ta.coeff.eval(t, theta);
    if (ca == 0.0) continue;
    for (const auto& tb : b.terms) {
      const double cb = tb.coeff.eval(t2, theta);
      if (cb == 0.0) continue;
      acc += ca * cb * se_eval_deriv(k, ta.order, tb.order, t, t2);
    }
  }
  return acc;
}

struct OpCovGrad {
  double value = 0.0;
  Eigen::VectorXd d_theta;     // via coefficient parameter gradients
  double d_amplitude = 0.0;    // via kernel hyperparameters
  double d_length_scale = 0.0;
};

// op_cov together with its gradient in theta and the kernel
// hyperparameters (product rule over coefficient pairs).
inline OpCovGrad op_cov_grad(const DiffOperator& a, const DiffOperator& b,
                             const SEKernelD& k, double t, double t2,
                             const Eigen::VectorXd& theta) {
  OpCovGrad out;
  out.d_theta = Eigen::VectorXd::Zero(theta.size());
  Eigen::VectorXd ga(theta.size()), gb(theta.size());
  for (const auto& ta : a.terms) {
    const double ca = ta.coeff.eval(t, theta, &ga);
    for (const auto& tb : b.terms) {
      const double cb = tb.coeff.eval(t2, theta, &gb);
      const auto kd = se_eval_hyper_grad(k, ta.order, tb.order, t, t2);
      out.value += ca * cb * kd.value;
      out.d_theta += (ga * cb + gb * ca) * kd.value;
      out.d_amplitude += ca * cb * kd.d_amplitude;
      out.d_length_scale += ca * cb * kd.d_length_scale;
    }
  }
  return out;
}

// Additive mean offset b(t, theta) of the transformed process.
inline double op_offset(const DiffOperator& a, double t,
                        const Eigen::VectorXd& theta) {
  return a.offset.eval(t, theta);
}

inline double op_offset_grad(const DiffOperator& a, double t,
                             const Eigen::VectorXd& theta,
                             Eigen::VectorXd& grad) {
  return a.offset.eval(t, theta, &grad);
}

}  // namespace megpr
