#pragma once

// Squared-exponential kernel with closed-form mixed derivatives.
//
// The covariance between derivatives of a GP-distributed function u is
// obtained by differentiating the base kernel:
//
//   cov(u^(m)(t), u^(n)(t')) = d^m/dt^m d^n/dt'^n k(t, t').
//
// For k(t,t') = a^2 exp(-(t-t')^2 / (2 l^2)) every mixed derivative has a
// closed form in terms of probabilists' Hermite polynomials He_q.  With
// r = (t - t')/l and phi(r) = exp(-r^2/2),
//
//   d^m/dt^m d^n/dt'^n k = a^2 l^-(m+n) (-1)^m He_{m+n}(r) phi(r),
//
// which follows from phi^(q)(r) = (-1)^q He_q(r) phi(r) and the chain rule
// (each d/dt contributes 1/l, each d/dt' contributes -1/l).

#include <megpr/common.hpp>

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <vector>

namespace megpr {

// Highest derivative order supported per argument.
inline constexpr int kMaxDerivOrder = 4;

// Squared-exponential kernel hyperparameters.
template <typename Scalar = double>
struct SEKernel {
  Scalar amplitude = Scalar(1);     // a: prior standard deviation of u
  Scalar length_scale = Scalar(1);  // l: correlation length in t

  void validate() const {
    if (!(amplitude > Scalar(0)) || !std::isfinite(double(amplitude))) {
      throw DomainError("SEKernel: amplitude must be positive and finite");
    }
    if (!(length_scale > Scalar(0)) || !std::isfinite(double(length_scale))) {
      throw DomainError("SEKernel: length_scale must be positive and finite");
    }
  }
};

using SEKernelD = SEKernel<double>;

// Probabilists' Hermite polynomials He_0..He_q at r, via the recurrence
// He_{q+1}(r) = r He_q(r) - q He_{q-1}(r).
template <typename Scalar>
inline std::array<Scalar, 2 * kMaxDerivOrder + 1> hermite_sequence(Scalar r,
                                                                   int q_max) {
  std::array<Scalar, 2 * kMaxDerivOrder + 1> he{};
  he[0] = Scalar(1);
  if (q_max >= 1) he[1] = r;
  for (int q = 1; q < q_max; ++q) {
    he[q + 1] = r * he[q] - Scalar(q) * he[q - 1];
  }
  return he;
}

namespace detail {

template <typename Scalar>
inline void check_deriv_args(const SEKernel<Scalar>& k, int m, int n, Scalar t,
                             Scalar t2) {
  k.validate();
  if (m < 0 || n < 0 || m > kMaxDerivOrder || n > kMaxDerivOrder) {
    throw UnsupportedOrderError("se_eval_deriv: order (" + std::to_string(m) +
                                "," + std::to_string(n) +
                                ") outside supported range [0," +
                                std::to_string(kMaxDerivOrder) + "]");
  }
  require_finite(double(t), "kernel input t");
  require_finite(double(t2), "kernel input t2");
}

}  // namespace detail

// Evaluates d^m/dt^m d^n/dt'^n k(t, t').
template <typename Scalar>
Scalar se_eval_deriv(const SEKernel<Scalar>& k, int m, int n, Scalar t,
                     Scalar t2) {
  detail::check_deriv_args(k, m, n, t, t2);
  const int q = m + n;
  const Scalar r = (t - t2) / k.length_scale;
  const auto he = hermite_sequence(r, q);
  const Scalar phi = std::exp(Scalar(-0.5) * r * r);
  const Scalar sign = (m % 2 == 0) ? Scalar(1) : Scalar(-1);
  const Scalar scale =
      k.amplitude * k.amplitude * std::pow(k.length_scale, Scalar(-q));
  return sign * scale * he[q] * phi;
}

// Value of d^m/dt^m d^n/dt'^n k together with its partial derivatives with
// respect to the kernel hyperparameters.
template <typename Scalar>
struct SEDerivHyperGrad {
  Scalar value;
  Scalar d_amplitude;
  Scalar d_length_scale;
};

// Evaluates the mixed derivative and its hyperparameter gradient.
//
// d(value)/da = 2 value / a.  For the length scale, differentiating
// a^2 l^-q He_q(r) phi(r) with r = (t-t')/l (so dr/dl = -r/l) gives
//
//   d(value)/dl = a^2 (-1)^m l^-(q+1) phi(r)
//                 [ (r^2 - q) He_q(r) - q r He_{q-1}(r) ],
//
// using He_q'(r) = q He_{q-1}(r) and phi'(r) = -r phi(r).
template <typename Scalar>
SEDerivHyperGrad<Scalar> se_eval_hyper_grad(const SEKernel<Scalar>& k, int m,
                                            int n, Scalar t, Scalar t2) {
  detail::check_deriv_args(k, m, n, t, t2);
  const int q = m + n;
  const Scalar a = k.amplitude;
  const Scalar l = k.length_scale;
  const Scalar r = (t - t2) / l;
  const auto he = hermite_sequence(r, q);
  const Scalar phi = std::exp(Scalar(-0.5) * r * r);
  const Scalar sign = (m % 2 == 0) ? Scalar(1) : Scalar(-1);

  SEDerivHyperGrad<Scalar> out;
  out.value = sign * a * a * std::pow(l, Scalar(-q)) * he[q] * phi;
  out.d_amplitude = Scalar(2) * out.value / a;
  const Scalar he_qm1 = (q >= 1) ? he[q - 1] : Scalar(0);
  out.d_length_scale = sign * a * a * std::pow(l, Scalar(-q - 1)) * phi *
                       ((r * r - Scalar(q)) * he[q] - Scalar(q) * r * he_qm1);
  return out;
}

// Noise attached to the joint Gram matrix: one observation standard
// deviation per observed component plus the constraint-channel
// regularization sigma_v.  Noise enters only as diagonal additions at Gram
// assembly time; it never appears in cross-covariances.
struct NoiseSpec {
  Eigen::VectorXd obs_noise;  // sigma_y, one entry per observed component
  double constraint_reg = 1e-4;  // sigma_v

  void validate() const {
    for (Eigen::Index i = 0; i < obs_noise.size(); ++i) {
      if (!(obs_noise[i] >= 0.0) || !std::isfinite(obs_noise[i])) {
        throw DomainError("NoiseSpec: obs_noise must be finite and >= 0");
      }
    }
    if (!(constraint_reg >= 0.0) || !std::isfinite(constraint_reg)) {
      throw DomainError("NoiseSpec: constraint_reg must be finite and >= 0");
    }
  }
};

// --- Vectorized derivative tables ----------------------------------------
//
// Gram assembly needs d^m/dt^m d^n/dt'^n k over a full grid of time pairs
// for every order combination.  Since the mixed derivative factorizes as
// (-1)^m times a function of q = m+n only, it suffices to precompute per q
//
//   dq[q](i,j)      = a^2 l^-q He_q(r_ij) phi(r_ij)
//   dlen_q[q](i,j)  = d(dq[q])/dl
//
// so that block(m,n) = (-1)^m dq[m+n] and the amplitude partial is
// 2/a * (-1)^m dq[m+n].  The tables are rebuilt whenever the
// hyperparameters change and reused across all operator term pairs.
struct SEDerivTable {
  std::vector<Eigen::ArrayXXd> dq;      // q = 0..q_max
  std::vector<Eigen::ArrayXXd> dlen_q;  // length-scale partials, same layout
  double amplitude = 1.0;

  // Builds tables for all q in [0, q_max] over rows (times r) x cols
  // (times c); with_hyper_grad controls whether dlen_q is populated.
  void build(const SEKernelD& k, const Eigen::VectorXd& rows,
             const Eigen::VectorXd& cols, int q_max, bool with_hyper_grad) {
    k.validate();
    if (q_max < 0 || q_max > 2 * kMaxDerivOrder) {
      throw UnsupportedOrderError("SEDerivTable: q_max out of range");
    }
    amplitude = k.amplitude;
    const double a2 = k.amplitude * k.amplitude;
    const double l = k.length_scale;

    Eigen::ArrayXXd r = (rows.replicate(1, cols.size()).array().rowwise() -
                         cols.transpose().array()) /
                        l;
    Eigen::ArrayXXd phi = (-0.5 * r.square()).exp();

    // Hermite arrays He_0..He_{q_max} via the recurrence.
    std::vector<Eigen::ArrayXXd> he(static_cast<size_t>(q_max) + 1);
    he[0] = Eigen::ArrayXXd::Ones(r.rows(), r.cols());
    if (q_max >= 1) he[1] = r;
    for (int q = 1; q < q_max; ++q) {
      he[q + 1] = r * he[q] - double(q) * he[q - 1];
    }

    dq.assign(static_cast<size_t>(q_max) + 1, {});
    double lq = 1.0;  // l^-q
    for (int q = 0; q <= q_max; ++q) {
      dq[q] = (a2 * lq) * he[q] * phi;
      lq /= l;
    }

    if (with_hyper_grad) {
      dlen_q.assign(static_cast<size_t>(q_max) + 1, {});
      lq = 1.0 / l;  // l^-(q+1)
      for (int q = 0; q <= q_max; ++q) {
        Eigen::ArrayXXd bracket = (r.square() - double(q)) * he[q];
        if (q >= 1) bracket -= double(q) * r * he[q - 1];
        dlen_q[q] = (a2 * lq) * bracket * phi;
        lq /= l;
      }
    } else {
      dlen_q.clear();
    }
  }

  int q_max() const { return static_cast<int>(dq.size()) - 1; }
};

}  // namespace megpr
