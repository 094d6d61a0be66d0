#pragma once

// Joint Gram matrix over observation and constraint channels, the log
// marginal likelihood, and its analytic gradient.
//
// Every stacked row is "a linear differential operator applied to u,
// evaluated at a time", so the noiseless Gram has the uniform form
//
//   K[r,c] = sum_m sum_n C_m[r] C_n[c] (-1)^m d_{m+n}(t_r, t_c),
//
// where C_m[r] is the order-m coefficient of row r's operator at its own
// time and d_q collects the kernel's q-th derivative factor (see
// SEDerivTable).  Assembly therefore reduces to a handful of outer-product
// masked additions over precomputed N x N arrays, which is what makes the
// optimizer affordable: per-entry scalar evaluation exists separately
// (op_cov) and doubles as the oracle the vectorized path is tested against.
//
// Noise enters as diagonal additions only: per-channel observation noise
// sigma_y on data rows and the constraint regularizer sigma_v on
// constraint rows.

#include <megpr/chol.hpp>
#include <megpr/kernel.hpp>
#include <megpr/system.hpp>

#include <Eigen/Core>

namespace megpr {

// Kernel hyperparameters plus noise, the beta of the joint objective.
struct Hyper {
  SEKernelD kernel;
  NoiseSpec noise;

  void validate(int n_channels) const {
    kernel.validate();
    noise.validate();
    if (noise.obs_noise.size() != n_channels) {
      throw ConfigError("Hyper: obs_noise must have one entry per channel");
    }
  }
};

struct JointGram {
  Eigen::MatrixXd K;  // noisy Gram actually factorized (jitter included)
  CholResult chol;
  int n_obs = 0;
  int n_con = 0;
};

// Per-row operator coefficients, the C_m vectors above (optionally with
// their theta gradients), evaluated once per (theta, constraint draw).
struct RowCoeffs {
  int max_order = 0;
  std::vector<Eigen::VectorXd> c;                  // [m] -> N-vector
  std::vector<std::vector<Eigen::VectorXd>> dc;    // [p][m] -> N-vector
};

RowCoeffs row_coefficients(const SystemModel& model, const StackedLayout& layout,
                           const Eigen::VectorXd& theta, bool with_theta_grad);

// Coefficient vectors of a single operator over a batch of times
// (entry [m] holds the order-m coefficient at each time).
std::vector<Eigen::VectorXd> op_coefficients(const DiffOperator& op,
                                             const Eigen::VectorXd& times,
                                             const Eigen::VectorXd& theta);

// sum_{m,n} (-1)^m a_m b_n' (elementwise) tab[m+n] over a rectangular
// grid: a_m spans the rows, b_n the columns, tab the row x col tables.
// This single bilinear form yields the Gram, every dK/dtheta block, and
// all cross-covariance matrices.
Eigen::MatrixXd bilinear_cross(const std::vector<Eigen::VectorXd>& a,
                               const std::vector<Eigen::VectorXd>& b,
                               const std::vector<Eigen::ArrayXXd>& tab);

// Noiseless Gram via the vectorized tables (rows == cols == layout rows).
Eigen::MatrixXd assemble_gram_noiseless(const RowCoeffs& coeffs,
                                        const SEDerivTable& table);

JointGram assemble_gram(const SystemModel& model, const Dataset& data,
                        const StackedLayout& layout,
                        const Eigen::VectorXd& theta, const Hyper& hyper);

// log N(z | 0, K) = -z'K^{-1}z/2 - log|K|/2 - (rows/2) log 2pi.
double log_marginal_likelihood(const JointGram& gram, const Eigen::VectorXd& z);

// Convenience: assemble, center, evaluate.
double log_marginal_likelihood(const SystemModel& model, const Dataset& data,
                               const StackedLayout& layout,
                               const Eigen::VectorXd& theta,
                               const Hyper& hyper);

struct LmlGradient {
  double value = 0.0;
  Eigen::VectorXd grad_theta;     // d lml / d theta
  double d_amplitude = 0.0;       // d lml / d kernel amplitude
  double d_length_scale = 0.0;    // d lml / d kernel length scale
  Eigen::VectorXd d_sigma_y;      // d lml / d per-channel noise
};

// Value and full analytic gradient.  theta enters through the operator
// coefficients (dK) and the offsets (dz); hyperparameters enter through
// the kernel tables and the noise diagonal.
LmlGradient lml_gradient(const SystemModel& model, const Dataset& data,
                         const StackedLayout& layout,
                         const Eigen::VectorXd& theta, const Hyper& hyper);

}  // namespace megpr
