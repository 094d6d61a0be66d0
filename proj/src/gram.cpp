#include <megpr/gram.hpp>

#include <cmath>
#include <numbers>

namespace megpr {

RowCoeffs row_coefficients(const SystemModel& model,
                           const StackedLayout& layout,
                           const Eigen::VectorXd& theta, bool with_theta_grad) {
  const int rows = layout.rows();
  const int p = int(theta.size());

  RowCoeffs out;
  out.max_order = model.constraint_op.max_order();
  for (int c : layout.channels) {
    out.max_order =
        std::max(out.max_order, model.component_ops[size_t(c)]->max_order());
  }

  out.c.assign(size_t(out.max_order) + 1, Eigen::VectorXd::Zero(rows));
  if (with_theta_grad) {
    out.dc.assign(size_t(p),
                  std::vector<Eigen::VectorXd>(size_t(out.max_order) + 1,
                                               Eigen::VectorXd::Zero(rows)));
  }

  Eigen::VectorXd g(p);
  for (int r = 0; r < rows; ++r) {
    const DiffOperator& op = row_operator(model, layout, r);
    const double t = layout.row_times[r];
    for (const auto& term : op.terms) {
      const double v =
          term.coeff.eval(t, theta, with_theta_grad ? &g : nullptr);
      out.c[size_t(term.order)][r] = v;
      if (with_theta_grad) {
        for (int q = 0; q < p; ++q) out.dc[size_t(q)][size_t(term.order)][r] = g[q];
      }
    }
  }
  return out;
}

std::vector<Eigen::VectorXd> op_coefficients(const DiffOperator& op,
                                             const Eigen::VectorXd& times,
                                             const Eigen::VectorXd& theta) {
  std::vector<Eigen::VectorXd> out(size_t(op.max_order()) + 1,
                                   Eigen::VectorXd::Zero(times.size()));
  for (Eigen::Index i = 0; i < times.size(); ++i) {
    for (const auto& term : op.terms) {
      out[size_t(term.order)][i] = term.coeff.eval(times[i], theta);
    }
  }
  return out;
}

Eigen::MatrixXd bilinear_cross(const std::vector<Eigen::VectorXd>& a,
                               const std::vector<Eigen::VectorXd>& b,
                               const std::vector<Eigen::ArrayXXd>& tab) {
  const Eigen::Index rows = a.empty() ? 0 : a[0].size();
  const Eigen::Index cols = b.empty() ? 0 : b[0].size();
  if (a.size() + b.size() > tab.size() + 1) {
    throw UnsupportedOrderError("bilinear_cross: derivative table too shallow");
  }
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(rows, cols);
  for (size_t m = 0; m < a.size(); ++m) {
    if (a[m].isZero(0.0)) continue;
    const double sign = (m % 2 == 0) ? 1.0 : -1.0;
    for (size_t q = 0; q < b.size(); ++q) {
      if (b[q].isZero(0.0)) continue;
      K.array() += (sign * a[m]).array().replicate(1, cols) *
                   b[q].transpose().array().replicate(rows, 1) * tab[m + q];
    }
  }
  return K;
}

namespace {

void add_noise_diagonal(Eigen::MatrixXd& K, const StackedLayout& layout,
                        const Hyper& hyper) {
  for (int r = 0; r < layout.rows(); ++r) {
    const int c = layout.row_comp[size_t(r)];
    const double s = (c < 0) ? hyper.noise.constraint_reg
                             : hyper.noise.obs_noise[layout.channel_slot(c)];
    K(r, r) += s * s;
  }
}

}  // namespace

Eigen::MatrixXd assemble_gram_noiseless(const RowCoeffs& coeffs,
                                        const SEDerivTable& table) {
  if (table.q_max() < 2 * coeffs.max_order) {
    throw UnsupportedOrderError("assemble_gram_noiseless: table too shallow");
  }
  return bilinear_cross(coeffs.c, coeffs.c, table.dq);
}

JointGram assemble_gram(const SystemModel& model, const Dataset& data,
                        const StackedLayout& layout,
                        const Eigen::VectorXd& theta, const Hyper& hyper) {
  (void)data;
  hyper.validate(int(layout.channels.size()));
  if (theta.size() != model.n_params()) {
    throw ConfigError("assemble_gram: theta size mismatch");
  }

  RowCoeffs coeffs = row_coefficients(model, layout, theta, false);
  SEDerivTable table;
  table.build(hyper.kernel, layout.row_times, layout.row_times,
              2 * coeffs.max_order, false);

  JointGram gram;
  gram.n_obs = layout.n_obs;
  gram.n_con = layout.n_con;
  gram.K = assemble_gram_noiseless(coeffs, table);
  add_noise_diagonal(gram.K, layout, hyper);
  try {
    gram.chol = chol_with_jitter(gram.K);
  } catch (IllConditionedError& e) {
    throw IllConditionedError(std::string(e.what()) + " (joint Gram)", theta,
                              hyper.noise.obs_noise);
  }
  gram.K.diagonal().array() += gram.chol.jitter;
  return gram;
}

double log_marginal_likelihood(const JointGram& gram,
                               const Eigen::VectorXd& z) {
  if (z.size() != gram.K.rows()) {
    throw ConfigError("log_marginal_likelihood: z size mismatch");
  }
  const double quad = z.dot(gram.chol.llt.solve(z));
  return -0.5 * quad - 0.5 * gram.chol.log_det -
         0.5 * double(z.size()) * std::log(2.0 * std::numbers::pi);
}

double log_marginal_likelihood(const SystemModel& model, const Dataset& data,
                               const StackedLayout& layout,
                               const Eigen::VectorXd& theta,
                               const Hyper& hyper) {
  JointGram gram = assemble_gram(model, data, layout, theta, hyper);
  Eigen::VectorXd z = center_observations(model, data, layout, theta);
  return log_marginal_likelihood(gram, z);
}

LmlGradient lml_gradient(const SystemModel& model, const Dataset& data,
                         const StackedLayout& layout,
                         const Eigen::VectorXd& theta, const Hyper& hyper) {
  hyper.validate(int(layout.channels.size()));
  const int p = int(theta.size());
  const Eigen::Index n = layout.rows();

  RowCoeffs coeffs = row_coefficients(model, layout, theta, true);
  SEDerivTable table;
  table.build(hyper.kernel, layout.row_times, layout.row_times,
              2 * coeffs.max_order, true);

  Eigen::MatrixXd K0 = assemble_gram_noiseless(coeffs, table);
  Eigen::MatrixXd K = K0;
  add_noise_diagonal(K, layout, hyper);
  CholResult ch;
  try {
    ch = chol_with_jitter(K);
  } catch (IllConditionedError& e) {
    throw IllConditionedError(std::string(e.what()) + " (joint Gram)", theta,
                              hyper.noise.obs_noise);
  }

  Eigen::VectorXd z = center_observations(model, data, layout, theta);
  Eigen::MatrixXd dz = center_observations_grad(model, data, layout, theta);
  Eigen::VectorXd alpha = ch.llt.solve(z);
  Eigen::MatrixXd W = ch.llt.solve(Eigen::MatrixXd::Identity(n, n));

  LmlGradient out;
  out.value = -0.5 * z.dot(alpha) - 0.5 * ch.log_det -
              0.5 * double(n) * std::log(2.0 * std::numbers::pi);

  // theta: offsets move z, coefficients move K.
  out.grad_theta = Eigen::VectorXd::Zero(p);
  for (int q = 0; q < p; ++q) {
    Eigen::MatrixXd dK = bilinear_cross(coeffs.dc[size_t(q)], coeffs.c, table.dq);
    dK += bilinear_cross(coeffs.c, coeffs.dc[size_t(q)], table.dq);
    out.grad_theta[q] = -alpha.dot(dz.col(q)) +
                        0.5 * alpha.dot(dK * alpha) -
                        0.5 * (W.array() * dK.array()).sum();
  }

  // Amplitude: dK = (2/a) K0.
  out.d_amplitude =
      (alpha.dot(K0 * alpha) - (W.array() * K0.array()).sum()) /
      hyper.kernel.amplitude;

  // Length scale: same bilinear form over the dlen tables.
  {
    Eigen::MatrixXd dK = bilinear_cross(coeffs.c, coeffs.c, table.dlen_q);
    out.d_length_scale =
        0.5 * alpha.dot(dK * alpha) - 0.5 * (W.array() * dK.array()).sum();
  }

  // Per-channel noise: dK = 2 sigma on that channel's diagonal rows.
  out.d_sigma_y = Eigen::VectorXd::Zero(layout.channels.size());
  for (int r = 0; r < layout.rows(); ++r) {
    const int c = layout.row_comp[size_t(r)];
    if (c < 0) continue;
    const int slot = layout.channel_slot(c);
    out.d_sigma_y[slot] += hyper.noise.obs_noise[slot] *
                           (alpha[r] * alpha[r] - W(r, r));
  }
  return out;
}

}  // namespace megpr
