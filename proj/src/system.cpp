#include <megpr/system.hpp>

#include <cmath>
#include <utility>

namespace megpr {

namespace {

Eigen::VectorXd vec2(double a, double b) {
  Eigen::VectorXd v(2);
  v << a, b;
  return v;
}

Eigen::VectorXd vec3(double a, double b, double c) {
  Eigen::VectorXd v(3);
  v << a, b, c;
  return v;
}

// Anchor value of one state component at the segment owning t.
double anchor_state(const FixedPointTable& table, double t, int comp) {
  return table.states(table.nearest(t), comp);
}

}  // namespace

LinearizedField van_der_pol_field() {
  LinearizedField f;
  f.dim = 2;
  f.n_params = 1;
  f.rhs = [](const Eigen::VectorXd& s, const Eigen::VectorXd& th) {
    return vec2(s[1], th[0] * (1.0 - s[0] * s[0]) * s[1] - s[0]);
  };
  f.jacobian = [](const Eigen::VectorXd& s, const Eigen::VectorXd& th) {
    Eigen::MatrixXd J(2, 2);
    J << 0.0, 1.0,  //
        -2.0 * th[0] * s[0] * s[1] - 1.0, th[0] * (1.0 - s[0] * s[0]);
    return J;
  };
  f.rhs_param_grad = [](const Eigen::VectorXd& s, const Eigen::VectorXd&) {
    Eigen::MatrixXd g(2, 1);
    g << 0.0, (1.0 - s[0] * s[0]) * s[1];
    return g;
  };
  f.jacobian_param_grad = [](const Eigen::VectorXd& s,
                             const Eigen::VectorXd&) {
    Eigen::MatrixXd dJ(2, 2);
    dJ << 0.0, 0.0,  //
        -2.0 * s[0] * s[1], 1.0 - s[0] * s[0];
    return std::vector<Eigen::MatrixXd>{dJ};
  };
  return f;
}

LinearizedField fitzhugh_nagumo_field() {
  LinearizedField f;
  f.dim = 2;
  f.n_params = 3;
  f.rhs = [](const Eigen::VectorXd& s, const Eigen::VectorXd& th) {
    return vec2(th[2] * (s[0] - s[0] * s[0] * s[0] / 3.0 + s[1]),
                -(s[0] - th[0] + th[1] * s[1]) / th[2]);
  };
  f.jacobian = [](const Eigen::VectorXd& s, const Eigen::VectorXd& th) {
    Eigen::MatrixXd J(2, 2);
    J << th[2] * (1.0 - s[0] * s[0]), th[2],  //
        -1.0 / th[2], -th[1] / th[2];
    return J;
  };
  f.rhs_param_grad = [](const Eigen::VectorXd& s, const Eigen::VectorXd& th) {
    Eigen::MatrixXd g(2, 3);
    g << 0.0, 0.0, s[0] - s[0] * s[0] * s[0] / 3.0 + s[1],  //
        1.0 / th[2], -s[1] / th[2],
        (s[0] - th[0] + th[1] * s[1]) / (th[2] * th[2]);
    return g;
  };
  f.jacobian_param_grad = [](const Eigen::VectorXd& s,
                             const Eigen::VectorXd& th) {
    std::vector<Eigen::MatrixXd> out(3, Eigen::MatrixXd::Zero(2, 2));
    out[1] << 0.0, 0.0,  //
        0.0, -1.0 / th[2];
    out[2] << 1.0 - s[0] * s[0], 1.0,  //
        1.0 / (th[2] * th[2]), th[1] / (th[2] * th[2]);
    return out;
  };
  return f;
}

SystemModel build_linear_chain() {
  SystemModel m;
  m.name = "linear-chain";
  m.dim = 3;
  m.latent = 1;
  m.param_names = {"theta1", "theta2"};
  m.lower_bounds = vec2(1e-3, 1e-3);
  m.upper_bounds = vec2(1e3, 1e3);
  m.init_lo = vec2(0.1, 0.1);
  m.init_hi = vec2(2.0, 2.0);
  m.component_ops.resize(3);

  // x1 = (u' + th2 u) / th1.
  DiffOperator x1;
  x1.add_term(1, Coefficient::parametric(
                     [](double, const Eigen::VectorXd& th, Eigen::VectorXd* g) {
                       if (g) (*g) << -1.0 / (th[0] * th[0]), 0.0;
                       return 1.0 / th[0];
                     }));
  x1.add_term(0, Coefficient::parametric(
                     [](double, const Eigen::VectorXd& th, Eigen::VectorXd* g) {
                       if (g) (*g) << -th[1] / (th[0] * th[0]), 1.0 / th[0];
                       return th[1] / th[0];
                     }));
  m.component_ops[0] = std::move(x1);

  m.component_ops[1] = DiffOperator::identity();
  // x3 integrates x2 and has no differential-operator form in u.
  m.component_ops[2] = std::nullopt;

  // u'' + (th1 + th2) u' + th1 th2 u = 0.
  DiffOperator con;
  con.add_term(2, Coefficient::one());
  con.add_term(1, Coefficient::parametric(
                      [](double, const Eigen::VectorXd& th, Eigen::VectorXd* g) {
                        if (g) (*g) << 1.0, 1.0;
                        return th[0] + th[1];
                      }));
  con.add_term(0, Coefficient::parametric(
                      [](double, const Eigen::VectorXd& th, Eigen::VectorXd* g) {
                        if (g) (*g) << th[1], th[0];
                        return th[0] * th[1];
                      }));
  m.constraint_op = std::move(con);
  return m;
}

SystemModel build_van_der_pol(const FixedPointTable& anchors) {
  anchors.validate();
  if (anchors.states.cols() != 2) {
    throw ConfigError("build_van_der_pol: anchors must have two components");
  }
  SystemModel m;
  m.name = "van-der-pol";
  m.dim = 2;
  m.latent = 0;
  m.param_names = {"theta"};
  m.lower_bounds = Eigen::VectorXd::Constant(1, 1e-3);
  m.upper_bounds = Eigen::VectorXd::Constant(1, 1e3);
  m.init_lo = Eigen::VectorXd::Constant(1, 0.1);
  m.init_hi = Eigen::VectorXd::Constant(1, 2.0);
  m.component_ops.resize(2);

  m.component_ops[0] = DiffOperator::identity();
  m.component_ops[1] = DiffOperator::derivative(1);  // w = u'

  // Linearizing the damping gives u'' = Jt21 u + Jt22 u' + ct2 on each
  // segment; the residual is stored as Jt21 u + Jt22 u' - u'' + ct2, so
  // constraint targets center to -ct2.
  PiecewiseLinearization lin = linearize(van_der_pol_field(), anchors);
  DiffOperator con;
  con.add_term(0, lin.jac_coeff(1, 0));
  con.add_term(1, lin.jac_coeff(1, 1));
  con.add_term(2, Coefficient::constant(-1.0));
  con.offset = lin.offset_coeff(1);
  m.constraint_op = std::move(con);
  return m;
}

SystemModel build_fitzhugh_nagumo(const FixedPointTable& anchors) {
  anchors.validate();
  if (anchors.states.cols() != 2) {
    throw ConfigError("build_fitzhugh_nagumo: anchors must have two components");
  }
  SystemModel m;
  m.name = "fitzhugh-nagumo";
  m.dim = 2;
  m.latent = 0;
  m.param_names = {"theta1", "theta2", "theta3"};
  m.lower_bounds = vec3(1e-3, 1e-3, 0.1);
  m.upper_bounds = vec3(1e3, 1e3, 1e3);
  // Classic FitzHugh-Nagumo parameterizations put the nullcline offset,
  // the recovery slope, and the timescale ratio anywhere from well below
  // one up to the mid single digits, so starts are drawn wide enough to
  // reach every regime.
  m.init_lo = vec3(0.1, 0.1, 0.1);
  m.init_hi = vec3(6.0, 6.0, 6.0);
  m.component_ops.resize(2);

  m.component_ops[0] = DiffOperator::identity();

  // Inverting the linearized first equation
  //   u' = th3 (1 - u0^2) u + th3 x2 + th3 (2/3) u0^3
  // yields x2 = u'/th3 - (1 - u0^2) u - (2/3) u0^3.
  const FixedPointTable table = anchors;
  DiffOperator x2;
  x2.add_term(1, Coefficient::parametric(
                     [](double, const Eigen::VectorXd& th, Eigen::VectorXd* g) {
                       if (g) (*g) << 0.0, 0.0, -1.0 / (th[2] * th[2]);
                       return 1.0 / th[2];
                     }));
  x2.add_term(0, Coefficient::piecewise(
                     [table](double t, const Eigen::VectorXd&,
                             Eigen::VectorXd* g) {
                       if (g) g->setZero();
                       const double u0 = anchor_state(table, t, 0);
                       return -(1.0 - u0 * u0);
                     }));
  x2.offset = Coefficient::piecewise(
      [table](double t, const Eigen::VectorXd&, Eigen::VectorXd* g) {
        if (g) g->setZero();
        const double u0 = anchor_state(table, t, 0);
        return -(2.0 / 3.0) * u0 * u0 * u0;
      });
  m.component_ops[1] = std::move(x2);

  // Substituting x2 into x2' = -(u - th1 + th2 x2)/th3 (already affine)
  // and moving everything left gives the residual operator below; it
  // vanishes on trajectories of the linearized system.
  DiffOperator con;
  con.add_term(2, Coefficient::parametric(
                      [](double, const Eigen::VectorXd& th, Eigen::VectorXd* g) {
                        if (g) (*g) << 0.0, 0.0, -1.0 / (th[2] * th[2]);
                        return 1.0 / th[2];
                      }));
  con.add_term(1, Coefficient::piecewise(
                      [table](double t, const Eigen::VectorXd& th,
                              Eigen::VectorXd* g) {
                        const double u0 = anchor_state(table, t, 0);
                        const double th3sq = th[2] * th[2];
                        if (g) {
                          (*g) << 0.0, 1.0 / th3sq,
                              -2.0 * th[1] / (th3sq * th[2]);
                        }
                        return -(1.0 - u0 * u0) + th[1] / th3sq;
                      }));
  con.add_term(0, Coefficient::piecewise(
                      [table](double t, const Eigen::VectorXd& th,
                              Eigen::VectorXd* g) {
                        const double u0 = anchor_state(table, t, 0);
                        const double one_mu = 1.0 - u0 * u0;
                        const double th3sq = th[2] * th[2];
                        if (g) {
                          (*g) << 0.0, -one_mu / th[2],
                              -1.0 / th3sq + th[1] * one_mu / th3sq;
                        }
                        return 1.0 / th[2] - (th[1] / th[2]) * one_mu;
                      }));
  con.offset = Coefficient::piecewise(
      [table](double t, const Eigen::VectorXd& th, Eigen::VectorXd* g) {
        const double u0 = anchor_state(table, t, 0);
        const double cube = (2.0 / 3.0) * u0 * u0 * u0;
        const double th3sq = th[2] * th[2];
        if (g) {
          (*g) << -1.0 / th[2], -cube / th[2],
              cube * th[1] / th3sq + th[0] / th3sq;
        }
        return -(th[1] / th[2]) * cube - th[0] / th[2];
      });
  m.constraint_op = std::move(con);
  return m;
}

const SystemInfo& system_info(const std::string& name) {
  static const std::vector<SystemInfo> registry = [] {
    std::vector<SystemInfo> r;
    {
      SystemInfo s;
      s.name = "linear-chain";
      s.dim = 3;
      s.n_params = 2;
      s.latent = 1;
      s.default_theta = vec2(1.0, 1.0);
      s.default_x0 = vec3(1.0, 0.0, 0.0);
      s.default_t_max = 10.0;
      s.observed_default = {1};
      s.needs_linearization = false;
      r.push_back(std::move(s));
    }
    {
      SystemInfo s;
      s.name = "van-der-pol";
      s.dim = 2;
      s.n_params = 1;
      s.latent = 0;
      s.default_theta = Eigen::VectorXd::Constant(1, 0.5);
      s.default_x0 = vec2(2.0, 0.0);
      s.default_t_max = 20.0;
      s.observed_default = {0};
      s.needs_linearization = true;
      s.anchor_components = {0, 1};
      s.smoother.direct = {0};
      s.smoother.derived = {{1, 0, 1}};  // w anchored by d/dt of u's smoother
      r.push_back(std::move(s));
    }
    {
      SystemInfo s;
      s.name = "fitzhugh-nagumo";
      s.dim = 2;
      s.n_params = 3;
      s.latent = 0;
      s.default_theta = vec3(0.2, 0.2, 3.0);
      s.default_x0 = vec2(-1.0, 1.0);
      s.default_t_max = 20.0;
      s.observed_default = {0, 1};
      s.needs_linearization = true;
      s.anchor_components = {0};
      s.smoother.direct = {0, 1};
      r.push_back(std::move(s));
    }
    return r;
  }();
  for (const auto& s : registry) {
    if (s.name == name) return s;
  }
  throw ConfigError("unknown system '" + name +
                    "'; known systems: linear-chain, van-der-pol, "
                    "fitzhugh-nagumo");
}

std::vector<std::string> system_names() {
  return {"linear-chain", "van-der-pol", "fitzhugh-nagumo"};
}

OdeSystem system_ode(const std::string& name) {
  if (name == "linear-chain") return linear_chain_ode();
  if (name == "van-der-pol") return van_der_pol_ode();
  if (name == "fitzhugh-nagumo") return fitzhugh_nagumo_ode();
  throw ConfigError("unknown system '" + name + "'");
}

SystemModel build_system(const std::string& name,
                         const FixedPointTable* anchors) {
  const SystemInfo& info = system_info(name);
  if (!info.needs_linearization) return build_linear_chain();
  if (anchors == nullptr) {
    throw ConfigError("build_system: '" + name + "' needs fixed-point anchors");
  }
  if (name == "van-der-pol") return build_van_der_pol(*anchors);
  return build_fitzhugh_nagumo(*anchors);
}

PreparedModel prepare_model(const std::string& system, const Dataset& data,
                            const PrepOptions& opts) {
  data.validate();
  const SystemInfo& info = system_info(system);
  PreparedModel out;

  if (!info.needs_linearization) {
    out.model = build_system(system, nullptr);
    return out;
  }

  // Raw observations qualify as anchors only when the noise is small
  // relative to the data's dynamic range and every state the Jacobian
  // reads is observed.  The cut matters: a smoother shrinks trajectory
  // extremes toward the mean, and Jacobian coefficients that square the
  // state inherit that shrinkage as a systematic parameter bias, so raw
  // anchors are preferred whenever their (unbiased) pointwise noise is
  // genuinely small.
  bool raw_ok = false;
  if (!opts.force_smoother && opts.noise_sigma.has_value()) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < data.n_times(); ++i) {
      for (Eigen::Index j = 0; j < data.dim(); ++j) {
        if (data.present(i, j)) {
          lo = std::min(lo, data.values(i, j));
          hi = std::max(hi, data.values(i, j));
        }
      }
    }
    const double pooled_range = hi > lo ? hi - lo : 0.0;
    raw_ok = *opts.noise_sigma <= 0.05 * pooled_range;
    if (raw_ok) {
      for (int c : info.anchor_components) {
        for (Eigen::Index i = 0; i < data.n_times(); ++i) {
          raw_ok = raw_ok && data.present(i, c);
        }
      }
    }
  }

  if (raw_ok) {
    out.anchors = fixed_points_from_observations(data, info.anchor_components);
  } else {
    SmoothedAnchors sm = fixed_points_from_gpr(data, info.smoother, opts.gpr);
    out.anchors = std::move(sm.table);
    out.used_smoother = true;
    out.smoother_fallback = sm.any_median_fallback;
    out.smoother_models = std::move(sm.models);
  }
  out.model = build_system(system, &out.anchors);
  return out;
}

StackedLayout make_layout(const SystemModel& model, const Dataset& data,
                          const Eigen::VectorXd& constraint_times) {
  model.validate();
  data.validate();
  if (data.dim() != model.dim) {
    throw ConfigError("make_layout: dataset dimension does not match model");
  }

  StackedLayout layout;
  for (int c = 0; c < model.dim; ++c) {
    bool any = false;
    for (Eigen::Index i = 0; i < data.n_times(); ++i) {
      any = any || data.present(i, c);
    }
    if (!any) continue;
    if (!model.component_ops[size_t(c)]) {
      throw ConfigError(
          "make_layout: component " + std::to_string(c + 1) +
          " has observations but no operator form; drop that column");
    }
    layout.channels.push_back(c);
  }
  if (layout.channels.empty()) {
    throw ConfigError("make_layout: no observed components");
  }

  std::vector<double> times;
  for (int c : layout.channels) {
    for (Eigen::Index i = 0; i < data.n_times(); ++i) {
      if (!data.present(i, c)) continue;
      layout.row_comp.push_back(c);
      layout.row_index.push_back(int(i));
      times.push_back(data.times[i]);
      ++layout.n_obs;
    }
  }
  for (Eigen::Index i = 0; i < constraint_times.size(); ++i) {
    require_finite(constraint_times[i], "constraint time");
    layout.row_comp.push_back(-1);
    layout.row_index.push_back(int(i));
    times.push_back(constraint_times[i]);
    ++layout.n_con;
  }
  layout.row_times =
      Eigen::Map<const Eigen::VectorXd>(times.data(), Eigen::Index(times.size()));
  return layout;
}

const DiffOperator& row_operator(const SystemModel& model,
                                 const StackedLayout& layout, int row) {
  const int c = layout.row_comp[size_t(row)];
  if (c < 0) return model.constraint_op;
  return *model.component_ops[size_t(c)];
}

Eigen::VectorXd center_observations(const SystemModel& model,
                                    const Dataset& data,
                                    const StackedLayout& layout,
                                    const Eigen::VectorXd& theta) {
  Eigen::VectorXd z(layout.rows());
  for (int r = 0; r < layout.rows(); ++r) {
    const int c = layout.row_comp[size_t(r)];
    const double t = layout.row_times[r];
    const double y =
        (c >= 0) ? data.values(layout.row_index[size_t(r)], c) : 0.0;
    z[r] = y - op_offset(row_operator(model, layout, r), t, theta);
  }
  return z;
}

Eigen::MatrixXd center_observations_grad(const SystemModel& model,
                                         const Dataset& data,
                                         const StackedLayout& layout,
                                         const Eigen::VectorXd& theta) {
  (void)data;
  Eigen::MatrixXd dz(layout.rows(), theta.size());
  Eigen::VectorXd g(theta.size());
  for (int r = 0; r < layout.rows(); ++r) {
    const double t = layout.row_times[r];
    op_offset_grad(row_operator(model, layout, r), t, theta, g);
    dz.row(r) = -g.transpose();
  }
  return dz;
}

}  // namespace megpr
