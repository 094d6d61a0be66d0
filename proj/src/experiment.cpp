#include <megpr/experiment.hpp>

#include <megpr/init_guess.hpp>
#include <megpr/ode.hpp>

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <iostream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

namespace megpr {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_num(const std::string& s, const char* where) {
  const std::string t = trim(s);
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (t.empty() || end != t.c_str() + t.size()) {
    throw ConfigError(std::string(where) + ": cannot parse number '" + s + "'");
  }
  return v;
}

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), Eigen::Index(v.size()));
}

Eigen::VectorXd linspace(double lo, double hi, int n) {
  return Eigen::VectorXd::LinSpaced(n, lo, hi);
}

}  // namespace

// --- Fit options -------------------------------------------------------------

FitOptions fit_options_from_config(const Config& cfg) {
  FitOptions o;
  o.config.iterations = cfg.get_int("iterations", o.config.iterations);
  o.config.learning_rate =
      cfg.get_double("learning_rate", o.config.learning_rate);
  o.config.n_constraints =
      cfg.get_int("n_constraints", o.config.n_constraints);
  const std::string mode = cfg.get_string("constraint_mode", "rejection");
  if (mode == "rejection") {
    o.config.mode = ConstraintMode::rejection;
  } else if (mode == "uniform") {
    o.config.mode = ConstraintMode::uniform;
  } else {
    throw ConfigError("constraint_mode must be 'uniform' or 'rejection'");
  }
  o.config.refresh_every = cfg.get_int("refresh_every", o.config.refresh_every);
  o.config.sigma_v = cfg.get_double("sigma_v", o.config.sigma_v);
  o.config.seed = std::uint64_t(cfg.get_int("seed", 0));
  o.config.ema_decay = cfg.get_double("ema_decay", o.config.ema_decay);
  o.config.plateau_rel_tol =
      cfg.get_double("plateau_rel_tol", o.config.plateau_rel_tol);
  o.config.plateau_window =
      cfg.get_int("plateau_window", o.config.plateau_window);
  o.config.max_chol_retries =
      cfg.get_int("max_chol_retries", o.config.max_chol_retries);
  if (cfg.has("theta_init")) {
    o.config.theta_init = to_vector(cfg.get_list("theta_init"));
  }
  if (cfg.has("theta_bounds")) {
    const std::vector<double> b = cfg.get_list("theta_bounds");
    if (b.size() % 2 != 0 || b.empty()) {
      throw ConfigError("theta_bounds: expected lo,hi pairs per parameter");
    }
    const Eigen::Index p = Eigen::Index(b.size() / 2);
    Eigen::VectorXd lo(p), hi(p);
    for (Eigen::Index i = 0; i < p; ++i) {
      lo[i] = b[size_t(2 * i)];
      hi[i] = b[size_t(2 * i + 1)];
      if (!(lo[i] < hi[i])) {
        throw ConfigError("theta_bounds: each pair needs lo < hi");
      }
    }
    o.theta_lower = lo;
    o.theta_upper = hi;
  }
  const std::string init = cfg.get_string("init_mode", "uniform");
  if (init == "uniform") {
    o.init_mode = InitMode::uniform;
  } else if (init == "constraint-match") {
    o.init_mode = InitMode::constraint_match;
  } else {
    throw ConfigError("init_mode must be 'uniform' or 'constraint-match'");
  }
  o.mc_anchor_samples = cfg.get_int("mc_anchor_samples", 1);
  if (o.mc_anchor_samples < 1) {
    throw ConfigError("mc_anchor_samples must be >= 1");
  }
  if (cfg.has("noise_sigma")) {
    o.prep.noise_sigma = cfg.get_double("noise_sigma", 0.0);
  }
  o.prep.force_smoother = cfg.get_bool("force_smoother", false);
  return o;
}

namespace {

void apply_bounds_override(SystemModel& model, const FitOptions& opts) {
  if (!opts.theta_lower && !opts.theta_upper) return;
  if (!opts.theta_lower || !opts.theta_upper ||
      opts.theta_lower->size() != model.n_params() ||
      opts.theta_upper->size() != model.n_params()) {
    throw ConfigError("theta_bounds: need one lo,hi pair per parameter");
  }
  model.lower_bounds = *opts.theta_lower;
  model.upper_bounds = *opts.theta_upper;
  model.init_lo = model.init_lo.cwiseMax(model.lower_bounds);
  model.init_hi = model.init_hi.cwiseMin(model.upper_bounds);
  for (Eigen::Index i = 0; i < model.init_lo.size(); ++i) {
    if (!(model.init_lo[i] < model.init_hi[i])) {
      model.init_lo[i] = model.lower_bounds[i];
      model.init_hi[i] = model.upper_bounds[i];
    }
  }
}

}  // namespace

EstimationResult fit_dataset(const std::string& system, const Dataset& data,
                             const FitOptions& opts, PreparedModel* prep_out) {
  PreparedModel prep = prepare_model(system, data, opts.prep);
  apply_bounds_override(prep.model, opts);

  FitConfig cfg = opts.config;
  if (!cfg.theta_init && opts.init_mode == InitMode::constraint_match) {
    const FixedPointTable* table =
        prep.anchors.size() > 0 ? &prep.anchors : nullptr;
    if (const std::optional<InitGuess> guess = constraint_match_init(
            prep.model, data, table, split_seed(cfg.seed, 3))) {
      cfg.theta_init = guess->theta;
    }
  }

  EstimationResult result;
  const bool uncertain_anchors =
      prep.anchors.size() > 0 && prep.anchors.variances.size() > 0 &&
      prep.anchors.variances.maxCoeff() > 0.0;
  if (opts.mc_anchor_samples > 1 && uncertain_anchors) {
    const std::vector<FixedPointTable> tables = draw_anchor_tables(
        prep.anchors, opts.mc_anchor_samples, split_seed(cfg.seed, 2));
    std::vector<SystemModel> ensemble;
    ensemble.reserve(tables.size());
    for (const FixedPointTable& table : tables) {
      SystemModel m = build_system(system, &table);
      apply_bounds_override(m, opts);
      ensemble.push_back(std::move(m));
    }
    result = semi_adam_fit(ensemble, data, cfg);
  } else {
    result = semi_adam_fit(prep.model, data, cfg);
  }
  if (prep_out != nullptr) *prep_out = std::move(prep);
  return result;
}

// --- Spec ---------------------------------------------------------------------

void ExperimentSpec::validate() const {
  system_info(system);  // throws on unknown names
  if (trials < 1) throw ConfigError("ExperimentSpec: trials must be >= 1");
  if (n_values.empty() || sigma_values.empty()) {
    throw ConfigError("ExperimentSpec: need at least one n and one sigma");
  }
  for (int n : n_values) {
    if (n < 3) throw ConfigError("ExperimentSpec: n must be >= 3");
  }
  for (double s : sigma_values) {
    if (!(s >= 0.0) || !std::isfinite(s)) {
      throw ConfigError("ExperimentSpec: sigma must be finite and >= 0");
    }
  }
  if (mse_grid < 10) throw ConfigError("ExperimentSpec: mse_grid too small");
}

ExperimentSpec ExperimentSpec::from_config(const Config& cfg) {
  ExperimentSpec spec;
  spec.name = cfg.get_string("name", spec.name);
  spec.system = cfg.get_string("system", "");
  if (spec.system.empty()) {
    throw ConfigError("experiment spec: missing required key 'system'");
  }
  const SystemInfo& info = system_info(spec.system);
  spec.n_values = cfg.get_int_list("n");
  if (spec.n_values.empty()) spec.n_values = {100};
  spec.sigma_values = cfg.get_list("sigma");
  if (spec.sigma_values.empty()) spec.sigma_values = {0.1};
  spec.trials = cfg.get_int("trials", spec.trials);
  spec.seed = std::uint64_t(cfg.get_int("seed", 1));
  spec.theta_true = cfg.has("theta_true")
                        ? to_vector(cfg.get_list("theta_true"))
                        : info.default_theta;
  if (spec.theta_true.size() != info.n_params) {
    throw ConfigError("theta_true: expected " + std::to_string(info.n_params) +
                      " values for " + spec.system);
  }
  spec.x0 = cfg.has("x0") ? to_vector(cfg.get_list("x0")) : info.default_x0;
  if (spec.x0.size() != info.dim) {
    throw ConfigError("x0: expected " + std::to_string(info.dim) +
                      " values for " + spec.system);
  }
  spec.t_max = cfg.get_double("t_max", info.default_t_max);
  spec.fit = fit_options_from_config(cfg);
  spec.fit.config.record_trace = false;
  spec.compute_mse = cfg.get_bool("compute_mse", false);
  spec.mse_grid = cfg.get_int("mse_grid", spec.mse_grid);
  spec.workers = cfg.get_int("workers", 0);
  cfg.check_consumed();
  spec.validate();
  return spec;
}

// --- Data generation -----------------------------------------------------------

Dataset generate_dataset(const std::string& system, int n, double sigma,
                         const Eigen::VectorXd& theta,
                         const Eigen::VectorXd& x0, double t_max,
                         std::uint64_t seed) {
  const SystemInfo& info = system_info(system);
  if (n < 3) throw ConfigError("generate_dataset: n must be >= 3");
  if (!(t_max > 0.0)) throw ConfigError("generate_dataset: t_max must be > 0");

  Eigen::VectorXd grid(n);
  for (int i = 0; i < n; ++i) grid[i] = (i + 0.5) * t_max / n;
  const Eigen::MatrixXd traj =
      rk4_integrate(system_ode(system), theta, x0, grid);

  Dataset data;
  data.times = grid;
  data.t_max = t_max;
  data.values.setConstant(n, info.dim,
                          std::numeric_limits<double>::quiet_NaN());
  data.present.setConstant(n, info.dim, false);

  std::mt19937_64 rng = make_rng(seed, 0);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int comp : info.observed_default) {
    for (int i = 0; i < n; ++i) {
      double v = traj(i, comp);
      if (sigma > 0.0) v += sigma * noise(rng);
      data.values(i, comp) = v;
      data.present(i, comp) = true;
    }
  }
  data.validate();
  return data;
}

// --- Aggregation ----------------------------------------------------------------

void aggregate_cell(CellReport& cell) {
  const Eigen::Index p = cell.theta_rows.cols();
  const Eigen::Index trials = cell.theta_rows.rows();
  std::vector<Eigen::Index> ok;
  for (Eigen::Index k = 0; k < trials; ++k) {
    if (std::find(cell.failed.begin(), cell.failed.end(), int(k)) ==
        cell.failed.end()) {
      ok.push_back(k);
    }
  }
  cell.mean = Eigen::VectorXd::Zero(p);
  cell.sd = Eigen::VectorXd::Zero(p);
  cell.single_trial = ok.size() == 1;
  if (ok.empty()) return;
  for (Eigen::Index k : ok) cell.mean += cell.theta_rows.row(k).transpose();
  cell.mean /= double(ok.size());
  if (ok.size() > 1) {
    for (Eigen::Index k : ok) {
      const Eigen::VectorXd d =
          cell.theta_rows.row(k).transpose() - cell.mean;
      cell.sd += d.cwiseProduct(d);
    }
    cell.sd = (cell.sd / double(ok.size() - 1)).cwiseSqrt();
  }
}

// --- MSE block -------------------------------------------------------------------

namespace {

double mse_of(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).squaredNorm() / double(a.size());
}

void compute_mse_block(const ExperimentSpec& spec, std::uint64_t cell_master,
                       int n, double sigma, CellReport& cell,
                       std::vector<PosteriorCurve>& curves_out) {
  const SystemInfo& info = system_info(spec.system);
  const double t_max = spec.t_max;

  Dataset data =
      generate_dataset(spec.system, n, sigma, spec.theta_true, spec.x0, t_max,
                       split_seed(cell_master, std::uint64_t(2 * spec.trials)));
  FitOptions opts = spec.fit;
  opts.config.seed = split_seed(cell_master, std::uint64_t(2 * spec.trials + 1));
  opts.prep.noise_sigma = sigma;
  PreparedModel prep;
  const EstimationResult fit = fit_dataset(spec.system, data, opts, &prep);

  const Eigen::VectorXd grid = linspace(0.0, t_max, spec.mse_grid);
  const OdeSystem ode = system_ode(spec.system);
  const Eigen::MatrixXd truth =
      rk4_integrate(ode, spec.theta_true, spec.x0, grid);
  const Eigen::MatrixXd truth_d1 =
      ode_first_derivatives(ode, spec.theta_true, truth, grid);
  const Eigen::MatrixXd truth_d2 =
      ode_second_derivatives(ode, spec.theta_true, truth, grid);

  const Eigen::MatrixXd est_traj =
      rk4_integrate(ode, fit.theta, spec.x0, grid);
  const Eigen::MatrixXd est_d1 =
      ode_first_derivatives(ode, fit.theta, est_traj, grid);
  const Eigen::MatrixXd est_d2 =
      ode_second_derivatives(ode, fit.theta, est_traj, grid);

  Eigen::VectorXd obs_t, obs_y;
  data.observed_series(info.latent, obs_t, obs_y);

  const int comp = info.latent;
  for (int order = 0; order <= 2; ++order) {
    const Eigen::VectorXd truth_curve =
        order == 0 ? truth.col(comp)
                   : (order == 1 ? truth_d1.col(comp) : truth_d2.col(comp));
    const Eigen::VectorXd est_curve =
        order == 0 ? est_traj.col(comp)
                   : (order == 1 ? est_d1.col(comp) : est_d2.col(comp));

    PosteriorCurve model_curve =
        predict(prep.model, data, fit.constraint_times, fit.theta, fit.hyper,
                comp, order, grid);
    PosteriorCurve gpr_curve = gpr_baseline(obs_t, obs_y, grid, order);

    MseRow row;
    row.order = order;
    row.model = mse_of(model_curve.mean, truth_curve);
    row.ode = mse_of(est_curve, truth_curve);
    row.gpr = mse_of(gpr_curve.mean, truth_curve);
    cell.mse.push_back(row);
    curves_out.push_back(std::move(model_curve));
  }
}

}  // namespace

// --- Trial grid --------------------------------------------------------------------

ExperimentReport run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  const SystemInfo& info = system_info(spec.system);
  const int p = info.n_params;
  if (spec.theta_true.size() != p) {
    throw ConfigError("run_experiment: theta_true size mismatch");
  }
  const double t_max = spec.t_max > 0.0 ? spec.t_max : info.default_t_max;

  ExperimentReport report;
  report.spec = spec;
  report.spec.t_max = t_max;

  std::uint64_t cell_index = 0;
  for (int n : spec.n_values) {
    for (double sigma : spec.sigma_values) {
      ++cell_index;
      const std::uint64_t cell_master = split_seed(spec.seed, cell_index);

      CellReport cell;
      cell.n = n;
      cell.sigma = sigma;
      cell.theta_rows.setConstant(spec.trials, p,
                                  std::numeric_limits<double>::quiet_NaN());

      std::vector<char> ok(size_t(spec.trials), 0);
      std::vector<double> iters(size_t(spec.trials), 0.0);
      std::atomic<int> next{0};
      std::atomic<int> done{0};
      std::mutex err_mutex;
      std::exception_ptr hard_error;

      auto worker = [&]() {
        for (int k = next.fetch_add(1); k < spec.trials;
             k = next.fetch_add(1)) {
          try {
            Dataset data = generate_dataset(
                spec.system, n, sigma, spec.theta_true, spec.x0, t_max,
                split_seed(cell_master, std::uint64_t(2 * k)));
            FitOptions opts = spec.fit;
            opts.config.seed =
                split_seed(cell_master, std::uint64_t(2 * k + 1));
            opts.config.record_trace = false;
            opts.prep.noise_sigma = sigma;
            const EstimationResult res =
                fit_dataset(spec.system, data, opts, nullptr);
            cell.theta_rows.row(k) = res.theta.transpose();
            iters[size_t(k)] = double(res.iterations_run);
            ok[size_t(k)] = 1;
          } catch (const NumericalError&) {
            ok[size_t(k)] = 0;
          } catch (...) {
            std::lock_guard<std::mutex> lock(err_mutex);
            if (!hard_error) hard_error = std::current_exception();
            return;
          }
          const int d = done.fetch_add(1) + 1;
          if (d % 10 == 0 || d == spec.trials) {
            std::lock_guard<std::mutex> lock(err_mutex);
            std::cerr << "  [" << spec.system << " n=" << n
                      << " sigma=" << sigma << "] trial " << d << "/"
                      << spec.trials << "\n";
          }
        }
      };

      int workers = spec.workers > 0
                        ? spec.workers
                        : int(std::thread::hardware_concurrency());
      workers = std::max(1, std::min(workers, spec.trials));
      if (workers == 1) {
        worker();
      } else {
        std::vector<std::thread> pool;
        pool.reserve(size_t(workers));
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (std::thread& th : pool) th.join();
      }
      if (hard_error) std::rethrow_exception(hard_error);

      double iter_sum = 0.0;
      int n_ok = 0;
      for (int k = 0; k < spec.trials; ++k) {
        if (ok[size_t(k)]) {
          iter_sum += iters[size_t(k)];
          ++n_ok;
        } else {
          cell.failed.push_back(k);
        }
      }
      cell.mean_iterations = n_ok > 0 ? iter_sum / n_ok : 0.0;
      if (spec.trials - n_ok > spec.trials / 5) {
        throw NumericalError(
            "run_experiment: more than 20% of trials failed in cell n=" +
            std::to_string(n) + " sigma=" + format_double(sigma));
      }
      aggregate_cell(cell);

      if (spec.compute_mse && cell_index == 1) {
        compute_mse_block(report.spec, cell_master, n, sigma, cell,
                          report.mse_curves);
      }

      {
        std::ostringstream line;
        line << "  [" << spec.system << " n=" << n << " sigma=" << sigma
             << "] mean=(";
        for (int i = 0; i < p; ++i) {
          line << (i ? ", " : "") << cell.mean[i];
        }
        line << ") sd=(";
        for (int i = 0; i < p; ++i) line << (i ? ", " : "") << cell.sd[i];
        line << ") failures=" << cell.failed.size();
        std::cerr << line.str() << "\n";
      }
      report.cells.push_back(std::move(cell));
    }
  }
  return report;
}

// --- Serialization -----------------------------------------------------------------

std::string emit_report_csv(const ExperimentReport& report) {
  std::ostringstream out;
  const ExperimentSpec& spec = report.spec;
  out << "# experiment report\n";
  out << "name," << spec.name << "\n";
  out << "system," << spec.system << "\n";
  out << "params," << spec.theta_true.size() << "\n";
  out << "trials," << spec.trials << "\n";
  out << "seed," << spec.seed << "\n";
  out << "theta_true";
  for (Eigen::Index i = 0; i < spec.theta_true.size(); ++i) {
    out << "," << format_double(spec.theta_true[i]);
  }
  out << "\n";
  out << "t_max," << format_double(spec.t_max) << "\n";
  out << "cells," << report.cells.size() << "\n";
  for (const CellReport& cell : report.cells) {
    out << "begin_cell," << cell.n << "," << format_double(cell.sigma) << "\n";
    for (Eigen::Index k = 0; k < cell.theta_rows.rows(); ++k) {
      const bool failed =
          std::find(cell.failed.begin(), cell.failed.end(), int(k)) !=
          cell.failed.end();
      out << "trial," << k << "," << (failed ? "fail" : "ok");
      if (!failed) {
        for (Eigen::Index i = 0; i < cell.theta_rows.cols(); ++i) {
          out << "," << format_double(cell.theta_rows(k, i));
        }
      }
      out << "\n";
    }
    out << "mean";
    for (Eigen::Index i = 0; i < cell.mean.size(); ++i) {
      out << "," << format_double(cell.mean[i]);
    }
    out << "\n";
    out << "sd";
    for (Eigen::Index i = 0; i < cell.sd.size(); ++i) {
      out << "," << format_double(cell.sd[i]);
    }
    out << "\n";
    out << "single_trial," << (cell.single_trial ? 1 : 0) << "\n";
    out << "mean_iterations," << format_double(cell.mean_iterations) << "\n";
    for (const MseRow& row : cell.mse) {
      out << "mse," << row.order << "," << format_double(row.model) << ","
          << format_double(row.ode) << "," << format_double(row.gpr) << "\n";
    }
    out << "end_cell\n";
  }
  return out.str();
}

ExperimentReport parse_report_csv(const std::string& text) {
  ExperimentReport report;
  std::istringstream in(text);
  std::string line;
  CellReport* cell = nullptr;
  Eigen::Index p = 0;
  auto need = [&](bool cond, const char* what) {
    if (!cond) throw ConfigError(std::string("report parse: ") + what);
  };
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto fields = split(t, ',');
    const std::string& key = fields[0];
    if (key == "name") {
      need(fields.size() == 2, "name row");
      report.spec.name = fields[1];
    } else if (key == "system") {
      need(fields.size() == 2, "system row");
      report.spec.system = fields[1];
    } else if (key == "params") {
      p = Eigen::Index(parse_num(fields.at(1), "params"));
    } else if (key == "trials") {
      report.spec.trials = int(parse_num(fields.at(1), "trials"));
    } else if (key == "seed") {
      report.spec.seed = std::uint64_t(parse_num(fields.at(1), "seed"));
    } else if (key == "theta_true") {
      report.spec.theta_true.resize(Eigen::Index(fields.size()) - 1);
      for (size_t i = 1; i < fields.size(); ++i) {
        report.spec.theta_true[Eigen::Index(i) - 1] =
            parse_num(fields[i], "theta_true");
      }
    } else if (key == "t_max") {
      report.spec.t_max = parse_num(fields.at(1), "t_max");
    } else if (key == "cells") {
      // count is implied by begin_cell/end_cell blocks
    } else if (key == "begin_cell") {
      need(cell == nullptr, "nested begin_cell");
      report.cells.emplace_back();
      cell = &report.cells.back();
      cell->n = int(parse_num(fields.at(1), "cell n"));
      cell->sigma = parse_num(fields.at(2), "cell sigma");
      cell->theta_rows.setConstant(report.spec.trials, p,
                                   std::numeric_limits<double>::quiet_NaN());
    } else if (key == "trial") {
      need(cell != nullptr, "trial outside cell");
      const int k = int(parse_num(fields.at(1), "trial index"));
      need(k >= 0 && k < report.spec.trials, "trial index range");
      if (fields.at(2) == "fail") {
        cell->failed.push_back(k);
      } else {
        need(Eigen::Index(fields.size()) == 3 + p, "trial row width");
        for (Eigen::Index i = 0; i < p; ++i) {
          cell->theta_rows(k, i) = parse_num(fields[size_t(3 + i)], "trial");
        }
      }
    } else if (key == "mean") {
      need(cell != nullptr, "mean outside cell");
      cell->mean.resize(Eigen::Index(fields.size()) - 1);
      for (size_t i = 1; i < fields.size(); ++i) {
        cell->mean[Eigen::Index(i) - 1] = parse_num(fields[i], "mean");
      }
    } else if (key == "sd") {
      need(cell != nullptr, "sd outside cell");
      cell->sd.resize(Eigen::Index(fields.size()) - 1);
      for (size_t i = 1; i < fields.size(); ++i) {
        cell->sd[Eigen::Index(i) - 1] = parse_num(fields[i], "sd");
      }
    } else if (key == "single_trial") {
      need(cell != nullptr, "single_trial outside cell");
      cell->single_trial = parse_num(fields.at(1), "single_trial") != 0.0;
    } else if (key == "mean_iterations") {
      need(cell != nullptr, "mean_iterations outside cell");
      cell->mean_iterations = parse_num(fields.at(1), "mean_iterations");
    } else if (key == "mse") {
      need(cell != nullptr && fields.size() == 5, "mse row");
      MseRow row;
      row.order = int(parse_num(fields[1], "mse order"));
      row.model = parse_num(fields[2], "mse model");
      row.ode = parse_num(fields[3], "mse ode");
      row.gpr = parse_num(fields[4], "mse gpr");
      cell->mse.push_back(row);
    } else if (key == "end_cell") {
      need(cell != nullptr, "end_cell without begin_cell");
      cell = nullptr;
    } else {
      throw ConfigError("report parse: unknown row '" + key + "'");
    }
  }
  need(cell == nullptr, "unterminated cell");
  return report;
}

std::string emit_report_json(const ExperimentReport& report) {
  const ExperimentSpec& spec = report.spec;
  json j;
  j["name"] = spec.name;
  j["system"] = spec.system;
  j["trials"] = spec.trials;
  j["seed"] = spec.seed;
  j["t_max"] = spec.t_max;
  json tt = json::array();
  for (Eigen::Index i = 0; i < spec.theta_true.size(); ++i) {
    tt.push_back(spec.theta_true[i]);
  }
  j["theta_true"] = std::move(tt);
  json cells = json::array();
  for (const CellReport& cell : report.cells) {
    json c;
    c["n"] = cell.n;
    c["sigma"] = cell.sigma;
    json rows = json::array();
    for (Eigen::Index k = 0; k < cell.theta_rows.rows(); ++k) {
      const bool failed =
          std::find(cell.failed.begin(), cell.failed.end(), int(k)) !=
          cell.failed.end();
      if (failed) {
        rows.push_back(nullptr);
      } else {
        json row = json::array();
        for (Eigen::Index i = 0; i < cell.theta_rows.cols(); ++i) {
          row.push_back(cell.theta_rows(k, i));
        }
        rows.push_back(std::move(row));
      }
    }
    c["theta_rows"] = std::move(rows);
    json mean = json::array(), sd = json::array();
    for (Eigen::Index i = 0; i < cell.mean.size(); ++i) {
      mean.push_back(cell.mean[i]);
      sd.push_back(cell.sd[i]);
    }
    c["mean"] = std::move(mean);
    c["sd"] = std::move(sd);
    c["single_trial"] = cell.single_trial;
    c["mean_iterations"] = cell.mean_iterations;
    if (!cell.mse.empty()) {
      json mse = json::array();
      for (const MseRow& row : cell.mse) {
        mse.push_back({{"order", row.order},
                       {"model", row.model},
                       {"ode", row.ode},
                       {"gpr", row.gpr}});
      }
      c["mse"] = std::move(mse);
    }
    cells.push_back(std::move(c));
  }
  j["cells"] = std::move(cells);
  return j.dump(2) + "\n";
}

namespace {

std::string stat_cell(double mean, double sd) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f (%.3f)", mean, sd);
  return buf;
}

std::string order_label(int order) {
  if (order == 0) return "u";
  if (order == 1) return "u'";
  return "u''";
}

}  // namespace

std::string emit_report_markdown(const ExperimentReport& report) {
  const ExperimentSpec& spec = report.spec;
  const Eigen::Index p = spec.theta_true.size();
  std::vector<std::string> names;
  {
    const SystemInfo& info = system_info(spec.system);
    for (int i = 0; i < info.n_params; ++i) {
      names.push_back("theta" + std::to_string(i + 1));
    }
  }

  // Column groups: one per sigma, ascending; row groups: one per (n, param).
  std::vector<double> sigmas;
  std::vector<int> ns;
  for (const CellReport& cell : report.cells) {
    if (std::find(sigmas.begin(), sigmas.end(), cell.sigma) == sigmas.end()) {
      sigmas.push_back(cell.sigma);
    }
    if (std::find(ns.begin(), ns.end(), cell.n) == ns.end()) {
      ns.push_back(cell.n);
    }
  }
  std::sort(sigmas.begin(), sigmas.end());
  std::sort(ns.begin(), ns.end());
  auto find_cell = [&](int n, double sigma) -> const CellReport* {
    for (const CellReport& cell : report.cells) {
      if (cell.n == n && cell.sigma == sigma) return &cell;
    }
    return nullptr;
  };

  std::ostringstream out;
  out << "## " << spec.name << " (" << spec.system << ", " << spec.trials
      << " trials, mean (SD))\n\n";
  out << "| n | parameter |";
  for (double s : sigmas) out << " sigma=" << s << " |";
  out << "\n|---|-----------|";
  for (size_t i = 0; i < sigmas.size(); ++i) out << "---|";
  out << "\n";
  for (int n : ns) {
    for (Eigen::Index i = 0; i < p; ++i) {
      out << "| " << n << " | " << names[size_t(i)] << " |";
      for (double s : sigmas) {
        const CellReport* cell = find_cell(n, s);
        if (cell != nullptr && cell->mean.size() == p) {
          out << " " << stat_cell(cell->mean[i], cell->sd[i]) << " |";
        } else {
          out << " - |";
        }
      }
      out << "\n";
    }
  }

  for (const CellReport& cell : report.cells) {
    if (cell.mse.empty()) continue;
    out << "\n### Prediction MSE (n=" << cell.n << ", sigma=" << cell.sigma
        << ")\n\n";
    out << "| target | constrained GP | reference integration at estimate | "
           "GPR baseline |\n";
    out << "|--------|----------------|------------------------------------|"
           "--------------|\n";
    for (const MseRow& row : cell.mse) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "| %s | %.4f | %.4f | %.4f |",
                    order_label(row.order).c_str(), row.model, row.ode,
                    row.gpr);
      out << buf << "\n";
    }
  }
  return out.str();
}

// --- Reference checks -----------------------------------------------------------

namespace {

struct ReferenceCell {
  const char* system;
  int n;
  double sigma;
  std::vector<double> theta_true;
  std::vector<double> mean;
  double mean_tol;
  std::vector<double> sd;  // empty: no factor gate
  double sd_factor;        // band [sd/f, sd*f]
  double sd_cap;           // 0: no cap gate
};

const std::vector<ReferenceCell>& reference_cells() {
  static const std::vector<ReferenceCell> cells = {
      {"linear-chain", 50, 0.01, {1, 1}, {0.970, 0.991}, 0.10,
       {0.013, 0.021}, 2.0, 0.0},
      {"linear-chain", 50, 0.05, {1, 1}, {0.859, 0.851}, 0.10,
       {0.054, 0.062}, 2.0, 0.0},
      {"linear-chain", 50, 0.10, {1, 1}, {0.768, 0.972}, 0.10,
       {0.150, 0.311}, 2.0, 0.0},
      {"linear-chain", 100, 0.01, {1, 1}, {0.951, 1.027}, 0.10,
       {0.017, 0.020}, 2.0, 0.0},
      {"linear-chain", 100, 0.05, {1, 1}, {0.890, 0.943}, 0.10,
       {0.040, 0.050}, 2.0, 0.0},
      {"linear-chain", 100, 0.10, {1, 1}, {0.853, 0.918}, 0.10,
       {0.085, 0.100}, 2.0, 0.0},
      {"van-der-pol", 50, 0.10, {0.5}, {0.445}, 0.06, {}, 0.0, 0.12},
      {"van-der-pol", 100, 0.10, {0.5}, {0.447}, 0.06, {}, 0.0, 0.12},
      {"fitzhugh-nagumo", 250, 0.10, {5, 1, 0.5},
       {4.9987, 0.9997, 0.4781}, 0.15, {}, 0.0, 0.0},
      {"fitzhugh-nagumo", 250, 0.30, {0.2, 0.2, 3},
       {0.1998, 0.2511, 2.7465}, 0.30, {}, 0.0, 0.0},
  };
  return cells;
}

// Published MSE comparison for the oscillator benchmark (n=100, sigma=0.1):
// constrained predictor within x3 per order, baseline at least 10x worse
// on the second derivative.
struct MseReference {
  const char* system = "van-der-pol";
  int n = 100;
  double sigma = 0.1;
  std::vector<double> model = {0.0008, 0.0023, 0.0130};
  double factor = 3.0;
  double gpr_ratio_order2 = 10.0;
};

const ReferenceCell* find_reference(const ExperimentSpec& spec,
                                    const CellReport& cell) {
  for (const ReferenceCell& ref : reference_cells()) {
    if (ref.system != spec.system || ref.n != cell.n ||
        std::abs(ref.sigma - cell.sigma) > 1e-12) {
      continue;
    }
    if (Eigen::Index(ref.theta_true.size()) != spec.theta_true.size()) {
      continue;
    }
    bool same_truth = true;
    for (Eigen::Index i = 0; i < spec.theta_true.size(); ++i) {
      if (std::abs(ref.theta_true[size_t(i)] - spec.theta_true[i]) > 1e-9) {
        same_truth = false;
      }
    }
    if (same_truth) return &ref;
  }
  return nullptr;
}

std::string describe_cell(const ExperimentSpec& spec, const CellReport& cell) {
  std::ostringstream s;
  s << spec.system << " n=" << cell.n << " sigma=" << cell.sigma;
  return s.str();
}

}  // namespace

CheckResult check_report(const ExperimentReport& report) {
  CheckResult result;
  const ExperimentSpec& spec = report.spec;
  auto gate = [&](bool pass, const std::string& text) {
    result.lines.push_back(std::string(pass ? "[PASS] " : "[FAIL] ") + text);
    if (!pass) result.passed = false;
  };

  for (const CellReport& cell : report.cells) {
    const std::string where = describe_cell(spec, cell);
    const ReferenceCell* ref = find_reference(spec, cell);
    if (ref == nullptr) {
      result.lines.push_back("[SKIP] " + where + ": no reference statistics");
    } else {
      for (Eigen::Index i = 0; i < cell.mean.size(); ++i) {
        const double target = ref->mean[size_t(i)];
        const double got = cell.mean[i];
        char buf[160];
        std::snprintf(buf, sizeof buf,
                      "%s mean[%d] = %.4f, reference %.4f +/- %.2f",
                      where.c_str(), int(i), got, target, ref->mean_tol);
        gate(std::abs(got - target) <= ref->mean_tol, buf);
      }
      if (!ref->sd.empty()) {
        for (Eigen::Index i = 0; i < cell.sd.size(); ++i) {
          const double target = ref->sd[size_t(i)];
          const double got = cell.sd[i];
          char buf[160];
          std::snprintf(buf, sizeof buf,
                        "%s sd[%d] = %.4f, reference %.4f within x%.1f",
                        where.c_str(), int(i), got, target, ref->sd_factor);
          gate(got >= target / ref->sd_factor &&
                   got <= target * ref->sd_factor,
               buf);
        }
      }
      if (ref->sd_cap > 0.0) {
        for (Eigen::Index i = 0; i < cell.sd.size(); ++i) {
          char buf[160];
          std::snprintf(buf, sizeof buf, "%s sd[%d] = %.4f, cap %.2f",
                        where.c_str(), int(i), cell.sd[i], ref->sd_cap);
          gate(cell.sd[i] <= ref->sd_cap, buf);
        }
      }
    }

    if (!cell.mse.empty()) {
      const MseReference mse_ref;
      if (spec.system == mse_ref.system && cell.n == mse_ref.n &&
          std::abs(cell.sigma - mse_ref.sigma) < 1e-12) {
        double model_order2 = 0.0, gpr_order2 = 0.0;
        for (const MseRow& row : cell.mse) {
          if (row.order > 2) continue;
          const double target = mse_ref.model[size_t(row.order)];
          char buf[160];
          std::snprintf(buf, sizeof buf,
                        "%s MSE(%s) = %.5f, reference %.4f within x%.0f",
                        where.c_str(), order_label(row.order).c_str(),
                        row.model, target, mse_ref.factor);
          gate(row.model >= target / mse_ref.factor &&
                   row.model <= target * mse_ref.factor,
               buf);
          if (row.order == 2) {
            model_order2 = row.model;
            gpr_order2 = row.gpr;
          }
        }
        char buf[160];
        std::snprintf(buf, sizeof buf,
                      "%s baseline MSE(u'') = %.4f vs constrained %.4f "
                      "(need >= %.0fx)",
                      where.c_str(), gpr_order2, model_order2,
                      mse_ref.gpr_ratio_order2);
        gate(gpr_order2 >= mse_ref.gpr_ratio_order2 * model_order2, buf);
      } else {
        result.lines.push_back("[SKIP] " + where +
                               ": no reference MSE statistics");
      }
    }
  }
  return result;
}

}  // namespace megpr
