// Command-line front end: dataset synthesis, single fits, repeated-trial
// experiments with reference checks, and posterior-curve prediction.
//
// Exit codes: 0 success, 2 configuration error, 3 numerical failure,
// 4 reference-check failure in --check mode.

#include <megpr/experiment.hpp>
#include <megpr/io.hpp>

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using namespace megpr;

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), Eigen::Index(v.size()));
}

std::string lower_ext(const std::string& path) {
  const auto dot = path.rfind('.');
  if (dot == std::string::npos) return "";
  std::string ext = path.substr(dot + 1);
  for (char& c : ext) c = char(std::tolower(static_cast<unsigned char>(c)));
  return ext;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open file for writing: " + path);
  out << text;
}

// "lo:hi:count" or a bare count over [0, t_max].
Eigen::VectorXd parse_grid(const std::string& grid_spec, double t_max) {
  const auto c1 = grid_spec.find(':');
  double lo = 0.0, hi = t_max;
  long count = 0;
  if (c1 == std::string::npos) {
    count = std::strtol(grid_spec.c_str(), nullptr, 10);
  } else {
    const auto c2 = grid_spec.find(':', c1 + 1);
    if (c2 == std::string::npos) {
      throw ConfigError("grid: expected 'count' or 'lo:hi:count'");
    }
    lo = std::strtod(grid_spec.substr(0, c1).c_str(), nullptr);
    hi = std::strtod(grid_spec.substr(c1 + 1, c2 - c1 - 1).c_str(), nullptr);
    count = std::strtol(grid_spec.substr(c2 + 1).c_str(), nullptr, 10);
  }
  if (count < 2 || !(hi > lo)) {
    throw ConfigError("grid: need at least two points and hi > lo");
  }
  return Eigen::VectorXd::LinSpaced(Eigen::Index(count), lo, hi);
}

struct FitCliArgs {
  std::string system;
  std::string data_path;
  std::string config_path;
  std::string out_json;
  std::string trace_csv;
  std::string anchors_csv;
  std::optional<int> iterations;
  std::optional<double> learning_rate;
  std::optional<int> n_constraints;
  std::optional<std::string> mode;
  std::optional<double> sigma_v;
  std::optional<int> seed;
  std::optional<double> noise_sigma;
  std::vector<double> theta_init;
  bool sigma_v_sweep = false;
};

void print_fit_summary(const SystemModel& model, const EstimationResult& res,
                       std::ostream& out) {
  out << "system: " << model.name << "\n";
  for (int i = 0; i < model.n_params(); ++i) {
    out << "  " << model.param_names[size_t(i)] << " = " << res.theta[i]
        << "\n";
  }
  out << "kernel: amplitude " << res.hyper.kernel.amplitude
      << ", length_scale " << res.hyper.kernel.length_scale << "\n";
  out << "sigma_y:";
  for (Eigen::Index i = 0; i < res.hyper.noise.obs_noise.size(); ++i) {
    out << " " << res.hyper.noise.obs_noise[i];
  }
  out << "\nobjective: " << res.objective << " (smoothed), "
      << res.final_objective << " (final)\n";
  out << "iterations: " << res.iterations_run << " (" << res.stop_reason
      << "), sampler acceptance " << res.sampler_acceptance << "\n";
}

int run_fit(const FitCliArgs& args) {
  Dataset data = read_dataset_csv(args.data_path);
  Config cfg = args.config_path.empty() ? Config::from_text("")
                                        : Config::from_file(args.config_path);
  FitOptions opts = fit_options_from_config(cfg);
  cfg.check_consumed();
  if (args.iterations) opts.config.iterations = *args.iterations;
  if (args.learning_rate) opts.config.learning_rate = *args.learning_rate;
  if (args.n_constraints) opts.config.n_constraints = *args.n_constraints;
  if (args.mode) {
    if (*args.mode == "uniform") {
      opts.config.mode = ConstraintMode::uniform;
    } else if (*args.mode == "rejection") {
      opts.config.mode = ConstraintMode::rejection;
    } else {
      throw ConfigError("--mode must be 'uniform' or 'rejection'");
    }
  }
  if (args.sigma_v) opts.config.sigma_v = *args.sigma_v;
  if (args.seed) opts.config.seed = std::uint64_t(*args.seed);
  if (args.noise_sigma) opts.prep.noise_sigma = *args.noise_sigma;
  if (!args.theta_init.empty()) {
    opts.config.theta_init = to_vector(args.theta_init);
  }

  PreparedModel prep;
  EstimationResult res = fit_dataset(args.system, data, opts, &prep);
  print_fit_summary(prep.model, res, std::cout);

  if (!args.out_json.empty()) {
    write_fit_json(args.out_json, prep.model, res, data,
                   prep.anchors.size() > 0 ? &prep.anchors : nullptr);
    std::cout << "fit written to " << args.out_json << "\n";
  }
  if (!args.trace_csv.empty()) {
    write_trace_csv(args.trace_csv, res.trace, prep.model.param_names);
    std::cout << "trace written to " << args.trace_csv << "\n";
  }
  if (!args.anchors_csv.empty() && prep.anchors.size() > 0) {
    write_anchors_csv(args.anchors_csv, prep.anchors);
    std::cout << "anchors written to " << args.anchors_csv << "\n";
  }

  if (args.sigma_v_sweep) {
    std::cout << "\nsigma_v sensitivity (same data and seed):\n";
    for (double sv : {1e-3, 1e-4, 1e-5}) {
      FitOptions sweep = opts;
      sweep.config.sigma_v = sv;
      sweep.config.record_trace = false;
      EstimationResult r = fit_dataset(args.system, data, sweep, nullptr);
      std::cout << "  sigma_v = " << sv << " ->";
      for (int i = 0; i < prep.model.n_params(); ++i) {
        std::cout << " " << prep.model.param_names[size_t(i)] << " = "
                  << r.theta[i];
      }
      std::cout << "\n";
    }
  }
  return 0;
}

int run_experiment_cmd(const std::string& spec_path, const std::string& prefix,
                       const std::vector<std::string>& formats, bool check) {
  Config cfg = Config::from_file(spec_path);
  ExperimentSpec spec = ExperimentSpec::from_config(cfg);
  ExperimentReport report = run_experiment(spec);

  for (const std::string& fmt : formats) {
    if (fmt == "csv") {
      write_text_file(prefix + ".csv", emit_report_csv(report));
      std::cout << "report written to " << prefix << ".csv\n";
    } else if (fmt == "json") {
      write_text_file(prefix + ".json", emit_report_json(report));
      std::cout << "report written to " << prefix << ".json\n";
    } else if (fmt == "markdown") {
      write_text_file(prefix + ".md", emit_report_markdown(report));
      std::cout << "report written to " << prefix << ".md\n";
    } else if (fmt == "svg") {
      if (report.mse_curves.empty()) {
        std::cerr << "svg format requested but no curves were computed "
                     "(set compute_mse = true)\n";
      }
      for (const PosteriorCurve& curve : report.mse_curves) {
        const std::string path =
            prefix + "_order" + std::to_string(curve.order) + ".svg";
        write_text_file(path,
                        render_curve_svg(curve, spec.system + " order " +
                                                    std::to_string(curve.order)));
        std::cout << "curve written to " << path << "\n";
      }
    } else {
      throw ConfigError("unknown format '" + fmt +
                        "' (expected csv, json, markdown, svg)");
    }
  }

  std::cout << emit_report_markdown(report);

  if (check) {
    const CheckResult result = check_report(report);
    for (const std::string& line : result.lines) std::cout << line << "\n";
    if (!result.passed) {
      std::cout << "reference check FAILED\n";
      return 4;
    }
    std::cout << "reference check passed\n";
  }
  return 0;
}

int run_generate(const std::string& system, int n, double sigma, int seed,
                 const std::string& out, const std::vector<double>& theta,
                 const std::vector<double>& x0, double t_max) {
  const SystemInfo& info = system_info(system);
  const Eigen::VectorXd th =
      theta.empty() ? info.default_theta : to_vector(theta);
  const Eigen::VectorXd x = x0.empty() ? info.default_x0 : to_vector(x0);
  const double tm = t_max > 0.0 ? t_max : info.default_t_max;
  Dataset data =
      generate_dataset(system, n, sigma, th, x, tm, std::uint64_t(seed));
  write_dataset_csv(out, data);
  std::cout << "dataset written to " << out << " (" << data.n_times()
            << " times, dim " << data.dim() << ")\n";
  return 0;
}

int run_predict(const std::string& fit_path, int component, int order,
                const std::string& grid_spec, const std::string& out) {
  FitBundle bundle = read_fit_json(fit_path);
  SystemModel model = bundle.build_model();
  const int comp = component >= 0 ? component : model.latent;
  const Eigen::VectorXd grid = parse_grid(grid_spec, bundle.data.t_max);
  PosteriorCurve curve =
      predict(model, bundle.data, bundle.constraint_times, bundle.theta,
              bundle.hyper, comp, order, grid);

  const std::string ext = lower_ext(out);
  if (ext == "svg") {
    Eigen::VectorXd obs_t, obs_y;
    const bool overlay = order == 0 && comp < bundle.data.dim() &&
                         bundle.data.present.col(comp).any();
    if (overlay) bundle.data.observed_series(comp, obs_t, obs_y);
    const std::string title = bundle.system + " component " +
                              std::to_string(comp + 1) + ", derivative order " +
                              std::to_string(order);
    write_text_file(out, render_curve_svg(curve, title,
                                          overlay ? &obs_t : nullptr,
                                          overlay ? &obs_y : nullptr));
  } else if (ext == "csv") {
    write_curve_csv(out, curve);
  } else {
    throw ConfigError("--out must end in .csv or .svg");
  }
  std::cout << "curve written to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parameter estimation for dynamical systems via "
               "constraint-embedded Gaussian processes"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Synthesize a noisy dataset");
  std::string gen_system, gen_out;
  int gen_n = 100, gen_seed = 1;
  double gen_sigma = 0.1, gen_tmax = 0.0;
  std::vector<double> gen_theta, gen_x0;
  gen->add_option("--system", gen_system, "System name")->required();
  gen->add_option("--n", gen_n, "Observation count");
  gen->add_option("--sigma", gen_sigma, "Noise standard deviation");
  gen->add_option("--seed", gen_seed, "RNG seed");
  gen->add_option("--out", gen_out, "Output CSV path")->required();
  gen->add_option("--theta", gen_theta, "Ground-truth parameters")
      ->delimiter(',');
  gen->add_option("--x0", gen_x0, "Initial state")->delimiter(',');
  gen->add_option("--t-max", gen_tmax, "Observation window end");

  // fit
  auto* fit = app.add_subcommand("fit", "Fit one dataset");
  FitCliArgs fit_args;
  int fit_iterations = 0, fit_ncon = 0, fit_seed = 0;
  double fit_lr = 0.0, fit_sv = 0.0, fit_noise = -1.0;
  std::string fit_mode;
  fit->add_option("--system", fit_args.system, "System name")->required();
  fit->add_option("--data", fit_args.data_path, "Dataset CSV")->required();
  fit->add_option("--config", fit_args.config_path, "Flat key=value config");
  fit->add_option("--out", fit_args.out_json, "Write fit bundle JSON here");
  fit->add_option("--trace", fit_args.trace_csv, "Write optimizer trace CSV");
  fit->add_option("--anchors", fit_args.anchors_csv,
                  "Write fixed-point anchors CSV");
  auto* o_it = fit->add_option("--iterations", fit_iterations, "Budget");
  auto* o_lr = fit->add_option("--learning-rate", fit_lr, "ADAM step size");
  auto* o_nc =
      fit->add_option("--n-constraints", fit_ncon, "Constraint batch size");
  auto* o_mode =
      fit->add_option("--mode", fit_mode, "uniform or rejection sampling");
  auto* o_sv = fit->add_option("--sigma-v", fit_sv, "Constraint regularizer");
  auto* o_seed = fit->add_option("--seed", fit_seed, "RNG seed");
  auto* o_noise = fit->add_option("--noise-sigma", fit_noise,
                                  "Known observation noise level");
  fit->add_option("--theta-init", fit_args.theta_init,
                  "Initial parameter vector")
      ->delimiter(',');
  fit->add_flag("--sigma-v-sweep", fit_args.sigma_v_sweep,
                "Refit at sigma_v in {1e-3, 1e-4, 1e-5} and report estimates");

  // experiment
  auto* exp = app.add_subcommand("experiment", "Run a repeated-trial grid");
  std::string exp_spec, exp_prefix = "report";
  std::vector<std::string> exp_formats = {"csv", "json", "markdown"};
  bool exp_check = false;
  exp->add_option("--spec", exp_spec, "Experiment spec (flat key=value)")
      ->required();
  exp->add_option("--out", exp_prefix, "Output path prefix");
  exp->add_option("--format", exp_formats,
                  "Any of: csv, json, markdown, svg")
      ->delimiter(',');
  exp->add_flag("--check", exp_check,
                "Gate the report against built-in reference statistics");

  // predict
  auto* pred = app.add_subcommand("predict", "Posterior curve from a fit");
  std::string pred_fit, pred_grid = "200", pred_out;
  int pred_comp = -1, pred_order = 0;
  pred->add_option("--fit", pred_fit, "Fit bundle JSON from 'fit --out'")
      ->required();
  pred->add_option("--component", pred_comp,
                   "Component index (default: the latent component)");
  pred->add_option("--order", pred_order, "Derivative order");
  pred->add_option("--grid", pred_grid, "'count' or 'lo:hi:count'");
  pred->add_option("--out", pred_out, "Output .csv or .svg")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      return run_generate(gen_system, gen_n, gen_sigma, gen_seed, gen_out,
                          gen_theta, gen_x0, gen_tmax);
    }
    if (fit->parsed()) {
      if (*o_it) fit_args.iterations = fit_iterations;
      if (*o_lr) fit_args.learning_rate = fit_lr;
      if (*o_nc) fit_args.n_constraints = fit_ncon;
      if (*o_mode) fit_args.mode = fit_mode;
      if (*o_sv) fit_args.sigma_v = fit_sv;
      if (*o_seed) fit_args.seed = fit_seed;
      if (*o_noise) fit_args.noise_sigma = fit_noise;
      return run_fit(fit_args);
    }
    if (exp->parsed()) {
      return run_experiment_cmd(exp_spec, exp_prefix, exp_formats, exp_check);
    }
    if (pred->parsed()) {
      return run_predict(pred_fit, pred_comp, pred_order, pred_grid, pred_out);
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
