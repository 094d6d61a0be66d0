#include <megpr/io.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

namespace megpr {

using nlohmann::json;

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, x);
    if (std::strtod(buf, nullptr) == x) return buf;
  }
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

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

double parse_double(const std::string& s, const std::string& where) {
  const std::string t = trim(s);
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (t.empty() || end != t.c_str() + t.size()) {
    throw ConfigError(where + ": cannot parse number '" + s + "'");
  }
  return v;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open file for reading: " + path);
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open file for writing: " + path);
  return out;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Eigen::VectorXd json_to_vector(const json& a, const std::string& where) {
  if (!a.is_array()) throw ConfigError(where + ": expected an array");
  Eigen::VectorXd v(Eigen::Index(a.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    v[i] = a[size_t(i)].get<double>();
  }
  return v;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd json_to_matrix(const json& a, const std::string& where) {
  if (!a.is_array()) throw ConfigError(where + ": expected an array of rows");
  const Eigen::Index rows = Eigen::Index(a.size());
  if (rows == 0) return Eigen::MatrixXd(0, 0);
  const Eigen::Index cols = Eigen::Index(a[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (Eigen::Index(a[size_t(i)].size()) != cols) {
      throw ConfigError(where + ": ragged rows");
    }
    for (Eigen::Index j = 0; j < cols; ++j) {
      m(i, j) = a[size_t(i)][size_t(j)].get<double>();
    }
  }
  return m;
}

}  // namespace

// --- Dataset CSV -----------------------------------------------------------

Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in = open_in(path);
  std::string line;
  double t_max_override = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> header;
  // Skip comments; honor an optional "# t_max = <v>" directive.
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t[0] == '#') {
      const auto eq = t.find('=');
      if (eq != std::string::npos &&
          t.substr(0, eq).find("t_max") != std::string::npos) {
        t_max_override = parse_double(t.substr(eq + 1), path);
      }
      continue;
    }
    header = split(t, ',');
    break;
  }
  if (header.size() < 2 || trim(header[0]) != "t") {
    throw ConfigError(path + ": expected header 't,y1,...,yD'");
  }
  const Eigen::Index dim = Eigen::Index(header.size()) - 1;

  std::vector<double> times;
  std::vector<std::vector<std::string>> cells;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto fields = split(t, ',');
    if (Eigen::Index(fields.size()) != dim + 1) {
      throw ConfigError(path + ": row has " + std::to_string(fields.size()) +
                        " fields, expected " + std::to_string(dim + 1));
    }
    times.push_back(parse_double(fields[0], path));
    fields.erase(fields.begin());
    cells.push_back(std::move(fields));
  }

  Dataset data;
  data.times = Eigen::Map<Eigen::VectorXd>(times.data(), Eigen::Index(times.size()));
  data.values.setConstant(data.times.size(), dim,
                          std::numeric_limits<double>::quiet_NaN());
  data.present.setConstant(data.times.size(), dim, false);
  for (Eigen::Index i = 0; i < data.times.size(); ++i) {
    for (Eigen::Index j = 0; j < dim; ++j) {
      const std::string cell = trim(cells[size_t(i)][size_t(j)]);
      if (cell.empty()) continue;
      data.values(i, j) = parse_double(cell, path);
      data.present(i, j) = true;
    }
  }
  data.t_max = std::isnan(t_max_override)
                   ? (data.times.size() ? data.times[data.times.size() - 1] : 0.0)
                   : t_max_override;
  data.validate();
  return data;
}

void write_dataset_csv(const std::string& path, const Dataset& data) {
  data.validate();
  std::ofstream out = open_out(path);
  out << "# t_max = " << format_double(data.t_max) << "\n";
  out << "t";
  for (Eigen::Index j = 0; j < data.dim(); ++j) out << ",y" << (j + 1);
  out << "\n";
  for (Eigen::Index i = 0; i < data.n_times(); ++i) {
    out << format_double(data.times[i]);
    for (Eigen::Index j = 0; j < data.dim(); ++j) {
      out << ",";
      if (data.present(i, j)) out << format_double(data.values(i, j));
    }
    out << "\n";
  }
}

// --- Flat key-value configuration -------------------------------------------

Config Config::from_file(const std::string& path) {
  std::ifstream in = open_in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

Config Config::from_text(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected 'key = value', got '" + t + "'");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": empty key");
    }
    if (cfg.kv_.count(key)) {
      throw ConfigError("config: duplicate key '" + key + "'");
    }
    cfg.kv_[key] = value;
  }
  return cfg;
}

bool Config::has(const std::string& key) const {
  if (auto it = kv_.find(key); it != kv_.end()) {
    read_[key] = true;
    return true;
  }
  return false;
}

std::string Config::get_string(const std::string& key,
                               const std::string& fallback) const {
  if (auto it = kv_.find(key); it != kv_.end()) {
    read_[key] = true;
    return it->second;
  }
  return fallback;
}

double Config::get_double(const std::string& key, double fallback) const {
  if (auto it = kv_.find(key); it != kv_.end()) {
    read_[key] = true;
    return parse_double(it->second, "config key '" + key + "'");
  }
  return fallback;
}

int Config::get_int(const std::string& key, int fallback) const {
  if (auto it = kv_.find(key); it != kv_.end()) {
    read_[key] = true;
    const double v = parse_double(it->second, "config key '" + key + "'");
    const int n = int(std::llround(v));
    if (double(n) != v) {
      throw ConfigError("config key '" + key + "': expected an integer");
    }
    return n;
  }
  return fallback;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  if (auto it = kv_.find(key); it != kv_.end()) {
    read_[key] = true;
    std::string v = it->second;
    std::transform(v.begin(), v.end(), v.begin(),
                   [](unsigned char c) { return char(std::tolower(c)); });
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config key '" + key + "': expected a boolean");
  }
  return fallback;
}

std::vector<double> Config::get_list(const std::string& key) const {
  std::vector<double> out;
  if (auto it = kv_.find(key); it != kv_.end()) {
    read_[key] = true;
    for (const std::string& field : split(it->second, ',')) {
      if (trim(field).empty()) continue;
      out.push_back(parse_double(field, "config key '" + key + "'"));
    }
  }
  return out;
}

std::vector<int> Config::get_int_list(const std::string& key) const {
  std::vector<int> out;
  for (double v : get_list(key)) {
    const int n = int(std::llround(v));
    if (double(n) != v) {
      throw ConfigError("config key '" + key + "': expected integers");
    }
    out.push_back(n);
  }
  return out;
}

void Config::check_consumed() const {
  for (const auto& [key, value] : kv_) {
    if (!read_.count(key)) {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  }
}

// --- Fit bundle --------------------------------------------------------------

SystemModel FitBundle::build_model() const {
  return build_system(system, has_anchors ? &anchors : nullptr);
}

void write_fit_json(const std::string& path, const SystemModel& model,
                    const EstimationResult& result, const Dataset& data,
                    const FixedPointTable* anchors) {
  json j;
  j["system"] = model.name;
  j["theta"] = vector_to_json(result.theta);
  j["param_names"] = json(model.param_names);
  j["kernel"] = {{"amplitude", result.hyper.kernel.amplitude},
                 {"length_scale", result.hyper.kernel.length_scale}};
  j["sigma_y"] = vector_to_json(result.hyper.noise.obs_noise);
  j["sigma_v"] = result.hyper.noise.constraint_reg;
  j["objective"] = result.objective;
  j["final_objective"] = result.final_objective;
  j["iterations_run"] = result.iterations_run;
  j["stop_reason"] = result.stop_reason;
  j["constraint_times"] = vector_to_json(result.constraint_times);
  j["sampler_acceptance"] = result.sampler_acceptance;

  json d;
  d["times"] = vector_to_json(data.times);
  json rows = json::array();
  for (Eigen::Index i = 0; i < data.n_times(); ++i) {
    json row = json::array();
    for (Eigen::Index c = 0; c < data.dim(); ++c) {
      if (data.present(i, c)) {
        row.push_back(data.values(i, c));
      } else {
        row.push_back(nullptr);
      }
    }
    rows.push_back(std::move(row));
  }
  d["values"] = std::move(rows);
  d["t_max"] = data.t_max;
  j["dataset"] = std::move(d);

  if (anchors != nullptr && anchors->size() > 0) {
    json a;
    a["times"] = vector_to_json(anchors->times);
    a["states"] = matrix_to_json(anchors->states);
    a["variances"] = matrix_to_json(anchors->variances);
    j["anchors"] = std::move(a);
  }

  std::ofstream out = open_out(path);
  out << j.dump(2) << "\n";
}

FitBundle read_fit_json(const std::string& path) {
  std::ifstream in = open_in(path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path + ": invalid JSON (" + e.what() + ")");
  }
  try {
    FitBundle b;
    b.system = j.at("system").get<std::string>();
    b.theta = json_to_vector(j.at("theta"), "theta");
    if (j.contains("param_names")) {
      for (const auto& name : j["param_names"]) {
        b.param_names.push_back(name.get<std::string>());
      }
    }
    b.hyper.kernel.amplitude = j.at("kernel").at("amplitude").get<double>();
    b.hyper.kernel.length_scale =
        j.at("kernel").at("length_scale").get<double>();
    b.hyper.noise.obs_noise = json_to_vector(j.at("sigma_y"), "sigma_y");
    b.hyper.noise.constraint_reg = j.at("sigma_v").get<double>();
    b.objective = j.value("objective", 0.0);
    b.iterations_run = j.value("iterations_run", 0);
    b.stop_reason = j.value("stop_reason", std::string());
    b.constraint_times =
        json_to_vector(j.at("constraint_times"), "constraint_times");

    const json& d = j.at("dataset");
    b.data.times = json_to_vector(d.at("times"), "dataset.times");
    const json& rows = d.at("values");
    const Eigen::Index n = b.data.times.size();
    const Eigen::Index dim =
        n > 0 ? Eigen::Index(rows.at(0).size()) : Eigen::Index(0);
    b.data.values.setConstant(n, dim, std::numeric_limits<double>::quiet_NaN());
    b.data.present.setConstant(n, dim, false);
    for (Eigen::Index i = 0; i < n; ++i) {
      const json& row = rows.at(size_t(i));
      for (Eigen::Index c = 0; c < dim; ++c) {
        const json& cell = row.at(size_t(c));
        if (!cell.is_null()) {
          b.data.values(i, c) = cell.get<double>();
          b.data.present(i, c) = true;
        }
      }
    }
    b.data.t_max = d.at("t_max").get<double>();
    b.data.validate();

    if (j.contains("anchors")) {
      const json& a = j["anchors"];
      b.anchors.times = json_to_vector(a.at("times"), "anchors.times");
      b.anchors.states = json_to_matrix(a.at("states"), "anchors.states");
      b.anchors.variances =
          json_to_matrix(a.at("variances"), "anchors.variances");
      b.anchors.validate();
      b.has_anchors = true;
    }
    return b;
  } catch (const json::exception& e) {
    throw ConfigError(path + ": missing or malformed field (" +
                      std::string(e.what()) + ")");
  }
}

// --- Curves, traces, anchors -------------------------------------------------

void write_curve_csv(const std::string& path, const PosteriorCurve& curve) {
  std::ofstream out = open_out(path);
  out << "t,mean,variance\n";
  for (Eigen::Index i = 0; i < curve.times.size(); ++i) {
    out << format_double(curve.times[i]) << "," << format_double(curve.mean[i])
        << "," << format_double(curve.variance[i]) << "\n";
  }
}

PosteriorCurve read_curve_csv(const std::string& path) {
  std::ifstream in = open_in(path);
  std::string line;
  if (!std::getline(in, line) || trim(line) != "t,mean,variance") {
    throw ConfigError(path + ": expected header 't,mean,variance'");
  }
  std::vector<double> t, m, v;
  while (std::getline(in, line)) {
    const std::string s = trim(line);
    if (s.empty()) continue;
    auto fields = split(s, ',');
    if (fields.size() != 3) throw ConfigError(path + ": expected 3 fields");
    t.push_back(parse_double(fields[0], path));
    m.push_back(parse_double(fields[1], path));
    v.push_back(parse_double(fields[2], path));
  }
  PosteriorCurve curve;
  const Eigen::Index n = Eigen::Index(t.size());
  curve.times = Eigen::Map<Eigen::VectorXd>(t.data(), n);
  curve.mean = Eigen::Map<Eigen::VectorXd>(m.data(), n);
  curve.variance = Eigen::Map<Eigen::VectorXd>(v.data(), n);
  return curve;
}

void write_trace_csv(const std::string& path,
                     const std::vector<TraceRow>& trace,
                     const std::vector<std::string>& param_names) {
  std::ofstream out = open_out(path);
  out << "iter,objective,grad_norm";
  for (const std::string& name : param_names) out << "," << name;
  out << ",amplitude,length_scale";
  if (!trace.empty()) {
    for (Eigen::Index i = 0; i < trace.front().sigma_y.size(); ++i) {
      out << ",sigma_y" << (i + 1);
    }
  }
  out << "\n";
  for (const TraceRow& row : trace) {
    out << row.iter << "," << format_double(row.objective) << ","
        << format_double(row.grad_norm);
    for (Eigen::Index i = 0; i < row.theta.size(); ++i) {
      out << "," << format_double(row.theta[i]);
    }
    out << "," << format_double(row.amplitude) << ","
        << format_double(row.length_scale);
    for (Eigen::Index i = 0; i < row.sigma_y.size(); ++i) {
      out << "," << format_double(row.sigma_y[i]);
    }
    out << "\n";
  }
}

void write_anchors_csv(const std::string& path, const FixedPointTable& table) {
  std::ofstream out = open_out(path);
  out << "t";
  for (Eigen::Index j = 0; j < table.states.cols(); ++j) out << ",s" << (j + 1);
  for (Eigen::Index j = 0; j < table.states.cols(); ++j) out << ",var" << (j + 1);
  out << "\n";
  for (Eigen::Index i = 0; i < table.size(); ++i) {
    out << format_double(table.times[i]);
    for (Eigen::Index j = 0; j < table.states.cols(); ++j) {
      out << "," << format_double(table.states(i, j));
    }
    for (Eigen::Index j = 0; j < table.states.cols(); ++j) {
      out << ","
          << format_double(table.variances.size() ? table.variances(i, j)
                                                  : 0.0);
    }
    out << "\n";
  }
}

// --- SVG ----------------------------------------------------------------------

namespace {

struct AxisScale {
  double lo = 0.0, hi = 1.0;
  double px0 = 0.0, px1 = 1.0;

  double operator()(double v) const {
    return px0 + (v - lo) / (hi - lo) * (px1 - px0);
  }
};

// Round tick spacing to 1/2/5 times a power of ten.
std::vector<double> nice_ticks(double lo, double hi, int target) {
  const double span = hi - lo;
  if (!(span > 0)) return {lo};
  double step = std::pow(10.0, std::floor(std::log10(span / target)));
  for (double mult : {1.0, 2.0, 5.0, 10.0}) {
    if (span / (step * mult) <= target) {
      step *= mult;
      break;
    }
  }
  std::vector<double> ticks;
  for (double v = std::ceil(lo / step) * step; v <= hi + 1e-9 * span;
       v += step) {
    ticks.push_back(std::abs(v) < 1e-12 * span ? 0.0 : v);
  }
  return ticks;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

std::string render_curve_svg(const PosteriorCurve& curve,
                             const std::string& title,
                             const Eigen::VectorXd* obs_t,
                             const Eigen::VectorXd* obs_y) {
  const int W = 860, H = 520;
  const double ml = 70, mr = 20, mt = 42, mb = 48;
  if (curve.times.size() < 2) {
    throw ConfigError("render_curve_svg: need at least two points");
  }

  Eigen::VectorXd sd = curve.variance.cwiseMax(0.0).cwiseSqrt();
  double ylo = (curve.mean - 2.0 * sd).minCoeff();
  double yhi = (curve.mean + 2.0 * sd).maxCoeff();
  if (obs_y != nullptr && obs_y->size() > 0) {
    ylo = std::min(ylo, obs_y->minCoeff());
    yhi = std::max(yhi, obs_y->maxCoeff());
  }
  if (!(yhi > ylo)) {
    ylo -= 1.0;
    yhi += 1.0;
  }
  const double pad = 0.05 * (yhi - ylo);
  AxisScale sx{curve.times.minCoeff(), curve.times.maxCoeff(), ml, W - mr};
  AxisScale sy{ylo - pad, yhi + pad, H - mb, mt};

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W
      << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << " " << H
      << "\">\n";
  svg << "<rect width=\"" << W << "\" height=\"" << H
      << "\" fill=\"#ffffff\"/>\n";
  svg << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"15\">"
      << title << "</text>\n";

  // Grid and ticks.
  svg << "<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#444\">\n";
  for (double v : nice_ticks(sx.lo, sx.hi, 8)) {
    const double x = sx(v);
    svg << "<line x1=\"" << x << "\" y1=\"" << mt << "\" x2=\"" << x
        << "\" y2=\"" << H - mb << "\" stroke=\"#e5e5e5\"/>\n";
    svg << "<text x=\"" << x << "\" y=\"" << H - mb + 16
        << "\" text-anchor=\"middle\">" << tick_label(v) << "</text>\n";
  }
  for (double v : nice_ticks(sy.lo, sy.hi, 6)) {
    const double y = sy(v);
    svg << "<line x1=\"" << ml << "\" y1=\"" << y << "\" x2=\"" << W - mr
        << "\" y2=\"" << y << "\" stroke=\"#e5e5e5\"/>\n";
    svg << "<text x=\"" << ml - 6 << "\" y=\"" << y + 4
        << "\" text-anchor=\"end\">" << tick_label(v) << "</text>\n";
  }
  svg << "</g>\n";

  // 2-sigma band.
  svg << "<polygon fill=\"#9ecae1\" fill-opacity=\"0.45\" stroke=\"none\" "
         "points=\"";
  for (Eigen::Index i = 0; i < curve.times.size(); ++i) {
    svg << sx(curve.times[i]) << "," << sy(curve.mean[i] + 2.0 * sd[i]) << " ";
  }
  for (Eigen::Index i = curve.times.size() - 1; i >= 0; --i) {
    svg << sx(curve.times[i]) << "," << sy(curve.mean[i] - 2.0 * sd[i]) << " ";
  }
  svg << "\"/>\n";

  // Mean.
  svg << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.8\" "
         "points=\"";
  for (Eigen::Index i = 0; i < curve.times.size(); ++i) {
    svg << sx(curve.times[i]) << "," << sy(curve.mean[i]) << " ";
  }
  svg << "\"/>\n";

  // Observations.
  if (obs_t != nullptr && obs_y != nullptr && obs_t->size() == obs_y->size()) {
    for (Eigen::Index i = 0; i < obs_t->size(); ++i) {
      svg << "<circle cx=\"" << sx((*obs_t)[i]) << "\" cy=\""
          << sy((*obs_y)[i])
          << "\" r=\"2.6\" fill=\"#d62728\" fill-opacity=\"0.8\"/>\n";
    }
  }

  // Axes.
  svg << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr
      << "\" y2=\"" << H - mb << "\" stroke=\"#000\"/>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml
      << "\" y2=\"" << H - mb << "\" stroke=\"#000\"/>\n";
  svg << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"12\">t</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace megpr
