#pragma once

// File formats: dataset CSV, flat key-value configs, fit-result JSON,
// curve/trace/anchor CSVs, and a small self-contained SVG plotter.
//
// Numeric round-tripping matters for reproducibility checks, so CSV and
// JSON emit doubles with enough digits (%.17g) to reparse bit-exactly.

#include <megpr/data.hpp>
#include <megpr/fit.hpp>
#include <megpr/linearize.hpp>
#include <megpr/predict.hpp>
#include <megpr/system.hpp>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace megpr {

std::string format_double(double x);  // shortest round-trip decimal

// --- Dataset CSV -----------------------------------------------------------
//
// Header "t,y1,...,yD"; one row per time, empty cells for unobserved
// entries; times strictly increasing.  t_max is taken as the last time
// unless a "# t_max = <v>" comment precedes the header.

Dataset read_dataset_csv(const std::string& path);
void write_dataset_csv(const std::string& path, const Dataset& data);

// --- Flat key-value configuration -------------------------------------------
//
// Lines of "key = value"; '#' starts a comment; blank lines ignored.
// Values may be scalars, names, or comma-separated lists.

class Config {
 public:
  static Config from_file(const std::string& path);
  static Config from_text(const std::string& text);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key,
                         const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_list(const std::string& key) const;  // empty if absent
  std::vector<int> get_int_list(const std::string& key) const;

  // Unknown keys are configuration errors; call after reading all keys.
  void check_consumed() const;

 private:
  std::map<std::string, std::string> kv_;
  mutable std::map<std::string, bool> read_;
};

// --- Fit bundle --------------------------------------------------------------
//
// Everything needed to reuse a fit: system, estimates, the dataset, the
// frozen constraint times, and the anchor table for nonlinear systems.

struct FitBundle {
  std::string system;
  Eigen::VectorXd theta;
  std::vector<std::string> param_names;
  Hyper hyper;
  Dataset data;
  Eigen::VectorXd constraint_times;
  FixedPointTable anchors;  // size 0 for linear systems
  bool has_anchors = false;
  double objective = 0.0;
  int iterations_run = 0;
  std::string stop_reason;

  // Rebuilds the system model (with anchors where needed).
  SystemModel build_model() const;
};

void write_fit_json(const std::string& path, const SystemModel& model,
                    const EstimationResult& result, const Dataset& data,
                    const FixedPointTable* anchors);
FitBundle read_fit_json(const std::string& path);

// --- Curves, traces, anchors -------------------------------------------------

void write_curve_csv(const std::string& path, const PosteriorCurve& curve);
PosteriorCurve read_curve_csv(const std::string& path);

void write_trace_csv(const std::string& path,
                     const std::vector<TraceRow>& trace,
                     const std::vector<std::string>& param_names);

void write_anchors_csv(const std::string& path, const FixedPointTable& table);

// Mean with a +/- 2 sigma band; optional observed points overlaid.
std::string render_curve_svg(const PosteriorCurve& curve,
                             const std::string& title,
                             const Eigen::VectorXd* obs_t = nullptr,
                             const Eigen::VectorXd* obs_y = nullptr);

}  // namespace megpr
