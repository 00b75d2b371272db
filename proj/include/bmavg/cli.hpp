#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bmavg/covariance.hpp"
#include "bmavg/grid.hpp"
#include "bmavg/kernels.hpp"

namespace bmavg::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNumerical = 3;

struct ProcessConfig {
  /// "fbm", "indicator", "tabulated" or "counterexample".
  std::string family = "fbm";
  double H = 0.5;
  double c = 1.0;
  std::string table;
  double scale = 1.0;
  std::optional<double> truncation_hint;
  CounterexampleSpec counterexample_spec;

  bool is_counterexample() const { return family == "counterexample"; }
  MovingAverageKernel kernel() const;
};

struct GridConfig {
  double T = 1.0;
  std::size_t N = 16;
  std::optional<std::vector<double>> times;

  Grid grid() const;
};

struct NumericsConfig {
  std::optional<double> L;
  std::optional<double> quad_step;
  std::string mode = "full";
  bool normalize = false;
  double convergence_tol = 1e-8;
  int max_refinements = 4;
  double tau_psd = 1e-8;
  double max_tail_error = 1e-3;

  GramOptions gram_options() const;
};

struct SimulateConfig {
  /// "both", "cholesky" or "direct".
  std::string method = "both";
  std::size_t n_paths = 1000;
  int substeps = 16;
};

struct CfsConfig {
  double tau_cfs = 1e-10;
  double tau_degen = 1e-6;
  int k_smallest = 3;
  std::vector<std::string> weights;
  std::vector<double> tube_epsilons;
  std::string tube_target = "zero";
  std::string tube_target_csv;
  std::size_t n_paths = 10000;
};

struct TubeConfig {
  /// "zero" or "csv".
  std::string target = "zero";
  std::string target_csv;
  std::vector<double> epsilons{0.5, 1.0};
  std::size_t n_paths = 100000;
};

struct CounterexampleConfig {
  std::vector<int> levels{6, 7, 8, 9, 10, 11, 12};
  int verdict_max_level = 8;
  bool both_signs = true;
};

struct DeconvolveConfig {
  double T = 1.0;
  std::size_t N = 256;
  /// "ones", "gap", "kernel" or "csv".
  std::string h = "ones";
  double h_gap = 0.25;
  std::string h_csv;
  /// "t", "t2", "tsinpi" or "csv".
  std::string target = "t";
  std::string target_csv;
  std::optional<std::vector<double>> lambdas;
};

struct RunConfig {
  ProcessConfig process;
  GridConfig grid;
  NumericsConfig numerics;
  std::uint64_t seed = 0;
  std::string output_dir = "bmavg_out";
  SimulateConfig simulate;
  CfsConfig cfs;
  TubeConfig tube;
  CounterexampleConfig counterexample;
  DeconvolveConfig deconvolve;
};

/// Strict parse: every key must be known (ValidationError naming the key otherwise)
/// and every absent key takes its default.
RunConfig parse_config(const nlohmann::json& j);

/// The resolved configuration with all defaults filled in.
nlohmann::ordered_json to_json(const RunConfig& config);

/// Applies "dotted.key=value" to a JSON config. The value is parsed as JSON
/// when possible and taken as a string otherwise.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Reads a JSON config file (ValidationError on syntax errors).
nlohmann::json load_config_file(const std::filesystem::path& path);

const std::vector<std::string>& subcommands();

/// Runs one subcommand, writing artifacts under config.output_dir and a short
/// summary to `out`. Errors propagate as exceptions.
void run(const std::string& subcommand, const RunConfig& config, std::ostream& out);

/// Maps an exception to an exit status and writes a JSON diagnostic to `err`.
int report_error(std::exception_ptr error, std::ostream& err);

}  // namespace bmavg::cli
