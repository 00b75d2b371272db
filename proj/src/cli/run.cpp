#include <cmath>
#include <numbers>
#include <ostream>
#include <sstream>

#include "bmavg/cfs.hpp"
#include "bmavg/cli.hpp"
#include "bmavg/covariance.hpp"
#include "bmavg/deconv.hpp"
#include "bmavg/errors.hpp"
#include "bmavg/gaussian.hpp"
#include "bmavg/io.hpp"

namespace bmavg::cli {
namespace {

using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::vector<double> rounded_times(const Grid& grid) {
  std::vector<double> out;
  for (double t : grid.times()) out.push_back(io::round_sig(t));
  return out;
}

GramMatrix build_gram(const RunConfig& c, const Grid& grid) {
  const auto options = c.numerics.gram_options();
  if (c.process.is_counterexample())
    return counterexample_gram(c.process.counterexample_spec, grid, c.numerics.quad_step, options);
  return gram(c.process.kernel(), grid, options);
}

Eigen::VectorXd load_vector(const std::string& path, Eigen::Index expected,
                            const std::string& field) {
  if (path.empty()) throw ValidationError(field + " needs a CSV path", field);
  const auto v = io::read_csv_vector(path);
  if (static_cast<Eigen::Index>(v.size()) != expected)
    throw ValidationError(path + ": expected " + std::to_string(expected) + " values, got " +
                              std::to_string(v.size()),
                          field);
  return Eigen::Map<const Eigen::VectorXd>(v.data(), expected);
}

Eigen::VectorXd tube_target(const std::string& kind, const std::string& csv, Eigen::Index n,
                            const std::string& field) {
  if (kind == "zero") return Eigen::VectorXd::Zero(n);
  return load_vector(csv, n, field);
}

ojson tube_json(const TubeEstimate& e) {
  return {{"epsilon", io::round_sig(e.epsilon)},
          {"n_paths", e.n_paths},
          {"hits", e.hits},
          {"estimate", io::round_sig(e.estimate)},
          {"ci95", {io::round_sig(e.ci.lo), io::round_sig(e.ci.hi)}}};
}

void write_json(const fs::path& path, const ojson& j) { io::write_text(path, j.dump(2) + "\n"); }

void run_gram(const RunConfig& c, const fs::path& dir, std::ostream& out) {
  const auto g = build_gram(c, c.grid.grid());
  write_gram(g, dir / "gram");
  out << "gram: " << g.source << ", " << g.dim() << " points, quad_step "
      << io::format_number(g.quad_step) << ", tail_error " << io::format_number(g.tail_error)
      << "\n";
}

void run_simulate(const RunConfig& c, const fs::path& dir, std::ostream& out) {
  const Grid grid = c.grid.grid();
  const auto& s = c.simulate;
  if (s.method == "both" || s.method == "cholesky") {
    const auto ens = sample(GaussianVector(build_gram(c, grid)), s.n_paths, c.seed);
    write_ensemble(ens, dir / "paths_cholesky");
    out << "simulate: " << s.n_paths << " cholesky paths\n";
  }
  if (s.method == "both" || s.method == "direct") {
    const auto ens = c.process.is_counterexample()
                         ? direct_simulate(c.process.counterexample_spec, grid, s.n_paths, c.seed, s.substeps)
                         : direct_simulate(c.process.kernel(), grid, s.n_paths, c.seed,
                                           DirectOptions{s.substeps, c.numerics.L});
    write_ensemble(ens, dir / "paths_direct");
    out << "simulate: " << s.n_paths << " direct paths, " << s.substeps << " substeps\n";
  }
}

void run_check_cfs(const RunConfig& c, const fs::path& dir, std::ostream& out) {
  const auto g = build_gram(c, c.grid.grid());
  std::vector<Eigen::VectorXd> weights;
  for (const auto& path : c.cfs.weights) weights.push_back(load_vector(path, g.dim(), "cfs.weights"));
  CfsOptions options;
  options.tau_cfs_rel = c.cfs.tau_cfs;
  options.scan.tau_degen_rel = c.cfs.tau_degen;
  options.scan.k_smallest = c.cfs.k_smallest;
  auto report = check_cfs(g, weights, options);
  if (!c.cfs.tube_epsilons.empty()) {
    const auto psi = tube_target(c.cfs.tube_target, c.cfs.tube_target_csv, g.dim(), "cfs.tube_target_csv");
    const auto label = c.cfs.tube_target == "zero" ? std::string("zero") : c.cfs.tube_target_csv;
    for (const auto& e :
         tube_probabilities(GaussianVector(g), psi, c.cfs.tube_epsilons, c.cfs.n_paths, c.seed))
      report.tubes.push_back({label, e});
  }
  io::write_text(dir / "cfs_report.json", to_json(report));
  out << "check-cfs: grid_verdict " << (report.cond.verdict ? "true" : "false")
      << ", min conditional variance " << io::format_number(report.min_cond_variance)
      << " at increment " << report.min_index << "\n";
}

void run_tube(const RunConfig& c, const fs::path& dir, std::ostream& out) {
  const auto g = build_gram(c, c.grid.grid());
  const auto psi = tube_target(c.tube.target, c.tube.target_csv, g.dim(), "tube.target_csv");
  const auto estimates =
      tube_probabilities(GaussianVector(g), psi, c.tube.epsilons, c.tube.n_paths, c.seed);
  ojson j;
  j["format_version"] = io::kFormatVersion;
  j["kind"] = "tube_estimates";
  j["source"] = g.source;
  j["grid"] = rounded_times(g.grid);
  j["target"] = c.tube.target == "zero" ? std::string("zero") : c.tube.target_csv;
  j["seed"] = c.seed;
  auto& arr = j["estimates"] = ojson::array();
  for (const auto& e : estimates) {
    arr.push_back(tube_json(e));
    out << "tube: eps " << io::format_number(e.epsilon) << " estimate "
        << io::format_number(e.estimate) << " CI [" << io::format_number(e.ci.lo) << ", "
        << io::format_number(e.ci.hi) << "]\n";
  }
  write_json(dir / "tube.json", j);
}

void run_counterexample(const RunConfig& c, const fs::path& dir, std::ostream& out) {
  std::vector<bool> signs{true};
  if (c.counterexample.both_signs) signs.push_back(false);
  ScanOptions trapezoid_only;
  trapezoid_only.k_smallest = 0;

  std::ostringstream csv;
  csv << "level,n_steps,sign,var_x1,trapezoid_variance,ratio,grid_verdict,min_cond_variance\n";
  ojson rows = ojson::array();
  ojson monotone;
  for (bool corrected : signs) {
    CounterexampleSpec spec = c.process.counterexample_spec;
    spec.corrected_sign = corrected;
    const std::string sign = corrected ? "corrected" : "plus";
    double previous = std::numeric_limits<double>::infinity();
    bool decreasing = true;
    for (int level : c.counterexample.levels) {
      const std::size_t n = std::size_t{1} << level;
      const auto g = counterexample_gram(spec, Grid::uniform(1.0, n), c.numerics.quad_step,
                                    c.numerics.gram_options());
      const double var1 = g.sigma(g.dim() - 1, g.dim() - 1);
      const double trap = degenerate_functional_scan(g, {}, trapezoid_only).front().variance;
      decreasing = decreasing && trap < previous;
      previous = trap;
      ojson row{{"level", level},
                {"n_steps", n},
                {"sign", sign},
                {"var_x1", io::round_sig(var1)},
                {"trapezoid_variance", io::round_sig(trap)},
                {"ratio", io::round_sig(trap / var1)}};
      std::string verdict, min_var;
      if (level <= c.counterexample.verdict_max_level) {
        const auto cond = increment_conditional_variances(g, c.cfs.tau_cfs);
        verdict = cond.verdict ? "true" : "false";
        min_var = io::format_number(cond.values.minCoeff());
        row["grid_verdict"] = cond.verdict;
        row["min_cond_variance"] = io::round_sig(cond.values.minCoeff());
      } else {
        row["grid_verdict"] = nullptr;
        row["min_cond_variance"] = nullptr;
      }
      rows.push_back(row);
      csv << level << "," << n << "," << sign << "," << io::format_number(var1) << ","
          << io::format_number(trap) << "," << io::format_number(trap / var1) << "," << verdict
          << "," << min_var << "\n";
      out << "counterexample: " << sign << " level " << level << " trapezoid/Var(X_1) "
          << io::format_number(trap / var1) << (verdict.empty() ? "" : ", verdict " + verdict)
          << "\n";
    }
    monotone[sign] = decreasing;
  }
  ojson bracket = ojson::array();
  for (int n = 0; n <= c.process.counterexample_spec.n_max; ++n)
    bracket.push_back({{"n", n},
                       {"corrected", io::round_sig(counterexample_bracket(n, true))},
                       {"plus", io::round_sig(counterexample_bracket(n, false))}});

  ojson j;
  j["format_version"] = io::kFormatVersion;
  j["kind"] = "counterexample_summary";
  j["n_max"] = c.process.counterexample_spec.n_max;
  j["b0"] = io::round_sig(c.process.counterexample_spec.b0);
  j["b_ratio"] = io::round_sig(c.process.counterexample_spec.b_ratio);
  j["rows"] = rows;
  j["trapezoid_decreasing"] = monotone;
  j["bracket"] = bracket;
  j["continuity_caveat"] = CfsReport::continuity_caveat_text;
  write_json(dir / "counterexample.json", j);
  io::write_text(dir / "counterexample_summary.csv", csv.str());
}

struct DeconvProblem {
  Eigen::VectorXd h;
  Eigen::VectorXd phi;
  std::function<double(double)> h_fn;
  std::function<double(double)> phi_fn;
};

DeconvProblem deconv_problem(const RunConfig& c) {
  const auto& d = c.deconvolve;
  const auto n = static_cast<Eigen::Index>(d.N);
  const double delta = d.T / static_cast<double>(d.N);
  DeconvProblem p;
  if (d.h == "ones") {
    p.h_fn = [](double) { return 1.0; };
  } else if (d.h == "gap") {
    const double gap = d.h_gap;
    p.h_fn = [gap](double x) { return x >= -gap ? 0.0 : 1.0; };
  } else if (d.h == "kernel") {
    if (c.process.is_counterexample())
      throw ValidationError("deconvolve.h = kernel needs a moving-average process family",
                            "deconvolve.h");
    p.h_fn = [k = c.process.kernel()](double x) { return k(std::min(x, -1e-300)); };
  }
  if (p.h_fn) {
    p.h.resize(n + 1);
    for (Eigen::Index m = 0; m <= n; ++m) p.h(m) = p.h_fn(-static_cast<double>(m) * delta);
  } else {
    p.h = load_vector(d.h_csv, n + 1, "deconvolve.h_csv").reverse();
  }

  if (d.target == "t") p.phi_fn = [](double t) { return t; };
  else if (d.target == "t2") p.phi_fn = [](double t) { return t * t; };
  else if (d.target == "tsinpi") p.phi_fn = [](double t) { return t * std::sin(std::numbers::pi * t); };
  if (p.phi_fn) {
    p.phi.resize(n + 1);
    for (Eigen::Index i = 0; i <= n; ++i) p.phi(i) = p.phi_fn(static_cast<double>(i) * delta);
  } else {
    p.phi = load_vector(d.target_csv, n + 1, "deconvolve.target_csv");
  }
  return p;
}

void run_deconvolve(const RunConfig& c, const fs::path& dir, std::ostream& out) {
  const auto p = deconv_problem(c);
  const double delta = c.deconvolve.T / static_cast<double>(c.deconvolve.N);
  const auto lambdas = c.deconvolve.lambdas.value_or(default_lambda_ladder());
  auto ladder = deconv_ladder(p.h, p.phi, delta, lambdas);
  if (p.h_fn && p.phi_fn)
    for (auto& e : ladder.entries)
      if (e.result)
        e.result->continuous_sup_error = continuous_sup_error(p.h_fn, p.phi_fn, e.result->g, delta);
  const auto& best = *ladder.entries[ladder.best].result;
  io::write_text(dir / "deconv.json", to_json(ladder));
  io::write_text(dir / "deconv_best.json", to_json(best));
  io::write_csv_column(dir / "deconv_g.csv",
                       std::span<const double>(best.g.data(), static_cast<std::size_t>(best.g.size())));
  out << "deconvolve: best lambda " << io::format_number(best.lambda) << ", sup_error "
      << io::format_number(best.sup_error) << ", edge_h " << io::format_number(best.edge_h)
      << "\n";
}

}  // namespace

void run(const std::string& subcommand, const RunConfig& config, std::ostream& out) {
  const fs::path dir = config.output_dir;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ValidationError("cannot create output directory " + dir.string(), "output_dir");
  if (subcommand == "gram") run_gram(config, dir, out);
  else if (subcommand == "simulate") run_simulate(config, dir, out);
  else if (subcommand == "check-cfs") run_check_cfs(config, dir, out);
  else if (subcommand == "counterexample") run_counterexample(config, dir, out);
  else if (subcommand == "deconvolve") run_deconvolve(config, dir, out);
  else if (subcommand == "tube") run_tube(config, dir, out);
  else throw ValidationError("unknown subcommand '" + subcommand + "'", "subcommand");

  auto echo = to_json(config);
  echo.erase("output_dir");
  write_json(dir / (subcommand + "_config.json"), echo);
}

int report_error(std::exception_ptr error, std::ostream& err) {
  ojson j;
  j["status"] = "error";
  int code = kExitFailure;
  try {
    std::rethrow_exception(error);
  } catch (const ValidationError& e) {
    j["kind"] = "validation";
    j["field"] = e.field();
    j["message"] = e.what();
    code = kExitValidation;
  } catch (const NumericalError& e) {
    j["kind"] = "numerical";
    j["message"] = e.what();
    code = kExitNumerical;
  } catch (const nlohmann::json::exception& e) {
    j["kind"] = "validation";
    j["message"] = e.what();
    code = kExitValidation;
  } catch (const std::exception& e) {
    j["kind"] = "failure";
    j["message"] = e.what();
  }
  j["exit_code"] = code;
  err << j.dump() << "\n";
  return code;
}

}  // namespace bmavg::cli
