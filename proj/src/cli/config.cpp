#include <cstdint>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include "bmavg/cli.hpp"
#include "bmavg/errors.hpp"
#include "bmavg/io.hpp"

namespace bmavg::cli {
namespace {

using json = nlohmann::json;

// Reads typed fields from one JSON object and rejects keys nobody asked for.
class Block {
 public:
  Block(const json& j, std::string path) : path_(std::move(path)) {
    if (j.is_null()) return;
    if (!j.is_object()) throw ValidationError(where() + " must be an object", where());
    obj_ = &j;
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!obj_ || !obj_->contains(key) || (*obj_)[key].is_null()) return;
    out = convert<T>(key);
  }

  template <class T>
  void get(const std::string& key, std::optional<T>& out) {
    seen_.insert(key);
    if (!obj_ || !obj_->contains(key) || (*obj_)[key].is_null()) return;
    out = convert<T>(key);
  }

  Block child(const std::string& key) {
    seen_.insert(key);
    static const json null_value;
    if (!obj_ || !obj_->contains(key)) return Block(null_value, field(key));
    return Block((*obj_)[key], field(key));
  }

  void finish() const {
    if (!obj_) return;
    for (const auto& [key, value] : obj_->items())
      if (!seen_.count(key)) throw ValidationError("unknown configuration key " + field(key), field(key));
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  template <class T>
  T convert(const std::string& key) const {
    const json& v = (*obj_)[key];
    if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
      const bool ok = v.is_number_integer() &&
                      (!std::is_unsigned_v<T> || v.is_number_unsigned() || v.get<std::int64_t>() >= 0);
      if (!ok)
        throw ValidationError(field(key) + std::string(" must be ") +
                                  (std::is_unsigned_v<T> ? "a nonnegative integer" : "an integer"),
                              field(key));
    }
    try {
      return v.template get<T>();
    } catch (const json::exception&) {
      throw ValidationError("wrong type for " + field(key), field(key));
    }
  }

  std::string where() const { return path_.empty() ? "config" : path_; }

  const json* obj_ = nullptr;
  std::string path_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& message, const std::string& field) {
  if (!ok) throw ValidationError(message, field);
}

void require_one_of(const std::string& value, std::initializer_list<const char*> allowed,
                    const std::string& field) {
  std::string list;
  for (const char* a : allowed) {
    if (value == a) return;
    list += list.empty() ? a : std::string(", ") + a;
  }
  throw ValidationError(field + " must be one of {" + list + "}, got '" + value + "'", field);
}

}  // namespace

MovingAverageKernel ProcessConfig::kernel() const {
  MovingAverageKernel k = [&] {
    if (family == "fbm") return MovingAverageKernel::fbm(H, scale);
    if (family == "indicator") return MovingAverageKernel::indicator(c, scale);
    if (family == "tabulated") {
      require(!table.empty(), "tabulated family needs process.table (a CSV path)", "process.table");
      return MovingAverageKernel::load_csv(table, scale);
    }
    throw ValidationError("process.family '" + family + "' does not define a moving-average kernel",
                          "process.family");
  }();
  return truncation_hint ? k.with_truncation_hint(*truncation_hint) : k;
}

Grid GridConfig::grid() const {
  if (times) return Grid(*times);
  require(T > 0.0 && std::isfinite(T), "grid.T must be positive", "grid.T");
  require(N >= 1, "grid.N must be >= 1", "grid.N");
  return Grid::uniform(T, N);
}

GramOptions NumericsConfig::gram_options() const {
  GramOptions o;
  o.L = L;
  o.quad_step = quad_step;
  o.mode = parse_gram_mode(mode);
  o.normalize_to_unit_variance = normalize;
  o.convergence_tol = convergence_tol;
  o.max_refinements = max_refinements;
  o.tau_psd = tau_psd;
  o.max_tail_error = max_tail_error;
  return o;
}

RunConfig parse_config(const json& j) {
  RunConfig c;
  Block root(j, "");

  auto p = root.child("process");
  p.get("family", c.process.family);
  p.get("H", c.process.H);
  p.get("c", c.process.c);
  p.get("table", c.process.table);
  p.get("scale", c.process.scale);
  p.get("truncation_hint", c.process.truncation_hint);
  p.get("n_max", c.process.counterexample_spec.n_max);
  p.get("b0", c.process.counterexample_spec.b0);
  p.get("b_ratio", c.process.counterexample_spec.b_ratio);
  p.get("corrected_sign", c.process.counterexample_spec.corrected_sign);
  p.finish();
  require_one_of(c.process.family, {"fbm", "indicator", "tabulated", "counterexample"},
                 "process.family");
  if (c.process.is_counterexample()) c.process.counterexample_spec.validate();
  else c.process.kernel();

  auto g = root.child("grid");
  g.get("T", c.grid.T);
  g.get("N", c.grid.N);
  g.get("times", c.grid.times);
  g.finish();
  c.grid.grid();

  auto n = root.child("numerics");
  n.get("L", c.numerics.L);
  n.get("quad_step", c.numerics.quad_step);
  n.get("mode", c.numerics.mode);
  n.get("normalize", c.numerics.normalize);
  n.get("convergence_tol", c.numerics.convergence_tol);
  n.get("max_refinements", c.numerics.max_refinements);
  n.get("tau_psd", c.numerics.tau_psd);
  n.get("max_tail_error", c.numerics.max_tail_error);
  n.finish();
  c.numerics.gram_options();
  require(!c.numerics.L || *c.numerics.L > 0.0, "numerics.L must be positive", "numerics.L");
  require(!c.numerics.quad_step || *c.numerics.quad_step > 0.0,
          "numerics.quad_step must be positive", "numerics.quad_step");
  require(c.numerics.tau_psd >= 0.0, "numerics.tau_psd must be >= 0", "numerics.tau_psd");
  require(c.numerics.max_tail_error > 0.0, "numerics.max_tail_error must be positive",
          "numerics.max_tail_error");

  root.get("seed", c.seed);
  root.get("output_dir", c.output_dir);

  auto s = root.child("simulate");
  s.get("method", c.simulate.method);
  s.get("n_paths", c.simulate.n_paths);
  s.get("substeps", c.simulate.substeps);
  s.finish();
  require_one_of(c.simulate.method, {"both", "cholesky", "direct"}, "simulate.method");
  require(c.simulate.n_paths >= 2, "simulate.n_paths must be >= 2", "simulate.n_paths");
  require(c.simulate.substeps >= 1, "simulate.substeps must be >= 1", "simulate.substeps");

  auto f = root.child("cfs");
  f.get("tau_cfs", c.cfs.tau_cfs);
  f.get("tau_degen", c.cfs.tau_degen);
  f.get("k_smallest", c.cfs.k_smallest);
  f.get("weights", c.cfs.weights);
  f.get("tube_epsilons", c.cfs.tube_epsilons);
  f.get("tube_target", c.cfs.tube_target);
  f.get("tube_target_csv", c.cfs.tube_target_csv);
  f.get("n_paths", c.cfs.n_paths);
  f.finish();
  require(c.cfs.tau_cfs >= 0.0, "cfs.tau_cfs must be >= 0", "cfs.tau_cfs");
  require(c.cfs.tau_degen >= 0.0, "cfs.tau_degen must be >= 0", "cfs.tau_degen");
  require(c.cfs.k_smallest >= 0, "cfs.k_smallest must be >= 0", "cfs.k_smallest");
  require_one_of(c.cfs.tube_target, {"zero", "csv"}, "cfs.tube_target");
  for (double e : c.cfs.tube_epsilons)
    require(e > 0.0, "cfs.tube_epsilons must be positive", "cfs.tube_epsilons");
  require(c.cfs.n_paths >= 1, "cfs.n_paths must be >= 1", "cfs.n_paths");

  auto t = root.child("tube");
  t.get("target", c.tube.target);
  t.get("target_csv", c.tube.target_csv);
  t.get("epsilons", c.tube.epsilons);
  t.get("n_paths", c.tube.n_paths);
  t.finish();
  require_one_of(c.tube.target, {"zero", "csv"}, "tube.target");
  require(!c.tube.epsilons.empty(), "tube.epsilons must not be empty", "tube.epsilons");
  for (double e : c.tube.epsilons)
    require(e > 0.0, "tube.epsilons must be positive", "tube.epsilons");
  require(c.tube.n_paths >= 1, "tube.n_paths must be >= 1", "tube.n_paths");

  auto x = root.child("counterexample");
  x.get("levels", c.counterexample.levels);
  x.get("verdict_max_level", c.counterexample.verdict_max_level);
  x.get("both_signs", c.counterexample.both_signs);
  x.finish();
  require(!c.counterexample.levels.empty(), "counterexample.levels must not be empty",
          "counterexample.levels");
  for (int level : c.counterexample.levels)
    require(level >= 1 && level <= 14, "counterexample.levels must lie in [1, 14]",
            "counterexample.levels");

  auto d = root.child("deconvolve");
  d.get("T", c.deconvolve.T);
  d.get("N", c.deconvolve.N);
  d.get("h", c.deconvolve.h);
  d.get("h_gap", c.deconvolve.h_gap);
  d.get("h_csv", c.deconvolve.h_csv);
  d.get("target", c.deconvolve.target);
  d.get("target_csv", c.deconvolve.target_csv);
  d.get("lambdas", c.deconvolve.lambdas);
  d.finish();
  require(c.deconvolve.T > 0.0, "deconvolve.T must be positive", "deconvolve.T");
  require(c.deconvolve.N >= 1 && c.deconvolve.N <= 8192, "deconvolve.N must lie in [1, 8192]",
          "deconvolve.N");
  require_one_of(c.deconvolve.h, {"ones", "gap", "kernel", "csv"}, "deconvolve.h");
  require(c.deconvolve.h_gap >= 0.0, "deconvolve.h_gap must be >= 0", "deconvolve.h_gap");
  require_one_of(c.deconvolve.target, {"t", "t2", "tsinpi", "csv"}, "deconvolve.target");
  if (c.deconvolve.lambdas)
    for (double l : *c.deconvolve.lambdas)
      require(l >= 0.0, "deconvolve.lambdas must be >= 0", "deconvolve.lambdas");

  root.finish();
  return c;
}

nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  auto opt = [](const auto& v) -> nlohmann::ordered_json {
    if (v) return *v;
    return nullptr;
  };
  j["process"] = {{"family", c.process.family},
                  {"H", c.process.H},
                  {"c", c.process.c},
                  {"table", c.process.table},
                  {"scale", c.process.scale},
                  {"truncation_hint", opt(c.process.truncation_hint)},
                  {"n_max", c.process.counterexample_spec.n_max},
                  {"b0", c.process.counterexample_spec.b0},
                  {"b_ratio", c.process.counterexample_spec.b_ratio},
                  {"corrected_sign", c.process.counterexample_spec.corrected_sign}};
  j["grid"] = {{"T", c.grid.T}, {"N", c.grid.N}, {"times", opt(c.grid.times)}};
  j["numerics"] = {{"L", opt(c.numerics.L)},
                   {"quad_step", opt(c.numerics.quad_step)},
                   {"mode", c.numerics.mode},
                   {"normalize", c.numerics.normalize},
                   {"convergence_tol", c.numerics.convergence_tol},
                   {"max_refinements", c.numerics.max_refinements},
                   {"tau_psd", c.numerics.tau_psd},
                   {"max_tail_error", c.numerics.max_tail_error}};
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["simulate"] = {{"method", c.simulate.method},
                   {"n_paths", c.simulate.n_paths},
                   {"substeps", c.simulate.substeps}};
  j["cfs"] = {{"tau_cfs", c.cfs.tau_cfs},
              {"tau_degen", c.cfs.tau_degen},
              {"k_smallest", c.cfs.k_smallest},
              {"weights", c.cfs.weights},
              {"tube_epsilons", c.cfs.tube_epsilons},
              {"tube_target", c.cfs.tube_target},
              {"tube_target_csv", c.cfs.tube_target_csv},
              {"n_paths", c.cfs.n_paths}};
  j["tube"] = {{"target", c.tube.target},
               {"target_csv", c.tube.target_csv},
               {"epsilons", c.tube.epsilons},
               {"n_paths", c.tube.n_paths}};
  j["counterexample"] = {{"levels", c.counterexample.levels},
                         {"verdict_max_level", c.counterexample.verdict_max_level},
                         {"both_signs", c.counterexample.both_signs}};
  j["deconvolve"] = {{"T", c.deconvolve.T},
                     {"N", c.deconvolve.N},
                     {"h", c.deconvolve.h},
                     {"h_gap", c.deconvolve.h_gap},
                     {"h_csv", c.deconvolve.h_csv},
                     {"target", c.deconvolve.target},
                     {"target_csv", c.deconvolve.target_csv},
                     {"lambdas", opt(c.deconvolve.lambdas)}};
  return j;
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ValidationError("--set expects key=value, got '" + assignment + "'", "--set");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  std::string pointer;
  std::stringstream ss(key);
  std::string part;
  while (std::getline(ss, part, '.')) {
    if (part.empty()) throw ValidationError("empty component in key '" + key + "'", key);
    pointer += "/" + part;
  }
  if (j.is_null()) j = json::object();
  try {
    j[json::json_pointer(pointer)] = value;
  } catch (const json::exception&) {
    throw ValidationError("cannot set '" + key + "' (parent is not an object)", key);
  }
}

json load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file " + path.string(), "--config");
  try {
    return json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what(), "--config");
  }
}

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names{"gram",           "simulate",   "check-cfs",
                                              "counterexample", "deconvolve", "tube"};
  return names;
}

}  // namespace bmavg::cli
