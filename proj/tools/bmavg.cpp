#include <cstdlib>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "bmavg/cli.hpp"
#include "bmavg/errors.hpp"
#include "bmavg/parallel.hpp"

namespace {

struct Flags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::vector<std::string> overrides;
};

int execute(const std::string& subcommand, const Flags& flags) {
  using namespace bmavg;
  try {
    nlohmann::json j = flags.config.empty() ? nlohmann::json::object()
                                            : cli::load_config_file(flags.config);
    for (const auto& assignment : flags.overrides) cli::apply_override(j, assignment);
    auto config = cli::parse_config(j);
    if (flags.seed) config.seed = *flags.seed;
    if (const char* env = std::getenv("BMAVG_OUT_DIR"); env && *env) config.output_dir = env;
    if (!flags.out.empty()) config.output_dir = flags.out;
    if (flags.threads) {
      if (*flags.threads == 0) throw ValidationError("--threads must be >= 1", "--threads");
      set_thread_count(*flags.threads);
    }
    cli::run(subcommand, config, std::cout);
    return cli::kExitOk;
  } catch (...) {
    return cli::report_error(std::current_exception(), std::cerr);
  }
}

const std::map<std::string, std::string> kDescriptions = {
    {"gram", "Covariance matrix on the grid (gram.csv, gram.json)"},
    {"simulate", "Sample paths by Cholesky and by direct Riemann simulation"},
    {"check-cfs", "Conditional increment variances, degenerate functionals, tubes"},
    {"counterexample", "Grid verdicts and trapezoid variances across refinements"},
    {"deconvolve", "Regularized Volterra deconvolution over a lambda ladder"},
    {"tube", "Monte Carlo tube probabilities with Wilson intervals"}};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian moving averages: covariance, simulation, CFS diagnostics, deconvolution"};
  app.require_subcommand(1);
  Flags flags;
  std::string chosen;
  for (const auto& name : bmavg::cli::subcommands()) {
    auto* sub = app.add_subcommand(name, kDescriptions.at(name));
    sub->add_option("-c,--config", flags.config, "JSON configuration file");
    sub->add_option("-o,--out", flags.out, "Output directory (overrides BMAVG_OUT_DIR)");
    sub->add_option("--seed", flags.seed, "Random seed");
    sub->add_option("--threads", flags.threads, "Worker threads (overrides BMAVG_THREADS)");
    sub->add_option("--set", flags.overrides, "Override a config key: dotted.key=value")
        ->take_all();
    sub->callback([&chosen, name] { chosen = name; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return bmavg::cli::report_error(
        std::make_exception_ptr(bmavg::ValidationError(e.what(), "arguments")), std::cerr);
  }
  return execute(chosen, flags);
}
