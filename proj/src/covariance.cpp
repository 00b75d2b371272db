#include "bmavg/covariance.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <nlohmann/json.hpp>

#include "bmavg/errors.hpp"
#include "bmavg/io.hpp"
#include "bmavg/parallel.hpp"
#include "bmavg/quadrature.hpp"

namespace bmavg {
namespace {

constexpr Eigen::Index kRowBlock = 64;
constexpr Eigen::Index kNodeChunk = 4096;

// k(t_row, anchor + offset); see QuadratureRule for the split.
using KernelRow = std::function<double(std::size_t row, double anchor, double offset)>;

// Sigma = A A^T with A(i, q) = sqrt(w_q) k(t_i, s_q), where k(t_i, s) = 0 for
// s > t_i. Nodes ascend, so block (R, C) only needs nodes up to max t in C.
// Node chunks are accumulated in a fixed order; row blocks run in parallel.
Eigen::MatrixXd assemble_causal(const QuadratureRule& rule, std::span<const double> times,
                                const KernelRow& kernel) {
  const auto n = static_cast<Eigen::Index>(times.size());
  const auto nq = static_cast<Eigen::Index>(rule.size());
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(n, n);
  const Eigen::Index n_blocks = (n + kRowBlock - 1) / kRowBlock;
  // Node index just past the last node <= max time of each row block.
  std::vector<Eigen::Index> block_end(n_blocks);
  for (Eigen::Index b = 0; b < n_blocks; ++b) {
    const double tmax = times[std::min(n, (b + 1) * kRowBlock) - 1];
    block_end[b] = std::upper_bound(rule.nodes.begin(), rule.nodes.end(), tmax) - rule.nodes.begin();
  }
  for (Eigen::Index q0 = 0; q0 < nq; q0 += kNodeChunk) {
    const Eigen::Index q1 = std::min(nq, q0 + kNodeChunk);
    Eigen::MatrixXd a(n, q1 - q0);
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
      const double t = times[i];
      for (Eigen::Index q = q0; q < q1; ++q) {
        const double s = rule.nodes[q];
        a(static_cast<Eigen::Index>(i), q - q0) =
            s > t ? 0.0 : std::sqrt(rule.weights[q]) * kernel(i, rule.anchors[q], rule.offsets[q]);
      }
    });
    parallel_for(static_cast<std::size_t>(n_blocks), [&](std::size_t rb) {
      const auto r = static_cast<Eigen::Index>(rb);
      const Eigen::Index r0 = r * kRowBlock, rn = std::min(n, r0 + kRowBlock) - r0;
      for (Eigen::Index c = 0; c <= r; ++c) {
        const Eigen::Index end = std::min(block_end[c], q1);
        if (end <= q0) continue;
        const Eigen::Index c0 = c * kRowBlock, cn = std::min(n, c0 + kRowBlock) - c0;
        sigma.block(r0, c0, rn, cn).noalias() +=
            a.block(r0, 0, rn, end - q0) * a.block(c0, 0, cn, end - q0).transpose();
      }
    });
  }
  sigma.triangularView<Eigen::StrictlyUpper>() = sigma.transpose();
  return sigma;
}

Eigen::VectorXd assemble_diagonal(const QuadratureRule& rule, std::span<const double> times,
                                  const KernelRow& kernel) {
  Eigen::VectorXd diag(static_cast<Eigen::Index>(times.size()));
  parallel_for(times.size(), [&](std::size_t i) {
    double sum = 0.0;
    for (std::size_t q = 0; q < rule.size() && rule.nodes[q] <= times[i]; ++q) {
      const double k = kernel(i, rule.anchors[q], rule.offsets[q]);
      sum += rule.weights[q] * k * k;
    }
    diag(static_cast<Eigen::Index>(i)) = sum;
  });
  return diag;
}

// A quadrature rule together with the causal integrand it is applied to.
struct CausalIntegrand {
  QuadratureRule rule;
  KernelRow kernel;
};

// Halves the step until consecutive results agree. Above the eigen size limit
// only the diagonal is compared, which needs no matrix product, and the full
// matrix is assembled once at the accepted step.
Eigen::MatrixXd converge(const std::function<CausalIntegrand(double)>& build,
                         std::span<const double> times, double step, const GramOptions& options,
                         GramMatrix& meta_out) {
  const bool diagonal_only = times.size() > options.eigen_max_dim;
  auto full = [&](double h) {
    const auto in = build(h);
    return assemble_causal(in.rule, times, in.kernel);
  };
  auto diagonal = [&](double h) {
    const auto in = build(h);
    return assemble_diagonal(in.rule, times, in.kernel);
  };
  Eigen::MatrixXd coarse = diagonal_only ? Eigen::MatrixXd(diagonal(step)) : full(step);
  for (int k = 0; k <= options.max_refinements; ++k) {
    Eigen::MatrixXd fine = diagonal_only ? Eigen::MatrixXd(diagonal(step / 2.0)) : full(step / 2.0);
    const double scale =
        std::max(diagonal_only ? fine.maxCoeff() : fine.diagonal().maxCoeff(), 1e-300);
    const double diff = (coarse - fine).cwiseAbs().maxCoeff();
    if (diff <= options.convergence_tol * scale) {
      meta_out.quad_step = step / 2.0;
      meta_out.quad_error = diff;
      meta_out.convergence_tol = options.convergence_tol * scale;
      meta_out.convergence_check = diagonal_only ? "diagonal" : "full";
      return diagonal_only ? full(step / 2.0) : fine;
    }
    coarse = std::move(fine);
    step /= 2.0;
  }
  throw NumericalError("quadrature did not converge after " +
                       std::to_string(options.max_refinements) + " step halvings");
}

void check_psd(GramMatrix& g, double tau_psd, std::size_t eigen_max_dim) {
  const auto n = g.dim();
  if (n == 0) return;
  if (static_cast<std::size_t>(n) > eigen_max_dim) {
    g.psd_check = "structural";
    for (Eigen::Index i = 0; i < n; ++i)
      if (g.sigma(i, i) < 0.0) throw NumericalError("negative variance on the diagonal");
    return;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g.sigma);
  const auto& ev = es.eigenvalues();
  const double norm = std::max(std::abs(ev(0)), std::abs(ev(n - 1)));
  g.psd_check = "eigen";
  g.min_eigenvalue = ev(0);
  if (ev(0) < -tau_psd * norm)
    throw NumericalError("covariance is not positive semidefinite: smallest eigenvalue " +
                         io::format_number(ev(0)) + " vs norm " + io::format_number(norm));
  // Eigenvalues within the solver's own backward error are left alone; anything
  // more negative (but within tau_psd) is clamped and recorded.
  const double rounding = 64.0 * static_cast<double>(n) * std::numeric_limits<double>::epsilon() * norm;
  if (ev(0) < -rounding) {
    Eigen::VectorXd clamped = ev.cwiseMax(0.0);
    g.sigma = es.eigenvectors() * clamped.asDiagonal() * es.eigenvectors().transpose();
    g.sigma = 0.5 * (g.sigma + g.sigma.transpose()).eval();
    g.psd_repaired = true;
  }
}

std::vector<double> sorted_unique(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

CausalIntegrand kernel_integrand(const MovingAverageKernel& kernel, const Grid& grid, double L,
                                 double step, const GramOptions& options) {
  const double T = grid.horizon();
  const bool full = options.mode == GramMode::full;
  const double lo = full ? -L : 0.0;
  std::vector<double> pts(grid.times().begin(), grid.times().end());
  pts.push_back(0.0);
  for (double b : kernel.breakpoints()) {
    if (full) pts.push_back(b);
    for (double t : grid.times()) pts.push_back(b + t);
  }
  const auto bps = clip_breakpoints(std::move(pts), lo, std::max(T, lo));
  std::vector<double> singular;
  if (kernel.has_power_singularity()) {
    singular.assign(grid.times().begin(), grid.times().end());
    singular.push_back(0.0);
    singular = sorted_unique(std::move(singular));
  }
  PanelLayout layout;
  layout.max_width = step;
  layout.window_lo = full ? -std::max(T, step) : 0.0;
  layout.window_hi = T;
  layout.order = options.order;
  layout.grading_levels = options.grading_levels;
  if (const auto* fbm = std::get_if<FbmFamily>(&kernel.family()))
    layout.innermost_power = std::max(1, static_cast<int>(std::ceil(0.5 / fbm->hurst - 1e-12)));
  const auto times = grid.times();
  if (full)
    return {composite_rule(bps, singular, layout),
            [&kernel, times](std::size_t i, double anchor, double offset) {
              return kernel.increment(times[i], anchor, offset);
            }};
  return {composite_rule(bps, singular, layout),
          [&kernel, times](std::size_t i, double anchor, double offset) {
            return anchor + offset < 0.0 ? 0.0 : kernel((anchor - times[i]) + offset);
          }};
}

void validate_options(const GramOptions& o) {
  if (o.L && !(*o.L > 0.0)) throw ValidationError("L must be positive", "numerics.L");
  if (o.quad_step && !(*o.quad_step > 0.0))
    throw ValidationError("quad_step must be positive", "numerics.quad_step");
  if (!(o.convergence_tol > 0.0))
    throw ValidationError("convergence tolerance must be positive", "numerics.convergence_tol");
  if (o.max_refinements < 0)
    throw ValidationError("max_refinements must be >= 0", "numerics.max_refinements");
}

double default_step(const Grid& grid) {
  const double span = std::max(grid.horizon(), 1.0);
  const double h = grid.size() > 1 ? grid.min_spacing() : span;
  return std::max(h / 4.0, std::ldexp(span, -12));
}

}  // namespace

std::string to_string(GramMode mode) { return mode == GramMode::full ? "full" : "fresh"; }

GramMode parse_gram_mode(const std::string& name) {
  if (name == "full") return GramMode::full;
  if (name == "fresh") return GramMode::fresh;
  throw ValidationError("gram mode must be 'full' or 'fresh', got '" + name + "'",
                        "numerics.mode");
}

GramMatrix::GramMatrix(Grid g, Eigen::MatrixXd s) : grid(std::move(g)), sigma(std::move(s)) {
  if (sigma.rows() != sigma.cols() || static_cast<std::size_t>(sigma.rows()) != grid.size())
    throw ValidationError("covariance dimension does not match grid size");
}

double GramMatrix::max_diagonal() const noexcept {
  return dim() == 0 ? 0.0 : sigma.diagonal().maxCoeff();
}

double default_truncation(const MovingAverageKernel& kernel, const Grid& grid) {
  const double T = std::max(grid.horizon(), 1e-12);
  const double base = std::max(100.0 * T, kernel.truncation_hint());
  const auto* fbm = std::get_if<FbmFamily>(&kernel.family());
  if (!fbm || fbm->hurst == 0.5) return base;
  const double H = fbm->hurst;
  const double p = H - 0.5;
  const double target = 1e-10 * kernel.scale() * kernel.scale() * std::pow(T, 2.0 * H);
  const double coef = kernel.scale() * kernel.scale() * p * p * T * T / (2.0 - 2.0 * H);
  const double solved = std::pow(coef / target, 1.0 / (2.0 - 2.0 * H));
  return std::max(base, std::min(solved, 1e15 * std::max(T, 1.0)));
}

GramMatrix gram(const MovingAverageKernel& kernel, const Grid& grid, const GramOptions& options) {
  validate_options(options);
  const double L = options.L.value_or(default_truncation(kernel, grid));
  const double step = options.quad_step.value_or(default_step(grid));

  GramMatrix out(grid, Eigen::MatrixXd::Zero(grid.size(), grid.size()));
  out.sigma = converge([&](double h) { return kernel_integrand(kernel, grid, L, h, options); },
                       grid.times(), step, options, out);
  out.source = kernel.describe();
  out.mode = to_string(options.mode);
  out.L = options.mode == GramMode::full ? L : 0.0;

  if (options.mode == GramMode::full)
    for (double t : grid.times()) out.tail_error = std::max(out.tail_error, tail_bound(kernel, t, L));
  const double maxdiag = out.max_diagonal();
  if (maxdiag > 0.0 && out.tail_error > options.max_tail_error * maxdiag)
    throw NumericalError("truncation tail error " + io::format_number(out.tail_error) +
                         " exceeds cap " + io::format_number(options.max_tail_error * maxdiag) +
                         "; increase L");

  if (options.normalize_to_unit_variance) {
    double var1 = 0.0;
    const auto times = grid.times();
    const auto it = std::find(times.begin(), times.end(), 1.0);
    if (it != times.end()) {
      const auto k = it - times.begin();
      var1 = out.sigma(k, k);
    } else {
      GramOptions unit = options;
      unit.normalize_to_unit_variance = false;
      unit.L = L;
      unit.quad_step = std::min(out.quad_step, 0.25);
      var1 = gram(kernel, Grid({1.0}), unit).sigma(0, 0);
    }
    if (!(var1 > 0.0)) throw NumericalError("cannot normalize: Var(X_1) is zero");
    out.sigma /= var1;
    out.normalization = var1;
    out.tail_error /= var1;
    out.quad_error /= var1;
    out.convergence_tol /= var1;
  }
  check_psd(out, options.tau_psd, options.eigen_max_dim);
  return out;
}

double fbm_cov_closed(double t, double u, double hurst) {
  if (!(hurst > 0.0 && hurst < 1.0))
    throw ValidationError("Hurst index H must lie in (0, 1)", "H");
  if (!(t >= 0.0 && u >= 0.0)) throw ValidationError("times must be nonnegative");
  const double h2 = 2.0 * hurst;
  return 0.5 * (std::pow(t, h2) + std::pow(u, h2) - std::pow(std::abs(t - u), h2));
}

GramMatrix counterexample_gram(const CounterexampleSpec& spec, const Grid& grid,
                          std::optional<double> quad_step, const GramOptions& options) {
  spec.validate();
  if (grid.horizon() > 1.0) throw ValidationError("example grid must lie in [0, 1]", "grid");
  if (quad_step && !(*quad_step > 0.0))
    throw ValidationError("quad_step must be positive", "numerics.quad_step");
  std::vector<double> a(spec.n_max + 1);
  for (int n = 0; n <= spec.n_max; ++n) a[n] = spec.a(n);

  auto build = [&](double h) -> CausalIntegrand {
    std::vector<double> pts(grid.times().begin(), grid.times().end());
    pts.insert(pts.end(), a.begin(), a.end());
    const auto bps = clip_breakpoints(std::move(pts), 0.0, a.back());
    PanelLayout layout;
    layout.max_width = h;
    layout.window_lo = 0.0;
    layout.window_hi = 1.0;
    // Each kernel is linear in v between breakpoints: 2 Gauss points are exact.
    layout.order = 2;
    const auto times = grid.times();
    return {composite_rule(bps, {}, layout), [&a, &spec, times](std::size_t i, double anchor,
                                                                double offset) {
              const double v = anchor + offset;
              const auto n =
                  static_cast<int>(std::upper_bound(a.begin(), a.end(), v) - a.begin()) - 1;
              return (n < 0 || n >= spec.n_max) ? 0.0 : counterexample_kernel(spec, n, times[i], v);
            }};
  };

  GramMatrix out(grid, Eigen::MatrixXd::Zero(grid.size(), grid.size()));
  // The kernels are linear in v between breakpoints, so whole segments are the default panels.
  out.sigma = converge(build, grid.times(), quad_step.value_or(1.0), options, out);
  out.source = "counterexample(n_max=" + std::to_string(spec.n_max) + ", sign=" +
               (spec.corrected_sign ? "corrected" : "plus") + ")";
  out.mode = "counterexample";
  check_psd(out, options.tau_psd, options.eigen_max_dim);
  return out;
}

GramMatrix make_gram(Eigen::MatrixXd sigma, std::optional<Grid> grid, double tau_psd,
                     std::size_t eigen_max_dim) {
  if (sigma.rows() != sigma.cols()) throw ValidationError("covariance must be square");
  if (!sigma.allFinite()) throw ValidationError("covariance has non-finite entries");
  const auto n = sigma.rows();
  if (!grid) {
    std::vector<double> t(n);
    for (Eigen::Index i = 0; i < n; ++i) t[i] = static_cast<double>(i);
    grid = Grid(std::move(t));
  }
  const double norm = n ? sigma.cwiseAbs().maxCoeff() : 0.0;
  if (n && (sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(norm, 1e-300))
    throw ValidationError("covariance is not symmetric");
  GramMatrix g(*grid, 0.5 * (sigma + sigma.transpose()));
  check_psd(g, tau_psd, eigen_max_dim);
  return g;
}

void write_gram(const GramMatrix& g, const std::filesystem::path& stem) {
  io::write_csv(stem.string() + ".csv", g.sigma);
  nlohmann::ordered_json j;
  j["format_version"] = io::kFormatVersion;
  j["kind"] = "gram";
  j["source"] = g.source;
  j["mode"] = g.mode;
  std::vector<double> times;
  for (double t : g.grid.times()) times.push_back(io::round_sig(t));
  j["grid"] = times;
  j["L"] = io::round_sig(g.L);
  j["quad_step"] = io::round_sig(g.quad_step);
  j["tail_error"] = io::round_sig(g.tail_error);
  j["quad_error"] = io::round_sig(g.quad_error);
  j["convergence_tol"] = io::round_sig(g.convergence_tol);
  j["convergence_check"] = g.convergence_check;
  j["normalization"] = io::round_sig(g.normalization);
  j["psd_check"] = g.psd_check;
  j["psd_repaired"] = g.psd_repaired;
  if (std::isfinite(g.min_eigenvalue)) j["min_eigenvalue"] = io::round_sig(g.min_eigenvalue);
  else j["min_eigenvalue"] = nullptr;
  io::write_text(stem.string() + ".json", j.dump(2) + "\n");
}

GramMatrix read_gram(const std::filesystem::path& stem) {
  const auto rows = io::read_csv(stem.string() + ".csv");
  const auto n = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd sigma(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(rows[i].size()) != n)
      throw ValidationError("gram CSV must be square");
    for (Eigen::Index j = 0; j < n; ++j) sigma(i, j) = rows[i][j];
  }
  const auto j = nlohmann::json::parse(io::read_text(stem.string() + ".json"));
  if (j.value("format_version", 0) != io::kFormatVersion)
    throw ValidationError("unsupported gram format_version");
  GramMatrix g = make_gram(sigma, Grid(j.at("grid").get<std::vector<double>>()));
  g.source = j.value("source", "external");
  g.mode = j.value("mode", "external");
  g.L = j.value("L", 0.0);
  g.quad_step = j.value("quad_step", 0.0);
  g.tail_error = j.value("tail_error", 0.0);
  g.quad_error = j.value("quad_error", 0.0);
  g.convergence_tol = j.value("convergence_tol", 0.0);
  g.convergence_check = j.value("convergence_check", "none");
  g.normalization = j.value("normalization", 1.0);
  return g;
}

}  // namespace bmavg
