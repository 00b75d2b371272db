#include <algorithm>
#include <cmath>

#include "bmavg/errors.hpp"
#include "bmavg/gaussian.hpp"
#include "bmavg/parallel.hpp"
#include "bmavg/philox.hpp"
#include "bmavg/quadrature.hpp"

namespace bmavg {
namespace {

constexpr std::size_t kPathBlock = 256;

void validate_run(const Grid& grid, std::size_t n_paths, int substeps) {
  if (substeps < 1) throw ValidationError("substeps must be >= 1", "simulate.substeps");
  if (n_paths == 0) throw ValidationError("n_paths must be positive", "simulate.n_paths");
  (void)grid;
}

// Cell edges of the Riemann mesh on [-L, T]: every grid time and kernel
// breakpoint is an edge; cells have width spacing / substeps inside [-T, T]
// and grow geometrically further into the past.
std::vector<double> kernel_mesh(const MovingAverageKernel& kernel, const Grid& grid,
                                int substeps, double L) {
  const double T = grid.horizon();
  std::vector<double> pts(grid.times().begin(), grid.times().end());
  pts.push_back(0.0);
  for (double b : kernel.breakpoints()) {
    pts.push_back(b);
    for (double t : grid.times()) pts.push_back(b + t);
  }
  const auto bps = clip_breakpoints(std::move(pts), -L, std::max(T, -L));
  const double spacing = grid.size() > 1 ? grid.min_spacing() : std::max(T, 1.0);
  PanelLayout layout;
  layout.max_width = spacing / substeps;
  layout.window_lo = -std::max(T, layout.max_width);
  layout.window_hi = T;
  layout.growth = std::min(0.5, 4.0 / substeps);
  layout.grading_levels = 0;
  return panel_edges(bps, {}, layout);
}

// Midpoint kernel matrix K(i, c) and cell widths.
struct RiemannScheme {
  Eigen::MatrixXd k;
  Eigen::VectorXd width;
};

RiemannScheme kernel_scheme(const MovingAverageKernel& kernel, const Grid& grid, int substeps,
                            double L) {
  const auto edges = kernel_mesh(kernel, grid, substeps, L);
  const auto cells = static_cast<Eigen::Index>(edges.size()) - 1;
  const auto n = static_cast<Eigen::Index>(grid.size());
  RiemannScheme s{Eigen::MatrixXd(n, cells), Eigen::VectorXd(cells)};
  for (Eigen::Index c = 0; c < cells; ++c) {
    const double mid = 0.5 * (edges[c] + edges[c + 1]);
    s.width(c) = edges[c + 1] - edges[c];
    for (Eigen::Index i = 0; i < n; ++i) s.k(i, c) = kernel.increment(grid[i], mid);
  }
  return s;
}

// Brownian mesh on [0, 1] for the counterexample: a_0..a_{n_max} and grid
// times are nodes, each segment split into `substeps` equal cells.
struct CounterexampleMesh {
  std::vector<double> nodes;
  std::vector<std::size_t> a_index;     // node index of a_n, n = 0..n_max
  std::vector<std::size_t> time_index;  // node index of each grid time
};

CounterexampleMesh counterexample_mesh(const CounterexampleSpec& spec, const Grid& grid, int substeps) {
  std::vector<double> pts(grid.times().begin(), grid.times().end());
  for (int n = 0; n <= spec.n_max; ++n) pts.push_back(spec.a(n));
  const auto bps = clip_breakpoints(std::move(pts), 0.0, 1.0);
  CounterexampleMesh m;
  for (std::size_t k = 0; k + 1 < bps.size(); ++k) {
    for (int j = 0; j < substeps; ++j)
      m.nodes.push_back(bps[k] + (bps[k + 1] - bps[k]) * j / substeps);
  }
  m.nodes.push_back(1.0);
  auto locate = [&](double x) {
    return static_cast<std::size_t>(std::lower_bound(m.nodes.begin(), m.nodes.end(), x) -
                                    m.nodes.begin());
  };
  for (int n = 0; n <= spec.n_max; ++n) m.a_index.push_back(locate(spec.a(n)));
  for (double t : grid.times()) m.time_index.push_back(locate(t));
  return m;
}

// X at grid times from Brownian values b at mesh nodes (b[0] = B_0 = 0):
//   X^n_t = b_n (B_{t clamped to [a_n, a_{n+1}]} - B_{a_n})
//         + s b_n 2^(2n+3) int_{a_n}^1 (B_{u ^ a_{n+1}} - B_{a_n}) du * int_0^t 1(u >= a_{n+1}) du
// with s = +1 for the plus sign, -1 corrected. The du-integral uses the trapezoid rule.
void counterexample_values(const CounterexampleSpec& spec, const Grid& grid, const CounterexampleMesh& m,
                      std::span<const double> b, std::span<double> x) {
  std::fill(x.begin(), x.end(), 0.0);
  const double s = -spec.sign();
  for (int n = 0; n < spec.n_max; ++n) {
    const std::size_t i0 = m.a_index[n], i1 = m.a_index[n + 1];
    const double lo = m.nodes[i0], hi = m.nodes[i1];
    const double base = b[i0];
    double z = 0.0;
    for (std::size_t k = i0; k < i1; ++k)
      z += 0.5 * (b[k] + b[k + 1] - 2.0 * base) * (m.nodes[k + 1] - m.nodes[k]);
    z += (1.0 - hi) * (b[i1] - base);
    const double bn = spec.b(n);
    const double coef = s * bn * std::ldexp(1.0, 2 * n + 3) * z;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const double t = grid[i];
      const std::size_t ti = m.time_index[i];
      const std::size_t clamp = t <= lo ? i0 : (t >= hi ? i1 : ti);
      x[i] += bn * (b[clamp] - base) + coef * std::max(t - hi, 0.0);
    }
  }
}

// Bound on the distance from the coarse scheme to its limit, assuming the
// differences between successive refinements shrink at least geometrically.
// The contraction ratio is estimated from three levels and capped at 0.9; the
// result is doubled for safety in the pre-asymptotic range.
Eigen::MatrixXd tail_allowance(const Eigen::MatrixXd& coarse, const Eigen::MatrixXd& mid,
                               const Eigen::MatrixXd& fine) {
  const Eigen::MatrixXd d1 = (coarse - mid).cwiseAbs();
  const double n1 = d1.maxCoeff();
  const double n2 = (mid - fine).cwiseAbs().maxCoeff();
  const double ratio = n1 > 0.0 ? std::clamp(n2 / n1, 0.0, 0.9) : 0.0;
  return (2.0 / (1.0 - ratio)) * d1;
}

}  // namespace

PathEnsemble direct_simulate(const MovingAverageKernel& kernel, const Grid& grid,
                             std::size_t n_paths, std::uint64_t seed,
                             const DirectOptions& options) {
  validate_run(grid, n_paths, options.substeps);
  const double L = options.L.value_or(default_truncation(kernel, grid));
  if (!(L > 0.0)) throw ValidationError("L must be positive", "simulate.L");
  const auto scheme = kernel_scheme(kernel, grid, options.substeps, L);
  const Eigen::Index cells = scheme.width.size();
  const Eigen::VectorXd root_w = scheme.width.cwiseSqrt();
  PathEnsemble out{grid, Eigen::MatrixXd(static_cast<Eigen::Index>(n_paths),
                                         static_cast<Eigen::Index>(grid.size())),
                   seed, "direct", options.substeps, L, kernel.describe()};
  const std::size_t blocks = (n_paths + kPathBlock - 1) / kPathBlock;
  parallel_for(blocks, [&](std::size_t blk) {
    const std::size_t p0 = blk * kPathBlock;
    const std::size_t pn = std::min(n_paths, p0 + kPathBlock) - p0;
    Eigen::MatrixXd db(cells, static_cast<Eigen::Index>(pn));
    for (std::size_t j = 0; j < pn; ++j) {
      const NormalStream normals(seed, p0 + j);
      for (Eigen::Index c = 0; c < cells; ++c)
        db(c, static_cast<Eigen::Index>(j)) = root_w(c) * normals(static_cast<std::uint64_t>(c));
    }
    out.paths.middleRows(static_cast<Eigen::Index>(p0), static_cast<Eigen::Index>(pn)).noalias() =
        (scheme.k * db).transpose();
  });
  return out;
}

PathEnsemble direct_simulate(const CounterexampleSpec& spec, const Grid& grid, std::size_t n_paths,
                             std::uint64_t seed, int substeps) {
  spec.validate();
  validate_run(grid, n_paths, substeps);
  if (grid.horizon() > 1.0) throw ValidationError("example grid must lie in [0, 1]", "grid");
  const auto mesh = counterexample_mesh(spec, grid, substeps);
  const std::size_t nodes = mesh.nodes.size();
  PathEnsemble out{grid, Eigen::MatrixXd(static_cast<Eigen::Index>(n_paths),
                                         static_cast<Eigen::Index>(grid.size())),
                   seed, "direct", substeps, 0.0,
                   std::string("counterexample(") + (spec.corrected_sign ? "corrected" : "plus") + ")"};
  parallel_for(n_paths, [&](std::size_t p) {
    const NormalStream normals(seed, p);
    std::vector<double> b(nodes, 0.0);
    for (std::size_t k = 1; k < nodes; ++k)
      b[k] = b[k - 1] + std::sqrt(mesh.nodes[k] - mesh.nodes[k - 1]) * normals(k - 1);
    std::vector<double> x(grid.size());
    counterexample_values(spec, grid, mesh, b, x);
    for (std::size_t i = 0; i < x.size(); ++i)
      out.paths(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(i)) = x[i];
  });
  return out;
}

Eigen::MatrixXd direct_scheme_covariance(const MovingAverageKernel& kernel, const Grid& grid,
                                         int substeps, double L) {
  if (substeps < 1) throw ValidationError("substeps must be >= 1", "simulate.substeps");
  const auto s = kernel_scheme(kernel, grid, substeps, L);
  return s.k * s.width.asDiagonal() * s.k.transpose();
}

Eigen::MatrixXd direct_scheme_covariance(const CounterexampleSpec& spec, const Grid& grid,
                                         int substeps) {
  spec.validate();
  if (substeps < 1) throw ValidationError("substeps must be >= 1", "simulate.substeps");
  const auto mesh = counterexample_mesh(spec, grid, substeps);
  const std::size_t cells = mesh.nodes.size() - 1;
  const auto n = static_cast<Eigen::Index>(grid.size());
  // The scheme is linear in the increments: probe it with unit increments.
  Eigen::MatrixXd c(n, static_cast<Eigen::Index>(cells));
  std::vector<double> b(mesh.nodes.size()), x(grid.size());
  for (std::size_t cell = 0; cell < cells; ++cell) {
    for (std::size_t k = 0; k < b.size(); ++k) b[k] = k > cell ? 1.0 : 0.0;
    counterexample_values(spec, grid, mesh, b, x);
    for (Eigen::Index i = 0; i < n; ++i) c(i, static_cast<Eigen::Index>(cell)) = x[i];
  }
  Eigen::VectorXd w(static_cast<Eigen::Index>(cells));
  for (std::size_t k = 0; k < cells; ++k) w(static_cast<Eigen::Index>(k)) = mesh.nodes[k + 1] - mesh.nodes[k];
  return c * w.asDiagonal() * c.transpose();
}

Eigen::MatrixXd direct_allowance(const MovingAverageKernel& kernel, const Grid& grid,
                                 int substeps, double L) {
  return tail_allowance(direct_scheme_covariance(kernel, grid, substeps, L),
                        direct_scheme_covariance(kernel, grid, 2 * substeps, L),
                        direct_scheme_covariance(kernel, grid, 4 * substeps, L));
}

Eigen::MatrixXd direct_allowance(const CounterexampleSpec& spec, const Grid& grid, int substeps) {
  return tail_allowance(direct_scheme_covariance(spec, grid, substeps),
                        direct_scheme_covariance(spec, grid, 2 * substeps),
                        direct_scheme_covariance(spec, grid, 4 * substeps));
}

}  // namespace bmavg
