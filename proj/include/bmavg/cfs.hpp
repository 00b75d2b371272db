#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bmavg/covariance.hpp"
#include "bmavg/gaussian.hpp"
#include "bmavg/grid.hpp"
#include "bmavg/kernels.hpp"

namespace bmavg {

/// Covariance of Y = (X_{t_0}, D_1, ..., D_N) with D_n = X_{t_n} - X_{t_{n-1}}.
Eigen::MatrixXd increment_gram(const GramMatrix& gram);

struct IncrementVariances {
  /// v_n = Var(D_n | X_{t_0}, ..., X_{t_{n-1}}) for n = 1..N (stored at n - 1).
  Eigen::VectorXd values;
  /// Absolute threshold tau_cfs actually applied.
  double threshold = 0.0;
  bool verdict = false;
};

/// Sequential Schur complements of the increment Gram (an LDL^T sweep in time
/// order). Directions already spanned by the past (pivot <= tau_rel * max
/// diagonal) are skipped, which is the pseudo-inverse of a degenerate past block.
/// Values in [-slack, 0) are clamped to 0. The verdict is "all v_n > tau_rel *
/// max diagonal of the increment Gram".
IncrementVariances increment_conditional_variances(const GramMatrix& gram,
                                                   double tau_rel = 1e-10);

/// Trapezoid weights of int_{t_0}^{t_N} x(t) dt on the grid.
Eigen::VectorXd trapezoid_weights(const Grid& grid);

struct Functional {
  std::string label;
  Eigen::VectorXd weights;
  /// w^T Sigma w.
  double variance = 0.0;
};

struct ScanOptions {
  /// Number of smallest-eigenvalue eigenvectors examined.
  int k_smallest = 3;
  /// Report threshold relative to the max diagonal of Sigma.
  double tau_degen_rel = 1e-6;
  /// Eigenvectors are only computed up to this dimension.
  std::size_t eigen_max_dim = 1024;
};

/// Trapezoid functional (always reported, label "trapezoid"), then eigenvectors
/// of the k smallest eigenvalues ("eigen_k") and caller weights ("extra_k")
/// whose variance lies below the threshold.
std::vector<Functional> degenerate_functional_scan(const GramMatrix& gram,
                                                   std::span<const Eigen::VectorXd> extra = {},
                                                   const ScanOptions& options = {});

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// 95% Wilson score interval for `hits` successes out of n.
Interval wilson_interval(std::size_t hits, std::size_t n);

struct TubeEstimate {
  double epsilon = 0.0;
  std::size_t hits = 0;
  std::size_t n_paths = 0;
  double estimate = 0.0;
  Interval ci;
};

/// Monte Carlo estimates of P(max_n |X_{t_n} - psi_n| < eps) for every eps in
/// `epsilons`, all from the same sample paths (so estimates are monotone in eps).
std::vector<TubeEstimate> tube_probabilities(const GaussianVector& gv, const Eigen::VectorXd& psi,
                                             std::span<const double> epsilons,
                                             std::size_t n_paths, std::uint64_t seed);

TubeEstimate tube_probability(const GaussianVector& gv, const Eigen::VectorXd& psi,
                              double epsilon, std::size_t n_paths, std::uint64_t seed);

/// Brownian increments on the cells [edges[j], edges[j+1]] of a partition of [-L, 0].
struct PastIncrements {
  std::vector<double> edges;
  std::vector<double> increments;

  void validate() const;
  /// Standard Brownian increments from the normal stream (seed, stream).
  static PastIncrements sample(std::vector<double> edges, std::uint64_t seed,
                               std::uint64_t stream = 0);
};

/// phi(u) = sum_j (f(v_j - u) - f(v_j)) dB_j with v_j the left end of cell j:
/// the conditional mean of X_u given the Brownian past.
Eigen::VectorXd history_drift(const MovingAverageKernel& kernel, const PastIncrements& past,
                              const Grid& grid);

/// u -> int_0^u f(v - u) g(v) dv as a left-Riemann sum on the grid (grid must start at 0).
Eigen::VectorXd reachable_shift(const MovingAverageKernel& kernel, const Eigen::VectorXd& g,
                                const Grid& grid);

struct CfsReport {
  std::string source;
  Grid grid;
  IncrementVariances cond;
  double min_cond_variance = 0.0;
  /// 1-based increment index of the minimum.
  std::size_t min_index = 0;
  Eigen::Index rank = 0;
  /// Rank of the increment Gram from the pivoted factorization.
  Eigen::Index increment_rank = 0;
  double min_eigenvalue = 0.0;
  std::vector<Functional> degenerate;
  struct Tube {
    std::string target;
    TubeEstimate estimate;
  };
  std::vector<Tube> tubes;

  /// Always true: a positive grid verdict is not evidence of continuous-time
  /// conditional full support.
  static constexpr bool continuity_caveat = true;
  static constexpr const char* continuity_caveat_text =
      "grid verdict concerns finitely many times only; positive conditional increment "
      "variances on every grid do not imply conditional full support in continuous time";
};

struct CfsOptions {
  double tau_cfs_rel = 1e-10;
  ScanOptions scan;
};

/// Conditional variances, ranks and the degenerate-functional scan of a Gram.
CfsReport check_cfs(const GramMatrix& gram, std::span<const Eigen::VectorXd> extra_weights = {},
                    const CfsOptions& options = {});

/// JSON text of the report (12 significant digits, format_version, no timestamps).
std::string to_json(const CfsReport& report);

}  // namespace bmavg
