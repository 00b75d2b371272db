#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bmavg/covariance.hpp"
#include "bmavg/grid.hpp"
#include "bmavg/kernels.hpp"

namespace bmavg {

/// Pivoted Cholesky of a PSD matrix: sigma ~= factor * factor^T, with
/// factor (n x rank) stored in the original row order. Rows permuted by
/// `pivots` make it lower triangular.
struct PsdFactor {
  Eigen::MatrixXd factor;
  std::vector<Eigen::Index> pivots;
  Eigen::Index rank = 0;
  double largest_pivot = 0.0;
  /// max |sigma - factor factor^T|.
  double residual = 0.0;

  /// The factor with rows in pivot order (lower triangular).
  Eigen::MatrixXd lower() const;
};

/// Rank counts pivots above tau_rank * largest pivot. Throws NumericalError
/// when a pivot falls below -tau_psd * ||sigma||.
PsdFactor factor_psd(const Eigen::MatrixXd& sigma, double tau_rank = 1e-10,
                     double tau_psd = 1e-8);

struct GaussianVector {
  GaussianVector(Eigen::VectorXd mean, GramMatrix gram);
  /// Zero-mean vector with the given covariance.
  explicit GaussianVector(GramMatrix gram);

  Eigen::VectorXd mean;
  GramMatrix gram;
};

/// Law of the unobserved coordinates given observed = values (Schur complement,
/// pseudo-inverse on the observed block with relative cutoff pinv_tol).
/// Throws ValidationError when values leave the observed block's affine support
/// by more than support_tol.
GaussianVector condition(const GaussianVector& gv, std::span<const Eigen::Index> observed,
                         const Eigen::VectorXd& values, double pinv_tol = 1e-10,
                         double support_tol = 1e-6);

struct PathEnsemble {
  Grid grid;
  /// One row per path.
  Eigen::MatrixXd paths;
  std::uint64_t seed = 0;
  std::string method;  // "cholesky" or "direct"
  int substeps = 0;
  double L = 0.0;
  std::string source;
};

/// n_paths draws mean + F z. Path p uses the normal stream (seed, p), so the
/// ensemble does not depend on the thread count.
PathEnsemble sample(const GaussianVector& gv, std::size_t n_paths, std::uint64_t seed);

struct DirectOptions {
  int substeps = 16;
  /// Past truncation; default default_truncation(kernel, grid).
  std::optional<double> L;
};

/// Riemann sum of the stochastic integral over Brownian increments on a refined
/// mesh of [-L, T]; kernel evaluated at cell midpoints.
PathEnsemble direct_simulate(const MovingAverageKernel& kernel, const Grid& grid,
                             std::size_t n_paths, std::uint64_t seed,
                             const DirectOptions& options = {});

/// Simulates a Brownian path on a refined mesh of [0, 1] and evaluates the
/// defining formula of X^n term by term (interval increment plus the time
/// integral of the stopped path times the ramp).
PathEnsemble direct_simulate(const CounterexampleSpec& spec, const Grid& grid, std::size_t n_paths,
                             std::uint64_t seed, int substeps = 16);

/// Exact covariance of the discrete direct scheme (no Monte Carlo).
Eigen::MatrixXd direct_scheme_covariance(const MovingAverageKernel& kernel, const Grid& grid,
                                         int substeps, double L);
Eigen::MatrixXd direct_scheme_covariance(const CounterexampleSpec& spec, const Grid& grid,
                                         int substeps);

/// Entrywise discretization allowance of the direct scheme:
/// 2 |Sigma(s) - Sigma(2s)| / (1 - r), where r <= 0.9 is the observed contraction
/// of successive differences over the levels s, 2s and 4s.
Eigen::MatrixXd direct_allowance(const MovingAverageKernel& kernel, const Grid& grid,
                                 int substeps, double L);
Eigen::MatrixXd direct_allowance(const CounterexampleSpec& spec, const Grid& grid, int substeps);

struct CovarianceEstimate {
  Eigen::MatrixXd cov;
  /// Standard error of each entry, from the sample variance of centered products.
  Eigen::MatrixXd std_error;
};

CovarianceEstimate empirical_covariance(const PathEnsemble& ensemble);

/// <stem>.csv (one row per path) and <stem>.json (seed, method, grid).
void write_ensemble(const PathEnsemble& ensemble, const std::filesystem::path& stem);

}  // namespace bmavg
