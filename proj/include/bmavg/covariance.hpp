#pragma once

#include <cstddef>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "bmavg/grid.hpp"
#include "bmavg/kernels.hpp"

namespace bmavg {

enum class GramMode {
  /// Cov of X itself: integrand f(s - t) - f(s) over [-L, min(t_i, t_j)].
  full,
  /// Cov of int_0^u f(v - u) dB_v: the law of X given the Brownian past, up to a shift.
  fresh,
};

std::string to_string(GramMode mode);
GramMode parse_gram_mode(const std::string& name);

/// Covariance of a Gaussian process on a time grid, with the numerical
/// metadata needed to judge it.
struct GramMatrix {
  GramMatrix(Grid grid, Eigen::MatrixXd sigma);

  Grid grid;
  Eigen::MatrixXd sigma;
  std::string source = "external";
  std::string mode = "external";
  double quad_step = 0.0;
  double L = 0.0;
  /// Bound on the omitted variance below -L (after normalization).
  double tail_error = 0.0;
  /// Max entry change observed in the last step-halving.
  double quad_error = 0.0;
  double convergence_tol = 0.0;
  std::string convergence_check = "none";
  /// Factor divided out when normalized to Var(X_1) = 1.
  double normalization = 1.0;
  /// "eigen" when eigenvalues were computed, "structural" for A A^T assembly
  /// above the eigen size limit.
  std::string psd_check = "eigen";
  bool psd_repaired = false;
  double min_eigenvalue = std::numeric_limits<double>::quiet_NaN();

  Eigen::Index dim() const noexcept { return sigma.rows(); }
  double max_diagonal() const noexcept;
};

struct GramOptions {
  /// Past truncation depth; default from default_truncation().
  std::optional<double> L;
  /// Max panel width inside the working window; default min grid spacing / 4.
  std::optional<double> quad_step;
  GramMode mode = GramMode::full;
  bool normalize_to_unit_variance = false;
  /// Halving must change entries by at most this times the largest variance.
  double convergence_tol = 1e-8;
  int max_refinements = 4;
  double tau_psd = 1e-8;
  /// Reject when tail_error exceeds this times the largest variance.
  double max_tail_error = 1e-3;
  int order = 8;
  int grading_levels = 40;
  /// Dense eigen checks (PSD, full-matrix convergence) up to this dimension.
  std::size_t eigen_max_dim = 1024;
};

/// Smallest L >= max(100 T, hint) whose FBM tail bound is below 1e-10 T^(2H)
/// (capped at 1e15 max(T, 1)); max(100 T, hint) for compactly supported kernels.
double default_truncation(const MovingAverageKernel& kernel, const Grid& grid);

GramMatrix gram(const MovingAverageKernel& kernel, const Grid& grid,
                const GramOptions& options = {});

/// 1/2 (t^2H + u^2H - |t - u|^2H).
double fbm_cov_closed(double t, double u, double hurst);

GramMatrix counterexample_gram(const CounterexampleSpec& spec, const Grid& grid,
                          std::optional<double> quad_step = std::nullopt,
                          const GramOptions& options = {});

/// Wraps an explicit covariance matrix: checks symmetry (1e-12 relative), symmetrizes,
/// and runs the PSD check. Without a grid, times 0, 1, ..., n-1 are used.
GramMatrix make_gram(Eigen::MatrixXd sigma, std::optional<Grid> grid = std::nullopt,
                     double tau_psd = 1e-8, std::size_t eigen_max_dim = 1024);

/// Writes <stem>.csv (dense) and <stem>.json (metadata sidecar).
void write_gram(const GramMatrix& gram, const std::filesystem::path& stem);
GramMatrix read_gram(const std::filesystem::path& stem);

}  // namespace bmavg
