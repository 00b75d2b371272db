#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace bmavg {

/// Left-Riemann Volterra sum on a partition t_0 < ... < t_N:
///   out_i = sum_{k < i} kern(t_k - t_i) g_k (t_{k+1} - t_k),
/// so out_0 = 0 and the operator is strictly lower triangular.
Eigen::VectorXd volterra_left_riemann(std::span<const double> times,
                                      const std::function<double(double)>& kern,
                                      const Eigen::VectorXd& g);

/// The discrete convolution on the uniform grid t_i = i delta, i = 0..N, with h
/// sampled by lag (h[m] = h(-m delta), m = 0..N) and g sampled at t_k:
///   (h * g)_i = sum_{k < i} h[i - k] g_k delta.
/// Throws ValidationError when h and g differ in length.
Eigen::VectorXd conv_apply(const Eigen::VectorXd& h, const Eigen::VectorXd& g, double delta);

/// The (N+1) x N matrix of conv_apply acting on (g_0, ..., g_{N-1}); g_N never contributes.
Eigen::MatrixXd conv_matrix(const Eigen::VectorXd& h, double delta);

/// Largest eps such that |samples| <= tol on [0, eps], at grid resolution:
/// m * delta for m leading small samples (capped at the interval length
/// (size - 1) * delta). Samples are ordered by distance from 0, so this covers
/// both h by lag on [-T, 0] and g on [0, T]. Default tol = 1e-12 * max |samples|.
double edge_of_support(std::span<const double> samples, double delta,
                       std::optional<double> tol = std::nullopt);

struct DeconvResult {
  /// Solution on t_0..t_N; g_N (which the operator ignores) repeats g_{N-1}.
  Eigen::VectorXd g;
  Eigen::VectorXd residual;
  /// max |h * g - phi| over the grid.
  double sup_error = 0.0;
  /// sqrt(delta * sum (h * g - phi)^2).
  double l2_error = 0.0;
  double lambda = 0.0;
  double delta = 0.0;
  double edge_h = 0.0;
  /// Off-grid sup error from continuous_sup_error, when computed.
  std::optional<double> continuous_sup_error;
};

/// g minimizing |h * g - phi|^2 + lambda |g|^2 over (g_0..g_{N-1}).
/// lambda = 0: forward substitution, SingularSystemError when h(-delta) = 0.
/// lambda > 0: least squares on [A; sqrt(lambda) I] by Householder QR.
/// Throws ValidationError when phi(0) != 0 or h vanishes identically.
DeconvResult deconv_solve(const Eigen::VectorXd& h, const Eigen::VectorXd& phi, double delta,
                          double lambda);

/// max over a mesh with `per_cell` points per grid cell of |(h * G)(t) - phi(t)|,
/// where G is the step function equal to g_k on [t_k, t_{k+1}) and the
/// convolution is integrated with the exact kernel h (Gauss-Legendre per cell piece).
double continuous_sup_error(const std::function<double(double)>& h,
                            const std::function<double(double)>& phi, const Eigen::VectorXd& g,
                            double delta, int per_cell = 8);

struct LadderEntry {
  double lambda = 0.0;
  /// "ok" or "singular".
  std::string status;
  std::optional<DeconvResult> result;
};

struct LadderResult {
  std::vector<LadderEntry> entries;
  /// Index of the entry with the smallest sup error.
  std::size_t best = 0;
};

/// The default regularization ladder 1e-2, 1e-3, ..., 1e-10, 0.
std::vector<double> default_lambda_ladder();

/// Solves for every lambda (in parallel); singular unregularized solves are recorded, not thrown.
LadderResult deconv_ladder(const Eigen::VectorXd& h, const Eigen::VectorXd& phi, double delta,
                           std::span<const double> lambdas);

std::string to_json(const DeconvResult& result);
std::string to_json(const LadderResult& ladder);

}  // namespace bmavg
