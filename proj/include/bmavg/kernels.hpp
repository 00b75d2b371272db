#pragma once

#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "bmavg/grid.hpp"

namespace bmavg {

/// f(x) = (-x)^(H - 1/2) for x < 0 (Mandelbrot-Van Ness, unit constant).
struct FbmFamily {
  double hurst;
};

/// f(x) = 1 on [-width, 0), 0 elsewhere.
struct IndicatorFamily {
  double width;
};

/// Linear interpolation through (xs, values); 0 outside [xs.front(), xs.back()].
struct TabulatedFamily {
  std::vector<double> xs;
  std::vector<double> values;
};

using KernelFamily = std::variant<FbmFamily, IndicatorFamily, TabulatedFamily>;

/// The function f of a Brownian moving average
///
///   X_t = int_{-inf}^t (f(s - t) - f(s)) dB_s,
///
/// with f = 0 on [0, inf). Immutable after construction.
class MovingAverageKernel {
 public:
  static MovingAverageKernel fbm(double hurst, double scale = 1.0);
  static MovingAverageKernel indicator(double width, double scale = 1.0);
  static MovingAverageKernel tabulated(std::vector<double> xs, std::vector<double> values,
                                       double scale = 1.0);
  /// Two-column CSV (x, f(x)); a non-numeric first row is treated as a header.
  static MovingAverageKernel load_csv(const std::filesystem::path& path, double scale = 1.0);

  const KernelFamily& family() const noexcept { return family_; }
  double scale() const noexcept { return scale_; }
  double truncation_hint() const noexcept { return truncation_hint_; }
  MovingAverageKernel with_truncation_hint(double depth) const;

  /// f(x); exactly 0 for x >= 0.
  double operator()(double x) const;

  /// f(s - t) - f(s); 0 for s > t.
  double increment(double t, double s) const;
  /// The same with s = anchor + offset, where s - t is formed as (anchor - t) + offset
  /// so that s very close to an anchor at t keeps its distance to t.
  double increment(double t, double anchor, double offset) const;

  /// Points in (-inf, 0] where f is discontinuous or has a kink.
  std::vector<double> breakpoints() const;

  /// True when f has a power-law endpoint singularity or cusp at 0 (FBM, H != 1/2).
  bool has_power_singularity() const noexcept;

  /// Depth of the support of f: f = 0 on (-inf, -support_depth()). Infinity for FBM.
  double support_depth() const noexcept;

  /// Largest a <= 0 such that f vanishes on [a, 0] (grid-level for tabulated data).
  double support_edge() const;

  /// f~(x) = f(x + a) with a = support_edge(), so f~ is nonzero arbitrarily close to 0.
  MovingAverageKernel shifted_to_edge() const;

  /// Known semimartingale cases: f absolutely continuous with square-integrable
  /// derivative on (-inf, 0]. For FBM only H = 1/2 qualifies.
  bool is_semimartingale() const noexcept;

  std::string describe() const;

 private:
  MovingAverageKernel(KernelFamily family, double scale, double hint);

  KernelFamily family_;
  double scale_;
  double truncation_hint_;
};

double eval_f(const MovingAverageKernel& kernel, double x);
double increment_kernel(const MovingAverageKernel& kernel, double t, double s);

/// Upper estimate of int_{-inf}^{-L} (f(s - t) - f(s))^2 ds.
double tail_bound(const MovingAverageKernel& kernel, double t, double L);

/// The fresh/history split of the integrand at the present time 0:
///   X_u = int_0^u f(v - u) dB_v + int_{-L}^0 (f(v - u) - f(v)) dB_v + tail.
class TwoSidedKernel {
 public:
  TwoSidedKernel(MovingAverageKernel kernel, double L, const Grid& grid);

  /// f(s - t) for 0 <= s <= t, 0 otherwise.
  double fresh(double t, double s) const;
  /// f(s - t) - f(s) for -L <= s <= 0, 0 otherwise.
  double history(double t, double s) const;

  double L() const noexcept { return L_; }
  double tail_error_bound() const noexcept { return tail_error_bound_; }
  const MovingAverageKernel& kernel() const noexcept { return kernel_; }

 private:
  MovingAverageKernel kernel_;
  double L_;
  double tail_error_bound_;
};

/// The counterexample process X = sum_{n < n_max} X^n on [0, 1], with
/// a_n = 1 - 2^-n and b_n = b0 * b_ratio^n.
struct CounterexampleSpec {
  int n_max = 12;
  double b0 = 1.0;
  double b_ratio = 0.5;
  /// true: second term carries -b_n 2^(2n+3) so that int_0^1 X dt = 0.
  /// false: the "+" sign, for which the integral does not vanish.
  bool corrected_sign = true;

  void validate() const;
  double a(int n) const;
  double b(int n) const;
  /// +1 for the corrected sign, -1 for the plus sign.
  double sign() const noexcept { return corrected_sign ? 1.0 : -1.0; }
};

/// Volterra kernel of X^n: X^n_t = int_0^1 kappa_n(t, v) dB_v.
double counterexample_kernel(const CounterexampleSpec& spec, int n, double t, double v);

/// 1 -/+ 2^(2n+3) int_{a_{n+1}}^1 (s - a_{n+1}) ds, in closed form.
/// Exactly 0 for the corrected sign, 2 for the plus sign.
double counterexample_bracket(int n, bool corrected_sign);

}  // namespace bmavg
