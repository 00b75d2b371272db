#include "bmavg/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "bmavg/errors.hpp"
#include "bmavg/io.hpp"
#include "bmavg/quadrature.hpp"

namespace bmavg {
namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw ValidationError(std::string(what) + " must be finite", what);
}

double interpolate(const TabulatedFamily& tab, double x) {
  if (x < tab.xs.front() || x > tab.xs.back()) return 0.0;
  const auto it = std::upper_bound(tab.xs.begin(), tab.xs.end(), x);
  if (it == tab.xs.end()) return tab.values.back();
  const auto j = static_cast<std::size_t>(it - tab.xs.begin());
  const double x0 = tab.xs[j - 1], x1 = tab.xs[j];
  const double w = (x - x0) / (x1 - x0);
  return (1.0 - w) * tab.values[j - 1] + w * tab.values[j];
}

// Length of [lo, hi) intersected with (-inf, cut).
double below(double lo, double hi, double cut) { return std::max(0.0, std::min(hi, cut) - lo); }

}  // namespace

MovingAverageKernel::MovingAverageKernel(KernelFamily family, double scale, double hint)
    : family_(std::move(family)), scale_(scale), truncation_hint_(hint) {
  if (!(scale_ > 0.0) || !std::isfinite(scale_))
    throw ValidationError("kernel scale must be positive and finite", "process.scale");
  if (!(truncation_hint_ > 0.0))
    throw ValidationError("truncation hint must be positive", "process.truncation_hint");
}

MovingAverageKernel MovingAverageKernel::fbm(double hurst, double scale) {
  if (!(hurst > 0.0 && hurst < 1.0))
    throw ValidationError("Hurst index H must lie in (0, 1), got " + io::format_number(hurst),
                          "process.H");
  return MovingAverageKernel(FbmFamily{hurst}, scale, 100.0);
}

MovingAverageKernel MovingAverageKernel::indicator(double width, double scale) {
  if (!(width > 0.0) || !std::isfinite(width))
    throw ValidationError("indicator width c must be positive and finite", "process.c");
  return MovingAverageKernel(IndicatorFamily{width}, scale, width);
}

MovingAverageKernel MovingAverageKernel::tabulated(std::vector<double> xs,
                                                   std::vector<double> values, double scale) {
  if (xs.size() != values.size())
    throw ValidationError("tabulated kernel needs equal-length xs and values", "process.table");
  if (xs.size() < 2)
    throw ValidationError("tabulated kernel needs at least two points", "process.table");
  bool nonzero = false;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    require_finite(xs[i], "process.table");
    require_finite(values[i], "process.table");
    if (xs[i] > 0.0) throw ValidationError("tabulated xs must all be <= 0", "process.table");
    if (i > 0 && !(xs[i] > xs[i - 1]))
      throw ValidationError("tabulated xs must be strictly increasing", "process.table");
    nonzero = nonzero || values[i] != 0.0;
  }
  if (!nonzero)
    throw ValidationError("kernel vanishes identically (needs |f| > 0 somewhere)",
                          "process.table");
  const double depth = -xs.front();
  return MovingAverageKernel(TabulatedFamily{std::move(xs), std::move(values)}, scale,
                             depth > 0.0 ? depth : 1.0);
}

MovingAverageKernel MovingAverageKernel::load_csv(const std::filesystem::path& path,
                                                  double scale) {
  const auto rows = io::read_csv(path);
  std::vector<double> xs, vals;
  for (const auto& r : rows) {
    if (r.size() != 2)
      throw ValidationError(path.string() + ": kernel CSV needs two columns (x, f)",
                            "process.table");
    xs.push_back(r[0]);
    vals.push_back(r[1]);
  }
  return tabulated(std::move(xs), std::move(vals), scale);
}

MovingAverageKernel MovingAverageKernel::with_truncation_hint(double depth) const {
  return MovingAverageKernel(family_, scale_, depth);
}

double MovingAverageKernel::operator()(double x) const {
  if (!std::isfinite(x)) throw ValidationError("kernel argument must be finite");
  if (x >= 0.0) return 0.0;
  return scale_ * std::visit(overloaded{
                                 [&](const FbmFamily& f) { return std::pow(-x, f.hurst - 0.5); },
                                 [&](const IndicatorFamily& f) { return x >= -f.width ? 1.0 : 0.0; },
                                 [&](const TabulatedFamily& f) { return interpolate(f, x); },
                             },
                             family_);
}

double MovingAverageKernel::increment(double t, double s) const { return increment(t, s, 0.0); }

double MovingAverageKernel::increment(double t, double anchor, double offset) const {
  if (!std::isfinite(t) || !std::isfinite(anchor) || !std::isfinite(offset))
    throw ValidationError("increment kernel arguments must be finite");
  const double lag = (anchor - t) + offset;
  if (lag > 0.0) return 0.0;
  const double s = anchor + offset;
  if (const auto* fbm = std::get_if<FbmFamily>(&family_); fbm && s < 0.0 && t > 0.0) {
    // (x + t)^p - x^p without cancellation for x = -s >> t.
    const double p = fbm->hurst - 0.5;
    const double x = -s;
    return scale_ * std::pow(x, p) * std::expm1(p * std::log1p(t / x));
  }
  return (*this)(lag) - (*this)(s);
}

std::vector<double> MovingAverageKernel::breakpoints() const {
  return std::visit(overloaded{
                        [](const FbmFamily&) { return std::vector<double>{0.0}; },
                        [](const IndicatorFamily& f) { return std::vector<double>{-f.width, 0.0}; },
                        [](const TabulatedFamily& f) {
                          auto v = f.xs;
                          v.push_back(0.0);
                          std::sort(v.begin(), v.end());
                          v.erase(std::unique(v.begin(), v.end()), v.end());
                          return v;
                        },
                    },
                    family_);
}

bool MovingAverageKernel::has_power_singularity() const noexcept {
  const auto* fbm = std::get_if<FbmFamily>(&family_);
  return fbm && fbm->hurst != 0.5;
}

double MovingAverageKernel::support_depth() const noexcept {
  return std::visit(overloaded{
                        [](const FbmFamily&) { return std::numeric_limits<double>::infinity(); },
                        [](const IndicatorFamily& f) { return f.width; },
                        [](const TabulatedFamily& f) { return -f.xs.front(); },
                    },
                    family_);
}

double MovingAverageKernel::support_edge() const {
  const auto* tab = std::get_if<TabulatedFamily>(&family_);
  if (!tab) return 0.0;
  std::size_t j = tab->values.size();
  while (j > 0 && tab->values[j - 1] == 0.0) --j;
  if (j == tab->values.size()) return std::min(0.0, tab->xs.back());
  return tab->xs[j];
}

MovingAverageKernel MovingAverageKernel::shifted_to_edge() const {
  const double a = support_edge();
  if (a == 0.0) return *this;
  const auto& tab = std::get<TabulatedFamily>(family_);
  std::vector<double> xs, vals;
  for (std::size_t i = 0; i < tab.xs.size(); ++i) {
    const double x = tab.xs[i] - a;
    if (x > 0.0) break;
    xs.push_back(x);
    vals.push_back(tab.values[i]);
  }
  if (xs.back() < 0.0) {
    xs.push_back(0.0);
    vals.push_back(0.0);
  }
  return tabulated(std::move(xs), std::move(vals), scale_).with_truncation_hint(truncation_hint_);
}

bool MovingAverageKernel::is_semimartingale() const noexcept {
  // Indicator and tabulated kernels jump or are cut off, so f is not absolutely continuous
  // unless a table happens to start and end at 0; only BM is flagged.
  const auto* fbm = std::get_if<FbmFamily>(&family_);
  return fbm && fbm->hurst == 0.5;
}

std::string MovingAverageKernel::describe() const {
  std::ostringstream os;
  std::visit(overloaded{
                 [&](const FbmFamily& f) { os << "fbm(H=" << io::format_number(f.hurst) << ")"; },
                 [&](const IndicatorFamily& f) {
                   os << "indicator(c=" << io::format_number(f.width) << ")";
                 },
                 [&](const TabulatedFamily& f) { os << "tabulated(" << f.xs.size() << " points)"; },
             },
             family_);
  if (scale_ != 1.0) os << "*" << io::format_number(scale_);
  return os.str();
}

double eval_f(const MovingAverageKernel& kernel, double x) { return kernel(x); }

double increment_kernel(const MovingAverageKernel& kernel, double t, double s) {
  if (!(t >= 0.0)) throw ValidationError("increment kernel needs t >= 0");
  return kernel.increment(t, s);
}

double tail_bound(const MovingAverageKernel& kernel, double t, double L) {
  if (!(L > 0.0)) throw ValidationError("truncation depth L must be positive", "numerics.L");
  if (!(t >= 0.0)) throw ValidationError("tail bound needs t >= 0");
  const double s2 = kernel.scale() * kernel.scale();
  return std::visit(
      overloaded{
          [&](const FbmFamily& f) {
            // |(x+t)^p - x^p| <= |p| t x^(p-1) for x >= L, integrated in closed form.
            const double p = f.hurst - 0.5;
            if (p == 0.0 || t == 0.0) return 0.0;
            return s2 * p * p * t * t * std::pow(L, 2.0 * f.hurst - 2.0) / (2.0 - 2.0 * f.hurst);
          },
          [&](const IndicatorFamily& f) {
            // Squared difference of indicators of [t-c, t) and [-c, 0), below -L.
            const double c = f.width;
            const double overlap_lo = std::max(t - c, -c), overlap_hi = std::min(t, 0.0);
            const double overlap =
                overlap_hi > overlap_lo ? below(overlap_lo, overlap_hi, -L) : 0.0;
            return s2 * (below(t - c, t, -L) + below(-c, 0.0, -L) - 2.0 * overlap);
          },
          [&](const TabulatedFamily& f) {
            // Doubling sweep over [-2^(m+1) L, -2^m L] until past the support, where the
            // integrand vanishes identically.
            double total = 0.0;
            double hi = -L;
            const double lo_support = f.xs.front();
            while (hi > lo_support) {
              const double lo = 2.0 * hi;
              std::vector<double> pts;
              for (double x : f.xs) {
                pts.push_back(x);
                pts.push_back(x + t);
              }
              const auto bps = clip_breakpoints(pts, lo, hi);
              PanelLayout layout;
              layout.max_width = hi - lo;
              layout.window_lo = lo;
              layout.window_hi = hi;
              layout.order = 4;
              const auto rule = composite_rule(bps, {}, layout);
              total += rule.integrate([&](double s) {
                const double k = kernel.increment(t, s);
                return k * k;
              });
              hi = lo;
            }
            return total;
          },
      },
      kernel.family());
}

TwoSidedKernel::TwoSidedKernel(MovingAverageKernel kernel, double L, const Grid& grid)
    : kernel_(std::move(kernel)), L_(L), tail_error_bound_(0.0) {
  if (!(L > 0.0)) throw ValidationError("truncation depth L must be positive", "numerics.L");
  for (double t : grid.times()) tail_error_bound_ = std::max(tail_error_bound_, tail_bound(kernel_, t, L));
}

double TwoSidedKernel::fresh(double t, double s) const {
  return (s >= 0.0 && s <= t) ? kernel_(s - t) : 0.0;
}

double TwoSidedKernel::history(double t, double s) const {
  return (s >= -L_ && s <= 0.0) ? kernel_.increment(t, s) : 0.0;
}

void CounterexampleSpec::validate() const {
  if (n_max < 1 || n_max > 50)
    throw ValidationError("n_max must be in [1, 50]", "process.n_max");
  if (!(b0 > 0.0) || !std::isfinite(b0))
    throw ValidationError("b0 must be positive", "process.b0");
  if (!(b_ratio > 0.0 && b_ratio < 1.0))
    throw ValidationError("b_ratio must lie in (0, 1) so that b_n decreases to 0",
                          "process.b_ratio");
}

double CounterexampleSpec::a(int n) const { return 1.0 - std::ldexp(1.0, -n); }

double CounterexampleSpec::b(int n) const { return b0 * std::pow(b_ratio, n); }

double counterexample_kernel(const CounterexampleSpec& spec, int n, double t, double v) {
  if (n < 0 || n >= spec.n_max)
    throw ValidationError("component index n must be in [0, n_max)", "n");
  const double lo = spec.a(n), hi = spec.a(n + 1);
  if (v < lo || v > hi || v > t) return 0.0;
  const double ramp = std::max(t - hi, 0.0);
  return spec.b(n) * (1.0 - spec.sign() * std::ldexp(1.0, 2 * n + 3) * ramp * (1.0 - v));
}

double counterexample_bracket(int n, bool corrected_sign) {
  if (n < 0 || n > 50) throw ValidationError("bracket index out of range", "n");
  const double a_next = 1.0 - std::ldexp(1.0, -(n + 1));
  const double integral = (1.0 - a_next) * (1.0 - a_next) / 2.0;
  const double coefficient = std::ldexp(1.0, 2 * n + 3) * integral;
  return corrected_sign ? 1.0 - coefficient : 1.0 + coefficient;
}

}  // namespace bmavg
