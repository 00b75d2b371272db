#pragma once

#include <span>
#include <vector>

namespace bmavg {

/// Nodes and positive weights of a composite rule on a union of intervals.
/// Each node is also stored as anchor + offset with the offset exact, so that
/// nodes graded toward a singular point keep their distance to it in full precision.
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
  std::vector<double> anchors;
  std::vector<double> offsets;

  std::size_t size() const noexcept { return nodes.size(); }
  template <class F>
  double integrate(F&& f) const {
    double acc = 0.0;
    for (std::size_t q = 0; q < nodes.size(); ++q) acc += weights[q] * f(nodes[q]);
    return acc;
  }
};

/// Gauss-Legendre nodes and weights on [-1, 1], cached per order.
const QuadratureRule& gauss_legendre(int order);

/// Appends an order-`order` Gauss-Legendre panel on [anchor + lo, anchor + hi].
void append_gauss_panel(QuadratureRule& rule, double lo, double hi, int order,
                        double anchor = 0.0);

struct PanelLayout {
  /// Panel width inside the window.
  double max_width = 1.0;
  /// Outside [window_lo, window_hi] widths grow like growth * distance to the window.
  double window_lo = 0.0;
  double window_hi = 0.0;
  double growth = 0.25;
  int order = 8;
  /// Geometric halvings of panels adjacent to singular breakpoints.
  int grading_levels = 40;
  /// The innermost graded panel [0, e] is mapped from u in [0, 1] by x = e u^m,
  /// which absorbs endpoint singularities of order x^(1/m - 1).
  int innermost_power = 1;
};

/// Composite Gauss-Legendre rule over [breakpoints.front(), breakpoints.back()].
/// Breakpoints must be sorted; each segment between consecutive breakpoints is
/// covered by panels, and panels touching a point listed in `singular_points`
/// (sorted) are refined geometrically toward it. Nodes come out in increasing order.
QuadratureRule composite_rule(std::span<const double> breakpoints,
                              std::span<const double> singular_points,
                              const PanelLayout& layout);

/// Panel edges for the same layout without Gauss nodes: a partition of
/// [breakpoints.front(), breakpoints.back()] used by Riemann-sum schemes.
std::vector<double> panel_edges(std::span<const double> breakpoints,
                                std::span<const double> singular_points,
                                const PanelLayout& layout);

/// Sorted, deduplicated copy of `points` restricted to [lo, hi], with lo and hi included.
std::vector<double> clip_breakpoints(std::vector<double> points, double lo, double hi);

}  // namespace bmavg
