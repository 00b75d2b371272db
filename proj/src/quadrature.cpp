#include "bmavg/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

#include "bmavg/errors.hpp"

namespace bmavg {
namespace {

QuadratureRule compute_gauss_legendre(int order) {
  QuadratureRule rule;
  rule.nodes.resize(order);
  rule.weights.resize(order);
  const int half = (order + 1) / 2;
  for (int i = 0; i < half; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (order + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= order; ++k) {
        const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = pk;
      }
      if (order == 1) p0 = 1.0;
      dp = order * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.nodes[i] = -x;
    rule.nodes[order - 1 - i] = x;
    rule.weights[i] = w;
    rule.weights[order - 1 - i] = w;
  }
  rule.anchors.assign(order, 0.0);
  rule.offsets = rule.nodes;
  return rule;
}

double width_at(double x, const PanelLayout& layout) {
  double dist = 0.0;
  if (x < layout.window_lo) dist = layout.window_lo - x;
  else if (x > layout.window_hi) dist = x - layout.window_hi;
  return std::max(layout.max_width, layout.growth * dist);
}

bool is_listed(std::span<const double> sorted, double x) {
  return std::binary_search(sorted.begin(), sorted.end(), x);
}

// Ungraded panel edges of one segment. A segment that fits in one panel but is
// singular at both ends is split in two so that each end gets its own grading.
std::vector<double> base_edges(double a, double b, bool grade_left, bool grade_right,
                               const PanelLayout& layout) {
  std::vector<double> e{a};
  double x = a;
  while (x < b) {
    const double w = std::min(width_at(x, layout), width_at(std::min(x + width_at(x, layout), b), layout));
    double next = x + w;
    // Avoid a sliver at the end of the segment.
    if (next >= b || b - next < 1e-3 * w) next = b;
    e.push_back(next);
    x = next;
  }
  // A short last panel is merged with its neighbour and the pair split evenly, so no
  // panel sits much closer to a singular end than its own width.
  const auto n = e.size();
  if (n >= 3 && (e[n - 1] - e[n - 2]) < 0.5 * (e[n - 2] - e[n - 3]))
    e[n - 2] = 0.5 * (e[n - 3] + e[n - 1]);
  if (e.size() == 2 && grade_left && grade_right) e.insert(e.begin() + 1, 0.5 * (a + b));
  return e;
}

// Offsets w 2^-levels, ..., w / 2, w of the graded panels next to a singular end.
std::vector<double> grading_offsets(double w, int levels) {
  std::vector<double> out;
  for (int j = levels; j >= 0; --j) out.push_back(std::ldexp(w, -j));
  return out;
}

// Panel edges of one segment, graded toward singular ends.
void segment_edges(double a, double b, bool grade_left, bool grade_right,
                   const PanelLayout& layout, std::vector<double>& edges) {
  const auto e = base_edges(a, b, grade_left, grade_right, layout);
  std::vector<double> out;
  out.reserve(e.size() + 2 * static_cast<std::size_t>(layout.grading_levels));
  for (std::size_t k = 0; k + 1 < e.size(); ++k) {
    const double lo = e[k];
    const double hi = e[k + 1];
    if (out.empty()) out.push_back(lo);
    if (k == 0 && grade_left) {
      const double w = hi - lo;
      for (int j = layout.grading_levels; j >= 1; --j) {
        const double p = lo + std::ldexp(w, -j);
        if (p > out.back()) out.push_back(p);
      }
    }
    if (k + 2 == e.size() && grade_right) {
      const double w = hi - lo;
      for (int j = 1; j <= layout.grading_levels; ++j) {
        const double p = hi - std::ldexp(w, -j);
        if (p > out.back() && p < hi) out.push_back(p);
      }
    }
    if (hi > out.back()) out.push_back(hi);
  }
  if (edges.empty()) {
    edges = std::move(out);
  } else {
    edges.insert(edges.end(), out.begin() + 1, out.end());
  }
}

// Innermost graded panel between the anchor and anchor + e (e may be negative),
// integrated in u with x = e u^m.
void append_innermost_panel(QuadratureRule& rule, double anchor, double e, int order, int m) {
  const auto& gl = gauss_legendre(order);
  const double width = std::abs(e);
  const auto first = rule.nodes.size();
  for (std::size_t i = 0; i < gl.nodes.size(); ++i) {
    const double u = 0.5 * (gl.nodes[i] + 1.0);
    const double offset = e * std::pow(u, m);
    rule.anchors.push_back(anchor);
    rule.offsets.push_back(offset);
    rule.nodes.push_back(anchor + offset);
    rule.weights.push_back(0.5 * gl.weights[i] * width * m * std::pow(u, m - 1));
  }
  // Keep nodes ascending when the panel lies to the left of its anchor.
  if (e < 0.0) {
    std::reverse(rule.anchors.begin() + static_cast<std::ptrdiff_t>(first), rule.anchors.end());
    std::reverse(rule.offsets.begin() + static_cast<std::ptrdiff_t>(first), rule.offsets.end());
    std::reverse(rule.nodes.begin() + static_cast<std::ptrdiff_t>(first), rule.nodes.end());
    std::reverse(rule.weights.begin() + static_cast<std::ptrdiff_t>(first), rule.weights.end());
  }
}

}  // namespace

const QuadratureRule& gauss_legendre(int order) {
  if (order < 1 || order > 64) throw ValidationError("Gauss-Legendre order must be in [1, 64]");
  static std::mutex mu;
  static std::map<int, QuadratureRule> cache;
  std::lock_guard lock(mu);
  auto it = cache.find(order);
  if (it == cache.end()) it = cache.emplace(order, compute_gauss_legendre(order)).first;
  return it->second;
}

void append_gauss_panel(QuadratureRule& rule, double lo, double hi, int order, double anchor) {
  const auto& gl = gauss_legendre(order);
  const double c = 0.5 * (lo + hi);
  const double h = 0.5 * (hi - lo);
  for (std::size_t i = 0; i < gl.nodes.size(); ++i) {
    const double offset = c + h * gl.nodes[i];
    rule.anchors.push_back(anchor);
    rule.offsets.push_back(offset);
    rule.nodes.push_back(anchor + offset);
    rule.weights.push_back(h * gl.weights[i]);
  }
}

std::vector<double> panel_edges(std::span<const double> breakpoints,
                                std::span<const double> singular_points,
                                const PanelLayout& layout) {
  if (!(layout.max_width > 0.0)) throw ValidationError("panel width must be positive");
  std::vector<double> edges;
  for (std::size_t k = 0; k + 1 < breakpoints.size(); ++k) {
    const double a = breakpoints[k];
    const double b = breakpoints[k + 1];
    if (!(b > a)) continue;
    segment_edges(a, b, is_listed(singular_points, a), is_listed(singular_points, b), layout,
                  edges);
  }
  return edges;
}

QuadratureRule composite_rule(std::span<const double> breakpoints,
                              std::span<const double> singular_points,
                              const PanelLayout& layout) {
  if (!(layout.max_width > 0.0)) throw ValidationError("panel width must be positive");
  if (layout.innermost_power < 1) throw ValidationError("innermost power must be >= 1");
  QuadratureRule rule;
  for (std::size_t k = 0; k + 1 < breakpoints.size(); ++k) {
    const double a = breakpoints[k];
    const double b = breakpoints[k + 1];
    if (!(b > a)) continue;
    const bool left = is_listed(singular_points, a), right = is_listed(singular_points, b);
    const auto e = base_edges(a, b, left, right, layout);
    for (std::size_t p = 0; p + 1 < e.size(); ++p) {
      const double lo = e[p];
      const double hi = e[p + 1];
      const bool graded_lo = p == 0 && left;
      const bool graded_hi = p + 2 == e.size() && right;
      if (graded_lo) {
        const auto off = grading_offsets(hi - lo, layout.grading_levels);
        append_innermost_panel(rule, lo, off.front(), layout.order, layout.innermost_power);
        for (std::size_t j = 0; j + 1 < off.size(); ++j)
          append_gauss_panel(rule, off[j], off[j + 1], layout.order, lo);
      } else if (graded_hi) {
        const auto off = grading_offsets(hi - lo, layout.grading_levels);
        for (std::size_t j = off.size() - 1; j > 0; --j)
          append_gauss_panel(rule, -off[j], -off[j - 1], layout.order, hi);
        append_innermost_panel(rule, hi, -off.front(), layout.order, layout.innermost_power);
      } else {
        append_gauss_panel(rule, lo, hi, layout.order);
      }
    }
  }
  return rule;
}

std::vector<double> clip_breakpoints(std::vector<double> points, double lo, double hi) {
  std::erase_if(points, [&](double x) { return !(x > lo && x < hi); });
  points.push_back(lo);
  points.push_back(hi);
  std::sort(points.begin(), points.end());
  points.erase(std::unique(points.begin(), points.end()), points.end());
  return points;
}

}  // namespace bmavg
