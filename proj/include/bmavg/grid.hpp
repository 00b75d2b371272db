#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace bmavg {

/// Strictly increasing, finite, nonempty set of observation times t_0 >= 0.
class Grid {
 public:
  explicit Grid(std::vector<double> times);

  /// t_k = k T / n_steps for k = 0..n_steps.
  static Grid uniform(double horizon, std::size_t n_steps);

  std::span<const double> times() const noexcept { return times_; }
  std::size_t size() const noexcept { return times_.size(); }
  double operator[](std::size_t i) const { return times_[i]; }
  double front() const noexcept { return times_.front(); }
  double horizon() const noexcept { return times_.back(); }

  /// Smallest gap between consecutive times; horizon() for a single point.
  double min_spacing() const noexcept;
  bool is_uniform(double rtol = 1e-9) const noexcept;

  /// Times at the given positions (must be increasing).
  Grid subset(std::span<const std::size_t> indices) const;

  bool operator==(const Grid&) const = default;

 private:
  std::vector<double> times_;
};

}  // namespace bmavg
