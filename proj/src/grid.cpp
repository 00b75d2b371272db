#include "bmavg/grid.hpp"

#include <cmath>
#include <string>

#include "bmavg/errors.hpp"

namespace bmavg {

Grid::Grid(std::vector<double> times) : times_(std::move(times)) {
  if (times_.empty()) throw ValidationError("grid must be nonempty", "grid.times");
  for (std::size_t i = 0; i < times_.size(); ++i) {
    if (!std::isfinite(times_[i]))
      throw ValidationError("grid time " + std::to_string(i) + " is not finite", "grid.times");
    if (i > 0 && !(times_[i] > times_[i - 1]))
      throw ValidationError("grid times must be strictly increasing (index " +
                                std::to_string(i) + ")",
                            "grid.times");
  }
  if (times_.front() < 0.0) throw ValidationError("grid times must be >= 0", "grid.times");
}

Grid Grid::uniform(double horizon, std::size_t n_steps) {
  if (!(horizon > 0.0) || !std::isfinite(horizon))
    throw ValidationError("grid horizon T must be positive and finite", "grid.T");
  if (n_steps == 0) throw ValidationError("grid needs at least one step", "grid.N");
  std::vector<double> t(n_steps + 1);
  for (std::size_t k = 0; k <= n_steps; ++k)
    t[k] = horizon * static_cast<double>(k) / static_cast<double>(n_steps);
  t.back() = horizon;
  return Grid(std::move(t));
}

double Grid::min_spacing() const noexcept {
  if (times_.size() < 2) return times_.back() > 0.0 ? times_.back() : 1.0;
  double h = times_[1] - times_[0];
  for (std::size_t i = 2; i < times_.size(); ++i) h = std::min(h, times_[i] - times_[i - 1]);
  return h;
}

bool Grid::is_uniform(double rtol) const noexcept {
  if (times_.size() < 3) return true;
  const double h = (times_.back() - times_.front()) / static_cast<double>(times_.size() - 1);
  for (std::size_t i = 1; i < times_.size(); ++i)
    if (std::abs((times_[i] - times_[i - 1]) - h) > rtol * h) return false;
  return true;
}

Grid Grid::subset(std::span<const std::size_t> indices) const {
  std::vector<double> t;
  t.reserve(indices.size());
  for (auto i : indices) {
    if (i >= times_.size()) throw ValidationError("grid subset index out of range");
    t.push_back(times_[i]);
  }
  return Grid(std::move(t));
}

}  // namespace bmavg
