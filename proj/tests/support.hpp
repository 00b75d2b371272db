#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace testing {

/// Small deterministic generator for property tests.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  double normal() { return std::normal_distribution<double>()(rng_); }

  /// Sorted times in [lo, hi] with gaps of at least min_gap.
  std::vector<double> times(int n, double lo, double hi, double min_gap) {
    std::vector<double> t;
    while (static_cast<int>(t.size()) < n) {
      t.clear();
      for (int i = 0; i < n; ++i) t.push_back(uniform(lo, hi));
      std::sort(t.begin(), t.end());
      bool ok = true;
      for (int i = 1; i < n; ++i) ok = ok && t[i] - t[i - 1] >= min_gap;
      if (!ok) t.clear();
    }
    return t;
  }

  /// B B^T with B of size n x rank.
  Eigen::MatrixXd psd(int n, int rank) {
    Eigen::MatrixXd b(n, rank);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < rank; ++j) b(i, j) = normal();
    return b * b.transpose();
  }

  Eigen::VectorXd vector(int n) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = normal();
    return v;
  }

 private:
  std::mt19937_64 rng_;
};

/// Adaptive Simpson quadrature, used as an independent oracle.
inline double simpson(const std::function<double(double)>& f, double a, double b, double tol,
                      int depth = 50) {
  std::function<double(double, double, double, double, double, double, double, int)> rec =
      [&](double lo, double hi, double flo, double fmid, double fhi, double whole, double eps,
          int d) {
        const double mid = 0.5 * (lo + hi);
        const double lm = 0.5 * (lo + mid), rm = 0.5 * (mid + hi);
        const double flm = f(lm), frm = f(rm);
        const double left = (mid - lo) / 6.0 * (flo + 4.0 * flm + fmid);
        const double right = (hi - mid) / 6.0 * (fmid + 4.0 * frm + fhi);
        if (d <= 0 || std::abs(left + right - whole) <= 15.0 * eps)
          return left + right + (left + right - whole) / 15.0;
        return rec(lo, mid, flo, flm, fmid, left, eps / 2.0, d - 1) +
               rec(mid, hi, fmid, frm, fhi, right, eps / 2.0, d - 1);
      };
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  return rec(a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, depth);
}

/// Relative or absolute closeness.
inline bool close(double a, double b, double rel, double abs_tol = 0.0) {
  return std::abs(a - b) <= std::max(rel * std::max(std::abs(a), std::abs(b)), abs_tol);
}

}  // namespace testing
