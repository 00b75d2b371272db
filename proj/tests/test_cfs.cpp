#include <doctest.h>

#include <cmath>
#include <vector>

#include <nlohmann/json.hpp>

#include "bmavg/cfs.hpp"
#include "bmavg/errors.hpp"
#include "support.hpp"

using namespace bmavg;
using testing::Gen;

namespace {

GramMatrix closed_fbm(const Grid& grid, double hurst) {
  const auto n = static_cast<Eigen::Index>(grid.size());
  Eigen::MatrixXd s(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) s(i, j) = fbm_cov_closed(grid[i], grid[j], hurst);
  return make_gram(s, grid);
}

// P(sup_{[0,1]} |B| < eps) by the alternating reflection series.
double bm_tube_series(double eps) {
  double total = 0.0;
  for (int k = 0; k < 200; ++k) {
    const double m = 2.0 * k + 1.0;
    total += (k % 2 ? -1.0 : 1.0) / m * std::exp(-m * m * M_PI * M_PI / (8.0 * eps * eps));
  }
  return 4.0 / M_PI * total;
}

}  // namespace

TEST_CASE("increment variances of Brownian motion equal the spacing") {
  for (int n : {4, 16, 64}) {
    const Grid grid = Grid::uniform(1.0, n);
    const auto v = increment_conditional_variances(gram(MovingAverageKernel::fbm(0.5), grid));
    REQUIRE(v.values.size() == n);
    for (int i = 0; i < n; ++i) CHECK(std::abs(v.values(i) - 1.0 / n) <= 1e-12);
    CHECK(v.verdict);
  }
}

TEST_CASE("two-point FBM(0.75) conditional variance is 2 sqrt(2) - 2") {
  const Grid grid({1.0, 2.0});
  const auto exact = increment_conditional_variances(closed_fbm(grid, 0.75));
  CHECK(exact.values(0) == doctest::Approx(2.0 * std::sqrt(2.0) - 2.0).epsilon(1e-12));
  GramOptions opt;
  opt.normalize_to_unit_variance = true;
  const auto quad = increment_conditional_variances(gram(MovingAverageKernel::fbm(0.75), grid, opt));
  CHECK(std::abs(quad.values(0) - (2.0 * std::sqrt(2.0) - 2.0)) <= 1e-6);
}

TEST_CASE("near-duplicate times give a vanishing increment variance") {
  const Grid grid({0.25, 0.5, 0.5 + 1e-15});
  const auto v = increment_conditional_variances(gram(MovingAverageKernel::fbm(0.5), grid));
  CHECK(v.values(1) <= 1e-14);
  CHECK_FALSE(v.verdict);
  CHECK_THROWS_AS(Grid({0.5, 0.5}), ValidationError);
}

TEST_CASE("increment variances need two points and a valid threshold") {
  CHECK_THROWS_AS(increment_conditional_variances(make_gram(Eigen::MatrixXd::Ones(1, 1))),
                  ValidationError);
  CHECK_THROWS_AS(increment_conditional_variances(make_gram(Eigen::MatrixXd::Identity(2, 2)), -1.0),
                  ValidationError);
}

TEST_CASE("property: conditional variances agree with explicit Schur complements") {
  Gen gen(53);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = gen.integer(2, 10);
    const Grid grid(gen.times(n, 0.05, 2.0, 0.02));
    const auto g = closed_fbm(grid, gen.uniform(0.1, 0.9));
    const auto v = increment_conditional_variances(g);
    for (int k = 1; k < n; ++k) {
      // Var(X_k | X_0..X_{k-1}) equals Var(D_k | X_0..X_{k-1}).
      const Eigen::MatrixXd past = g.sigma.topLeftCorner(k, k);
      const Eigen::VectorXd c = g.sigma.block(0, k, k, 1);
      const double schur = g.sigma(k, k) - c.dot(past.ldlt().solve(c));
      CHECK(testing::close(v.values(k - 1), schur, 1e-7, 1e-12));
    }
  }
}

TEST_CASE("property: the verdict holds exactly when the increments have full rank") {
  Gen gen(59);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = gen.integer(2, 12);
    const int r = gen.integer(1, n);
    const auto g = make_gram(gen.psd(n, r), Grid::uniform(1.0, n - 1));
    const auto report = check_cfs(g);
    const auto N = static_cast<Eigen::Index>(n - 1);
    CHECK(report.cond.verdict == (report.increment_rank == N));
    CHECK(report.cond.verdict == (r == n));
    CHECK(report.rank == r);
  }
  // X_0 = 0 for Brownian motion: the start carries no rank, the increments carry all of it.
  const auto bm = check_cfs(gram(MovingAverageKernel::fbm(0.5), Grid::uniform(1.0, 8)));
  CHECK(bm.cond.verdict);
  CHECK(bm.rank == 8);
  CHECK(bm.increment_rank == 8);
  CHECK(bm.min_cond_variance == doctest::Approx(0.125));
}

TEST_CASE("trapezoid functional of Brownian motion has variance 1/3") {
  const auto g = gram(MovingAverageKernel::fbm(0.5), Grid::uniform(1.0, 256));
  const auto scan = degenerate_functional_scan(g);
  REQUIRE(!scan.empty());
  CHECK(scan.front().label == "trapezoid");
  CHECK(std::abs(scan.front().variance - 1.0 / 3.0) <= 1e-5);
  for (std::size_t i = 1; i < scan.size(); ++i)
    CHECK(scan[i].variance <= 1e-6 * g.max_diagonal());
}

TEST_CASE("trapezoid weights integrate linear functions exactly") {
  Gen gen(61);
  const Grid grid(gen.times(9, 0.1, 3.0, 0.01));
  const auto w = trapezoid_weights(grid);
  double lin = 0.0, one = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    one += w(i);
    lin += w(i) * (2.0 * grid[i] - 1.0);
  }
  const double a = grid.front(), b = grid.horizon();
  CHECK(one == doctest::Approx(b - a).epsilon(1e-14));
  CHECK(lin == doctest::Approx((b * b - b) - (a * a - a)).epsilon(1e-13));
}

TEST_CASE("zero covariance makes every functional degenerate") {
  const auto g = make_gram(Eigen::MatrixXd::Zero(4, 4));
  std::vector<Eigen::VectorXd> extra = {Eigen::VectorXd::Ones(4)};
  const auto scan = degenerate_functional_scan(g, extra);
  CHECK(scan.size() == 5);
  for (const auto& f : scan) CHECK(f.variance == 0.0);
  std::vector<Eigen::VectorXd> wrong = {Eigen::VectorXd::Ones(3)};
  try {
    degenerate_functional_scan(g, wrong);
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(e.field() == "cfs.weights");
  }
}

TEST_CASE("example process: positive grid verdict with a vanishing integral") {
  double prev = INFINITY;
  for (int level : {6, 7, 8}) {
    const auto g = counterexample_gram(CounterexampleSpec{}, Grid::uniform(1.0, 1 << level));
    const auto report = check_cfs(g);
    CHECK(report.cond.verdict);
    const double ratio = report.degenerate.front().variance / g.sigma(g.dim() - 1, g.dim() - 1);
    CHECK(ratio < prev);
    prev = ratio;
  }
  CHECK(prev < 1e-3);

  CounterexampleSpec plus;
  plus.corrected_sign = false;
  const auto p = counterexample_gram(plus, Grid::uniform(1.0, 64));
  const auto scan = degenerate_functional_scan(p);
  CHECK(scan.front().variance > 0.1 * p.sigma(64, 64));
}

TEST_CASE("tube examples") {
  const GaussianVector bm(gram(MovingAverageKernel::fbm(0.5), Grid::uniform(1.0, 16)));
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(17);
  const auto wide = tube_probability(bm, zero, 1e6, 1000, 1);
  CHECK(wide.estimate == 1.0);
  CHECK(wide.hits == 1000);

  const GaussianVector flat(make_gram(Eigen::MatrixXd::Zero(5, 5)));
  const auto miss = tube_probability(flat, Eigen::VectorXd::Ones(5), 0.5, 1000, 1);
  CHECK(miss.estimate == 0.0);
  CHECK(miss.ci.lo == 0.0);
  CHECK(miss.ci.hi > 0.0);

  CHECK_THROWS_AS(tube_probability(bm, Eigen::VectorXd::Zero(3), 1.0, 10, 1), ValidationError);
  CHECK_THROWS_AS(tube_probability(bm, zero, 0.0, 10, 1), ValidationError);
  CHECK_THROWS_AS(tube_probability(bm, zero, 1.0, 0, 1), ValidationError);
}

TEST_CASE("Brownian tube probability sits just above the continuous series value") {
  // Discrete monitoring on 64 points can only make the tube easier to stay in.
  const GaussianVector bm(gram(MovingAverageKernel::fbm(0.5), Grid::uniform(1.0, 64)));
  const auto est = tube_probability(bm, Eigen::VectorXd::Zero(65), 1.0, 100000, 3);
  const double series = bm_tube_series(1.0);
  CHECK(series == doctest::Approx(0.370777).epsilon(1e-5));
  CHECK(est.ci.hi > series);
  CHECK(est.estimate < series + 0.08);
}

TEST_CASE("property: tube estimates are monotone in epsilon") {
  Gen gen(67);
  const GaussianVector gv(gram(MovingAverageKernel::fbm(0.7), Grid::uniform(1.0, 32)));
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> eps;
    for (int i = 0; i < 8; ++i) eps.push_back(gen.uniform(0.05, 3.0));
    std::sort(eps.begin(), eps.end());
    const Eigen::VectorXd psi = 0.3 * gen.vector(33);
    const auto est = tube_probabilities(gv, psi, eps, 5000, static_cast<std::uint64_t>(trial));
    for (std::size_t i = 1; i < est.size(); ++i) CHECK(est[i].hits >= est[i - 1].hits);
    for (std::size_t i = 0; i < est.size(); ++i) {
      const auto single = tube_probability(gv, psi, eps[i], 5000, static_cast<std::uint64_t>(trial));
      CHECK(single.hits == est[i].hits);
    }
  }
}

TEST_CASE("Wilson interval") {
  const auto half = wilson_interval(50, 100);
  CHECK(half.lo == doctest::Approx(0.403832).epsilon(1e-5));
  CHECK(half.hi == doctest::Approx(0.596168).epsilon(1e-5));
  const auto none = wilson_interval(0, 20);
  CHECK(none.lo == 0.0);
  CHECK(none.hi == doctest::Approx(0.161125).epsilon(1e-4));
  const auto all = wilson_interval(20, 20);
  CHECK(all.hi == doctest::Approx(1.0));
  CHECK_THROWS_AS(wilson_interval(0, 0), ValidationError);
  CHECK_THROWS_AS(wilson_interval(3, 2), ValidationError);
}

TEST_CASE("history_drift examples") {
  const Grid grid({0.25, 0.5, 1.0});
  PastIncrements zero{{-2.0, -1.0, 0.0}, {0.0, 0.0}};
  CHECK(history_drift(MovingAverageKernel::fbm(0.7), zero, grid).cwiseAbs().maxCoeff() == 0.0);

  const auto past = PastIncrements::sample({-8.0, -4.0, -2.0, -1.0, -0.5, 0.0}, 5);
  CHECK(history_drift(MovingAverageKernel::fbm(0.5), past, grid).cwiseAbs().maxCoeff() == 0.0);

  const double delta = 1.0 / 64.0;
  PastIncrements spike{{-1.0, -1.0 + delta, 0.0}, {1.0, 0.0}};
  const Grid half({0.5});
  CHECK(history_drift(MovingAverageKernel::indicator(2.0), spike, half)(0) == 0.0);
  CHECK(history_drift(MovingAverageKernel::indicator(1.2), spike, half)(0) == -1.0);

  PastIncrements open{{-1.0, -0.5}, {1.0}};
  CHECK_THROWS_AS(history_drift(MovingAverageKernel::fbm(0.7), open, grid), ValidationError);
  PastIncrements ragged{{-1.0, -0.5, 0.0}, {1.0}};
  CHECK_THROWS_AS(ragged.validate(), ValidationError);
}

TEST_CASE("property: history_drift is linear in the past increments") {
  Gen gen(71);
  const Grid grid({0.1, 0.4, 0.9});
  const auto k = MovingAverageKernel::fbm(0.3);
  const std::vector<double> edges = {-16.0, -8.0, -3.0, -1.0, -0.2, 0.0};
  for (int trial = 0; trial < 10; ++trial) {
    const auto a = PastIncrements::sample(edges, 2 * trial, 0);
    const auto b = PastIncrements::sample(edges, 2 * trial + 1, 0);
    const double alpha = gen.normal(), beta = gen.normal();
    PastIncrements mix{edges, {}};
    for (std::size_t j = 0; j < a.increments.size(); ++j)
      mix.increments.push_back(alpha * a.increments[j] + beta * b.increments[j]);
    const Eigen::VectorXd lhs = history_drift(k, mix, grid);
    const Eigen::VectorXd rhs =
        alpha * history_drift(k, a, grid) + beta * history_drift(k, b, grid);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + rhs.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("reachable_shift examples") {
  const Grid grid = Grid::uniform(1.0, 32);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(33), one = Eigen::VectorXd::Ones(33);
  CHECK(reachable_shift(MovingAverageKernel::fbm(0.3), zero, grid).cwiseAbs().maxCoeff() == 0.0);
  for (const auto& k : {MovingAverageKernel::fbm(0.5), MovingAverageKernel::indicator(1.0)}) {
    const auto s = reachable_shift(k, one, grid);
    for (int i = 0; i <= 32; ++i) CHECK(std::abs(s(i) - grid[i]) <= 1e-14);
  }
  CHECK_THROWS_AS(reachable_shift(MovingAverageKernel::fbm(0.5), one, Grid({0.5, 1.0})),
                  ValidationError);
  CHECK_THROWS_AS(reachable_shift(MovingAverageKernel::fbm(0.5), zero.head(5), grid),
                  ValidationError);
}

TEST_CASE("report JSON carries the continuity caveat") {
  const auto report = check_cfs(gram(MovingAverageKernel::fbm(0.5), Grid::uniform(1.0, 4)));
  const auto j = nlohmann::json::parse(to_json(report));
  CHECK(j["continuity_caveat"]["flag"] == true);
  CHECK(j["grid_verdict"] == true);
  CHECK(j["min_cond_variance"]["value"].get<double>() == doctest::Approx(0.25));
  CHECK(to_json(report) == to_json(report));
}
