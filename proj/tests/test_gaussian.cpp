#include <doctest.h>

#include <cmath>
#include <vector>

#include "bmavg/errors.hpp"
#include "bmavg/gaussian.hpp"
#include "bmavg/parallel.hpp"
#include "support.hpp"

using namespace bmavg;
using testing::Gen;

namespace {

GaussianVector bivariate(double rho) {
  Eigen::MatrixXd s(2, 2);
  s << 1.0, rho, rho, 1.0;
  return GaussianVector(make_gram(s));
}

// Entrywise |empirical - expected| <= 3 SE + allowance.
void check_within(const CovarianceEstimate& est, const Eigen::MatrixXd& expected,
                  const Eigen::MatrixXd& allowance) {
  for (Eigen::Index i = 0; i < expected.rows(); ++i)
    for (Eigen::Index j = 0; j < expected.cols(); ++j) {
      INFO("entry (" << i << ", " << j << "): empirical " << est.cov(i, j) << ", expected "
                     << expected(i, j) << ", se " << est.std_error(i, j));
      CHECK(std::abs(est.cov(i, j) - expected(i, j)) <=
            3.0 * est.std_error(i, j) + allowance(i, j));
    }
}

}  // namespace

TEST_CASE("factor_psd examples") {
  const auto id = factor_psd(Eigen::MatrixXd::Identity(3, 3));
  CHECK(id.rank == 3);
  CHECK((id.lower() - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() == 0.0);

  const auto ones = factor_psd(Eigen::MatrixXd::Ones(2, 2));
  CHECK(ones.rank == 1);

  const auto g = gram(MovingAverageKernel::fbm(0.5), Grid({0.25, 0.5, 1.0}));
  const auto f = factor_psd(g.sigma);
  CHECK(f.rank == 3);
  CHECK((f.factor * f.factor.transpose() - g.sigma).cwiseAbs().maxCoeff() <= 1e-12);
  const Eigen::MatrixXd low = f.lower();
  CHECK(low.triangularView<Eigen::StrictlyUpper>().toDenseMatrix().cwiseAbs().maxCoeff() == 0.0);

  Eigen::MatrixXd bad(2, 2);
  bad << 1.0, 0.0, 0.0, -1.0;
  CHECK_THROWS_AS(factor_psd(bad), NumericalError);
  CHECK_THROWS_AS(factor_psd(Eigen::MatrixXd::Zero(2, 3)), ValidationError);
}

TEST_CASE("property: factor_psd rank matches the generating rank") {
  Gen gen(41);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = gen.integer(1, 20);
    const int r = gen.integer(0, n);
    const Eigen::MatrixXd s = gen.psd(n, r);
    const auto f = factor_psd(s);
    CHECK(f.rank == r);
    const double norm = std::max(s.cwiseAbs().maxCoeff(), 1.0);
    CHECK((f.factor * f.factor.transpose() - s).cwiseAbs().maxCoeff() <= 1e-9 * norm);
    if (r > 0) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
      CHECK(es.eigenvalues()(n - r) > 1e-10 * es.eigenvalues()(n - 1));
    }
  }
}

TEST_CASE("condition examples") {
  const std::vector<Eigen::Index> first = {0};
  for (double rho : {-0.9, -0.3, 0.5, 0.99}) {
    Eigen::VectorXd x(1);
    x << 1.7;
    const auto c = condition(bivariate(rho), first, x);
    CHECK(c.mean(0) == doctest::Approx(rho * 1.7).epsilon(1e-12));
    CHECK(c.gram.sigma(0, 0) == doctest::Approx(1.0 - rho * rho).epsilon(1e-12));
  }
  Eigen::VectorXd x(1);
  x << -4.0;
  const auto ind = condition(bivariate(0.0), first, x);
  CHECK(ind.mean(0) == 0.0);
  CHECK(ind.gram.sigma(0, 0) == 1.0);

  x << 0.3;
  const auto dup = condition(GaussianVector(make_gram(Eigen::MatrixXd::Ones(2, 2))), first, x);
  CHECK(dup.mean(0) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(std::abs(dup.gram.sigma(0, 0)) <= 1e-12);
}

TEST_CASE("condition rejects bad input") {
  const auto gv = bivariate(0.2);
  Eigen::VectorXd x(1);
  x << 0.0;
  const std::vector<Eigen::Index> out_of_range = {2}, twice = {0, 0}, first = {0};
  CHECK_THROWS_AS(condition(gv, out_of_range, x), ValidationError);
  Eigen::VectorXd two(2);
  two << 0.0, 0.0;
  CHECK_THROWS_AS(condition(gv, twice, two), ValidationError);
  CHECK_THROWS_AS(condition(gv, first, two), ValidationError);
  // Duplicated coordinates observed at different values leave the support.
  const std::vector<Eigen::Index> both = {0, 1};
  two << 0.0, 1.0;
  CHECK_THROWS_AS(condition(GaussianVector(make_gram(Eigen::MatrixXd::Ones(2, 2))), both, two),
                  ValidationError);
}

TEST_CASE("property: conditioning in two steps equals conditioning at once") {
  Gen gen(43);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = gen.integer(3, 9);
    const Eigen::MatrixXd s = gen.psd(n, n) + 0.1 * Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd mean = gen.vector(n);
    const GaussianVector gv(mean, make_gram(s));
    const Eigen::Index a = gen.integer(0, n - 1);
    Eigen::Index b = gen.integer(0, n - 2);
    if (b >= a) ++b;
    const double xa = gen.normal(), xb = gen.normal();

    const std::vector<Eigen::Index> both = {a, b};
    Eigen::VectorXd vab(2);
    vab << xa, xb;
    const auto once = condition(gv, both, vab);

    const std::vector<Eigen::Index> first = {a};
    Eigen::VectorXd va(1);
    va << xa;
    const auto step1 = condition(gv, first, va);
    // b's position among the coordinates left after removing a.
    const std::vector<Eigen::Index> second = {b > a ? b - 1 : b};
    Eigen::VectorXd vb(1);
    vb << xb;
    const auto step2 = condition(step1, second, vb);

    CHECK((once.mean - step2.mean).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK((once.gram.sigma - step2.gram.sigma).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("sample examples") {
  Eigen::VectorXd mean(3);
  mean << 1.0, -2.0, 0.5;
  const GaussianVector zero(mean, make_gram(Eigen::MatrixXd::Zero(3, 3)));
  const auto e = sample(zero, 10, 5);
  for (Eigen::Index p = 0; p < 10; ++p) CHECK((e.paths.row(p).transpose() - mean).norm() == 0.0);
  CHECK(e.method == "cholesky");
}

TEST_CASE("sample is identical across thread counts") {
  const GaussianVector gv(gram(MovingAverageKernel::fbm(0.3), Grid::uniform(1.0, 20)));
  std::vector<Eigen::MatrixXd> runs;
  for (std::size_t threads : {1, 4, 8}) {
    set_thread_count(threads);
    runs.push_back(sample(gv, 700, 99).paths);
    runs.push_back(sample(gv, 700, 99).paths);
  }
  set_thread_count(1);
  for (const auto& r : runs) CHECK((r - runs.front()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((sample(gv, 700, 100).paths - runs.front()).cwiseAbs().maxCoeff() > 0.0);
  // Path p does not depend on how many paths are drawn.
  CHECK((sample(gv, 5, 99).paths - runs.front().topRows(5)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("Brownian samples have the right covariance and vanishing skewness") {
  const Grid grid({0.25, 0.5, 1.0});
  const GaussianVector gv(gram(MovingAverageKernel::fbm(0.5), grid));
  const auto e = sample(gv, 100000, 7);
  const auto est = empirical_covariance(e);
  check_within(est, gv.gram.sigma, Eigen::MatrixXd::Zero(3, 3));

  const int m = static_cast<int>(e.paths.rows());
  for (Eigen::Index j = 0; j < 3; ++j) {
    const Eigen::VectorXd z = e.paths.col(j) / std::sqrt(grid[j]);
    const double skew = z.array().cube().mean();
    const double abs3 = z.array().abs().cube().mean();
    CHECK(std::isfinite(abs3));
    CHECK(abs3 == doctest::Approx(2.0 * std::sqrt(2.0 / M_PI)).epsilon(0.05));
    // Var(Z^3) = 15 for a standard normal.
    CHECK(std::abs(skew) <= 4.0 * std::sqrt(15.0 / m));
  }
}

TEST_CASE("direct simulation of Brownian motion and indicator(1)") {
  const Grid grid({0.2, 0.5, 1.0});
  for (const auto& k : {MovingAverageKernel::fbm(0.5), MovingAverageKernel::indicator(1.0)}) {
    DirectOptions opt;
    opt.substeps = 8;
    const auto e = direct_simulate(k, grid, 100000, 11, opt);
    CHECK(e.method == "direct");
    const auto expected = gram(k, grid).sigma;
    const double L = default_truncation(k, grid);
    check_within(empirical_covariance(e), expected, direct_allowance(k, grid, 8, L));
  }
}

TEST_CASE("direct simulation of the example process matches its Gram") {
  const CounterexampleSpec spec;
  const Grid grid({0.25, 0.5, 0.75, 0.9, 1.0});
  const auto e = direct_simulate(spec, grid, 100000, 13, 16);
  check_within(empirical_covariance(e), counterexample_gram(spec, grid).sigma,
               direct_allowance(spec, grid, 16));
}

TEST_CASE("direct scheme covariance converges to the Gram") {
  const Grid grid({0.3, 0.6, 1.0});
  const auto k = MovingAverageKernel::fbm(0.75);
  GramOptions opt;
  opt.L = 400.0;
  opt.max_tail_error = 1.0;
  const auto exact = gram(k, grid, opt).sigma;
  double prev_err = INFINITY, prev_allow = INFINITY;
  for (int substeps : {4, 16, 64}) {
    const Eigen::MatrixXd scheme = direct_scheme_covariance(k, grid, substeps, 400.0);
    const double err = (scheme - exact).cwiseAbs().maxCoeff();
    const double allow = direct_allowance(k, grid, substeps, 400.0).maxCoeff();
    CHECK(err <= allow + 1e-8);
    CHECK(err < prev_err);
    CHECK(allow < prev_allow);
    prev_err = err;
    prev_allow = allow;
  }

  const CounterexampleSpec spec;
  const auto ex = counterexample_gram(spec, grid).sigma;
  prev_allow = INFINITY;
  for (int substeps : {4, 16, 64}) {
    const double allow = direct_allowance(spec, grid, substeps).maxCoeff();
    CHECK((direct_scheme_covariance(spec, grid, substeps) - ex).cwiseAbs().maxCoeff() <=
          allow + 1e-10);
    CHECK(allow < prev_allow);
    prev_allow = allow;
  }
}

TEST_CASE("direct simulation is deterministic across thread counts") {
  const Grid grid({0.5, 1.0});
  std::vector<Eigen::MatrixXd> runs;
  for (std::size_t threads : {1, 4, 8}) {
    set_thread_count(threads);
    runs.push_back(direct_simulate(MovingAverageKernel::fbm(0.7), grid, 600, 3).paths);
    runs.push_back(direct_simulate(CounterexampleSpec{}, grid, 300, 3).paths);
  }
  set_thread_count(1);
  for (std::size_t i = 2; i < runs.size(); ++i)
    CHECK((runs[i] - runs[i % 2]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("empirical covariance needs two paths") {
  PathEnsemble e{Grid({1.0}), Eigen::MatrixXd::Zero(1, 1)};
  CHECK_THROWS_AS(empirical_covariance(e), ValidationError);
}
