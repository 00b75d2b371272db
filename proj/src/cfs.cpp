#include "bmavg/cfs.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "bmavg/deconv.hpp"
#include "bmavg/errors.hpp"
#include "bmavg/io.hpp"
#include "bmavg/parallel.hpp"
#include "bmavg/philox.hpp"

namespace bmavg {
namespace {

constexpr std::size_t kPathBlock = 256;
constexpr double kZ95 = 1.959963984540054;

double variance_of(const Eigen::MatrixXd& sigma, const Eigen::VectorXd& w) {
  return w.dot(sigma * w);
}

std::vector<double> rounded(const Eigen::VectorXd& v) {
  std::vector<double> out(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) out[static_cast<std::size_t>(i)] = io::round_sig(v(i));
  return out;
}

}  // namespace

Eigen::MatrixXd increment_gram(const GramMatrix& gram) {
  const Eigen::Index n = gram.dim();
  // Y = M X with M = first-difference matrix (row 0 keeps X_{t_0}).
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(n, n);
  for (Eigen::Index i = 1; i < n; ++i) m(i, i - 1) = -1.0;
  Eigen::MatrixXd g = m * gram.sigma * m.transpose();
  return 0.5 * (g + g.transpose());
}

IncrementVariances increment_conditional_variances(const GramMatrix& gram, double tau_rel) {
  if (gram.dim() < 2)
    throw ValidationError("conditional increment variances need at least two grid points",
                          "grid");
  if (!(tau_rel >= 0.0)) throw ValidationError("tau_cfs must be >= 0", "cfs.tau_cfs");
  const Eigen::MatrixXd g = increment_gram(gram);
  const Eigen::Index n = g.rows();
  const double maxdiag = std::max(g.diagonal().maxCoeff(), 0.0);
  const double tol = tau_rel * maxdiag;

  // Unit lower factor and pivots; skipped pivots keep a zero column and d = 0.
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
  IncrementVariances out;
  out.values.resize(n - 1);
  out.threshold = tol;
  for (Eigen::Index j = 0; j < n; ++j) {
    double dj = g(j, j);
    for (Eigen::Index k = 0; k < j; ++k) dj -= l(j, k) * l(j, k) * d(k);
    if (j > 0) out.values(j - 1) = std::max(dj, 0.0);
    if (!(dj > tol)) continue;
    d(j) = dj;
    l(j, j) = 1.0;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double v = g(i, j);
      for (Eigen::Index k = 0; k < j; ++k) v -= l(i, k) * l(j, k) * d(k);
      l(i, j) = v / dj;
    }
  }
  out.verdict = maxdiag > 0.0 && (out.values.array() > tol).all();
  return out;
}

Eigen::VectorXd trapezoid_weights(const Grid& grid) {
  const auto n = static_cast<Eigen::Index>(grid.size());
  Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    const double h = grid[static_cast<std::size_t>(i + 1)] - grid[static_cast<std::size_t>(i)];
    w(i) += 0.5 * h;
    w(i + 1) += 0.5 * h;
  }
  return w;
}

std::vector<Functional> degenerate_functional_scan(const GramMatrix& gram,
                                                   std::span<const Eigen::VectorXd> extra,
                                                   const ScanOptions& options) {
  const Eigen::Index n = gram.dim();
  for (const auto& w : extra)
    if (w.size() != n)
      throw ValidationError("weight vector length " + std::to_string(w.size()) +
                                " does not match grid size " + std::to_string(n),
                            "cfs.weights");
  const double threshold = options.tau_degen_rel * std::max(gram.max_diagonal(), 0.0);
  std::vector<Functional> out;
  const Eigen::VectorXd trap = trapezoid_weights(gram.grid);
  out.push_back({"trapezoid", trap, variance_of(gram.sigma, trap)});

  if (n > 0 && static_cast<std::size_t>(n) <= options.eigen_max_dim) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram.sigma);
    const Eigen::Index k = std::min<Eigen::Index>(options.k_smallest, n);
    for (Eigen::Index i = 0; i < k; ++i) {
      Eigen::VectorXd w = es.eigenvectors().col(i);
      // Fix the sign so the largest-magnitude entry is positive.
      Eigen::Index arg = 0;
      w.cwiseAbs().maxCoeff(&arg);
      if (w(arg) < 0.0) w = -w;
      const double var = variance_of(gram.sigma, w);
      if (var <= threshold) out.push_back({"eigen_" + std::to_string(i), w, var});
    }
  }
  for (std::size_t i = 0; i < extra.size(); ++i) {
    const double var = variance_of(gram.sigma, extra[i]);
    if (var <= threshold) out.push_back({"extra_" + std::to_string(i), extra[i], var});
  }
  return out;
}

Interval wilson_interval(std::size_t hits, std::size_t n) {
  if (n == 0) throw ValidationError("Wilson interval needs n > 0");
  if (hits > n) throw ValidationError("hits exceed trials");
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(hits) / nn;
  const double z2 = kZ95 * kZ95;
  const double denom = 1.0 + z2 / nn;
  const double centre = (p + z2 / (2.0 * nn)) / denom;
  const double half = kZ95 * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn)) / denom;
  return {hits == 0 ? 0.0 : std::max(0.0, centre - half), hits == n ? 1.0 : std::min(1.0, centre + half)};
}

std::vector<TubeEstimate> tube_probabilities(const GaussianVector& gv, const Eigen::VectorXd& psi,
                                             std::span<const double> epsilons,
                                             std::size_t n_paths, std::uint64_t seed) {
  const Eigen::Index n = gv.gram.dim();
  if (psi.size() != n) throw ValidationError("target length must match the grid", "tube.target");
  if (!psi.allFinite()) throw ValidationError("target must be finite", "tube.target");
  if (n_paths == 0) throw ValidationError("n_paths must be positive", "tube.n_paths");
  for (double e : epsilons)
    if (!(e > 0.0)) throw ValidationError("every epsilon must be positive", "tube.epsilons");

  const auto f = factor_psd(gv.gram.sigma);
  const Eigen::VectorXd offset = gv.mean - psi;
  // Sup-distance of each path from psi; the paths are those of sample(gv, n_paths, seed).
  std::vector<double> dist(n_paths);
  const std::size_t blocks = (n_paths + kPathBlock - 1) / kPathBlock;
  parallel_for(blocks, [&](std::size_t b) {
    const std::size_t p0 = b * kPathBlock;
    const std::size_t pn = std::min(n_paths, p0 + kPathBlock) - p0;
    Eigen::MatrixXd z(f.rank, static_cast<Eigen::Index>(pn));
    for (std::size_t j = 0; j < pn; ++j) {
      const NormalStream normals(seed, p0 + j);
      for (Eigen::Index k = 0; k < f.rank; ++k)
        z(k, static_cast<Eigen::Index>(j)) = normals(static_cast<std::uint64_t>(k));
    }
    Eigen::MatrixXd x = f.factor * z;
    x.colwise() += offset;
    for (std::size_t j = 0; j < pn; ++j)
      dist[p0 + j] = n ? x.col(static_cast<Eigen::Index>(j)).cwiseAbs().maxCoeff() : 0.0;
  });
  std::sort(dist.begin(), dist.end());

  std::vector<TubeEstimate> out;
  for (double e : epsilons) {
    const auto hits =
        static_cast<std::size_t>(std::lower_bound(dist.begin(), dist.end(), e) - dist.begin());
    out.push_back({e, hits, n_paths, static_cast<double>(hits) / static_cast<double>(n_paths),
                   wilson_interval(hits, n_paths)});
  }
  return out;
}

TubeEstimate tube_probability(const GaussianVector& gv, const Eigen::VectorXd& psi,
                              double epsilon, std::size_t n_paths, std::uint64_t seed) {
  const double eps[] = {epsilon};
  return tube_probabilities(gv, psi, eps, n_paths, seed).front();
}

void PastIncrements::validate() const {
  if (edges.size() < 2) throw ValidationError("past partition needs at least one cell", "past");
  if (increments.size() + 1 != edges.size())
    throw ValidationError("need one increment per past cell", "past");
  for (std::size_t j = 0; j < edges.size(); ++j) {
    if (!std::isfinite(edges[j])) throw ValidationError("past edges must be finite", "past");
    if (j > 0 && !(edges[j] > edges[j - 1]))
      throw ValidationError("past edges must be strictly increasing", "past");
  }
  if (edges.back() != 0.0) throw ValidationError("past partition must end at 0", "past");
  for (double v : increments)
    if (!std::isfinite(v)) throw ValidationError("past increments must be finite", "past");
}

PastIncrements PastIncrements::sample(std::vector<double> edges, std::uint64_t seed,
                                      std::uint64_t stream) {
  PastIncrements out{std::move(edges), {}};
  const NormalStream normals(seed, stream);
  for (std::size_t j = 0; j + 1 < out.edges.size(); ++j)
    out.increments.push_back(std::sqrt(out.edges[j + 1] - out.edges[j]) * normals(j));
  out.validate();
  return out;
}

Eigen::VectorXd history_drift(const MovingAverageKernel& kernel, const PastIncrements& past,
                              const Grid& grid) {
  past.validate();
  Eigen::VectorXd phi(static_cast<Eigen::Index>(grid.size()));
  for (std::size_t i = 0; i < grid.size(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < past.increments.size(); ++j)
      sum += kernel.increment(grid[i], past.edges[j]) * past.increments[j];
    phi(static_cast<Eigen::Index>(i)) = sum;
  }
  return phi;
}

Eigen::VectorXd reachable_shift(const MovingAverageKernel& kernel, const Eigen::VectorXd& g,
                                const Grid& grid) {
  if (grid.front() != 0.0) throw ValidationError("shift grid must start at 0", "grid");
  if (g.size() != static_cast<Eigen::Index>(grid.size()))
    throw ValidationError("g must have one value per grid time", "g");
  return volterra_left_riemann(grid.times(), [&](double x) { return kernel(x); }, g);
}

CfsReport check_cfs(const GramMatrix& gram, std::span<const Eigen::VectorXd> extra_weights,
                    const CfsOptions& options) {
  CfsReport r{gram.source, gram.grid, increment_conditional_variances(gram, options.tau_cfs_rel),
              0.0, 0, 0, 0, 0.0, {}, {}};
  Eigen::Index arg = 0;
  r.min_cond_variance = r.cond.values.minCoeff(&arg);
  r.min_index = static_cast<std::size_t>(arg) + 1;

  const auto full = factor_psd(gram.sigma);
  r.rank = full.rank;
  const Eigen::MatrixXd g_inc = increment_gram(gram);
  const auto inc = factor_psd(g_inc);
  const bool start_random = g_inc(0, 0) > options.tau_cfs_rel * g_inc.diagonal().maxCoeff();
  r.increment_rank = inc.rank - (start_random ? 1 : 0);
  if (static_cast<std::size_t>(gram.dim()) <= options.scan.eigen_max_dim) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram.sigma, Eigen::EigenvaluesOnly);
    r.min_eigenvalue = es.eigenvalues()(0);
  } else {
    r.min_eigenvalue = std::numeric_limits<double>::quiet_NaN();
  }
  r.degenerate = degenerate_functional_scan(gram, extra_weights, options.scan);
  return r;
}

std::string to_json(const CfsReport& r) {
  nlohmann::ordered_json j;
  j["format_version"] = io::kFormatVersion;
  j["kind"] = "cfs_report";
  j["source"] = r.source;
  std::vector<double> times;
  for (double t : r.grid.times()) times.push_back(io::round_sig(t));
  j["grid"] = times;
  j["grid_verdict"] = r.cond.verdict;
  j["tau_cfs"] = io::round_sig(r.cond.threshold);
  j["cond_variances"] = rounded(r.cond.values);
  j["min_cond_variance"] = {{"value", io::round_sig(r.min_cond_variance)},
                            {"index", r.min_index}};
  j["rank"] = r.rank;
  j["increment_rank"] = r.increment_rank;
  if (std::isfinite(r.min_eigenvalue)) j["min_eigenvalue"] = io::round_sig(r.min_eigenvalue);
  else j["min_eigenvalue"] = nullptr;
  auto& deg = j["degenerate_functionals"] = nlohmann::ordered_json::array();
  for (const auto& f : r.degenerate)
    deg.push_back({{"label", f.label},
                   {"variance", io::round_sig(f.variance)},
                   {"weights", rounded(f.weights)}});
  auto& tubes = j["tube_estimates"] = nlohmann::ordered_json::array();
  for (const auto& t : r.tubes)
    tubes.push_back({{"target", t.target},
                     {"epsilon", io::round_sig(t.estimate.epsilon)},
                     {"n_paths", t.estimate.n_paths},
                     {"hits", t.estimate.hits},
                     {"estimate", io::round_sig(t.estimate.estimate)},
                     {"ci95", {io::round_sig(t.estimate.ci.lo), io::round_sig(t.estimate.ci.hi)}}});
  j["continuity_caveat"] = {{"flag", CfsReport::continuity_caveat},
                            {"text", CfsReport::continuity_caveat_text}};
  return j.dump(2) + "\n";
}

}  // namespace bmavg
