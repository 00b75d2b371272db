#include "bmavg/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "bmavg/errors.hpp"
#include "bmavg/io.hpp"
#include "bmavg/parallel.hpp"
#include "bmavg/philox.hpp"

namespace bmavg {

Eigen::MatrixXd PsdFactor::lower() const {
  Eigen::MatrixXd out(factor.rows(), factor.cols());
  for (std::size_t k = 0; k < pivots.size(); ++k)
    out.row(static_cast<Eigen::Index>(k)) = factor.row(pivots[k]);
  return out;
}

PsdFactor factor_psd(const Eigen::MatrixXd& sigma, double tau_rank, double tau_psd) {
  if (sigma.rows() != sigma.cols()) throw ValidationError("factor_psd needs a square matrix");
  const Eigen::Index n = sigma.rows();
  PsdFactor out;
  out.pivots.resize(n);
  std::iota(out.pivots.begin(), out.pivots.end(), Eigen::Index{0});
  if (n == 0) return out;

  const double norm = sigma.cwiseAbs().maxCoeff();
  Eigen::VectorXd d = sigma.diagonal();
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  auto& perm = out.pivots;
  Eigen::Index k = 0;
  for (; k < n; ++k) {
    Eigen::Index best = k;
    for (Eigen::Index i = k + 1; i < n; ++i)
      if (d(perm[i]) > d(perm[best])) best = i;
    std::swap(perm[k], perm[best]);
    const Eigen::Index p = perm[k];
    const double pivot = d(p);
    if (k == 0) out.largest_pivot = pivot;
    if (!(pivot > tau_rank * out.largest_pivot) || !(out.largest_pivot > 0.0)) break;
    const double root = std::sqrt(pivot);
    l(p, k) = root;
    for (Eigen::Index i = k + 1; i < n; ++i) {
      const Eigen::Index r = perm[i];
      double v = sigma(r, p);
      for (Eigen::Index m = 0; m < k; ++m) v -= l(r, m) * l(p, m);
      l(r, k) = v / root;
      d(r) -= l(r, k) * l(r, k);
    }
  }
  out.rank = k;
  for (Eigen::Index i = k; i < n; ++i)
    if (d(perm[i]) < -tau_psd * norm)
      throw NumericalError("matrix is not positive semidefinite: pivot " +
                           io::format_number(d(perm[i])) + " below -tau_psd * norm");
  out.factor = l.leftCols(out.rank);
  out.residual = (sigma - out.factor * out.factor.transpose()).cwiseAbs().maxCoeff();
  return out;
}

GaussianVector::GaussianVector(Eigen::VectorXd m, GramMatrix g) : mean(std::move(m)), gram(std::move(g)) {
  if (mean.size() != gram.dim())
    throw ValidationError("mean and covariance dimensions disagree");
  if (!mean.allFinite()) throw ValidationError("mean must be finite");
}

GaussianVector::GaussianVector(GramMatrix g) : mean(Eigen::VectorXd::Zero(g.dim())), gram(std::move(g)) {}

GaussianVector condition(const GaussianVector& gv, std::span<const Eigen::Index> observed,
                         const Eigen::VectorXd& values, double pinv_tol, double support_tol) {
  const Eigen::Index n = gv.gram.dim();
  if (static_cast<Eigen::Index>(observed.size()) != values.size())
    throw ValidationError("observed indices and values differ in length");
  if (!values.allFinite()) throw ValidationError("conditioning values must be finite");
  std::vector<bool> is_obs(n, false);
  for (auto i : observed) {
    if (i < 0 || i >= n) throw ValidationError("observed index out of range");
    if (is_obs[i]) throw ValidationError("observed indices must be distinct");
    is_obs[i] = true;
  }
  std::vector<Eigen::Index> free_idx;
  for (Eigen::Index i = 0; i < n; ++i)
    if (!is_obs[i]) free_idx.push_back(i);
  const auto no = static_cast<Eigen::Index>(observed.size());
  const auto nf = static_cast<Eigen::Index>(free_idx.size());
  const auto& s = gv.gram.sigma;

  Eigen::MatrixXd soo(no, no), sfo(nf, no), sff(nf, nf);
  Eigen::VectorXd resid(no);
  for (Eigen::Index a = 0; a < no; ++a) {
    resid(a) = values(a) - gv.mean(observed[a]);
    for (Eigen::Index b = 0; b < no; ++b) soo(a, b) = s(observed[a], observed[b]);
    for (Eigen::Index f = 0; f < nf; ++f) sfo(f, a) = s(free_idx[f], observed[a]);
  }
  for (Eigen::Index f = 0; f < nf; ++f)
    for (Eigen::Index g = 0; g < nf; ++g) sff(f, g) = s(free_idx[f], free_idx[g]);

  Eigen::MatrixXd pinv = Eigen::MatrixXd::Zero(no, no);
  Eigen::MatrixXd range_proj = Eigen::MatrixXd::Zero(no, no);
  if (no > 0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(soo);
    const double top = es.eigenvalues().cwiseAbs().maxCoeff();
    for (Eigen::Index k = 0; k < no; ++k) {
      const double lam = es.eigenvalues()(k);
      if (lam > pinv_tol * top && lam > 0.0) {
        const auto v = es.eigenvectors().col(k);
        pinv += (v * v.transpose()) / lam;
        range_proj += v * v.transpose();
      }
    }
    const Eigen::VectorXd off = resid - range_proj * resid;
    if (off.norm() > support_tol * std::max(1.0, resid.norm()))
      throw ValidationError("conditioning values lie outside the support of the observed block");
  }

  Eigen::VectorXd mean(nf);
  for (Eigen::Index f = 0; f < nf; ++f) mean(f) = gv.mean(free_idx[f]);
  mean += sfo * (pinv * resid);
  Eigen::MatrixXd cov = sff - sfo * pinv * sfo.transpose();
  cov = 0.5 * (cov + cov.transpose()).eval();
  for (Eigen::Index f = 0; f < nf; ++f) cov(f, f) = std::max(cov(f, f), 0.0);

  std::vector<std::size_t> keep(free_idx.begin(), free_idx.end());
  GramMatrix g(gv.gram.grid.subset(keep), std::move(cov));
  g.source = gv.gram.source + " | conditioned";
  g.mode = "conditional";
  return GaussianVector(std::move(mean), std::move(g));
}

PathEnsemble sample(const GaussianVector& gv, std::size_t n_paths, std::uint64_t seed) {
  const auto f = factor_psd(gv.gram.sigma);
  const Eigen::Index n = gv.gram.dim();
  PathEnsemble out{gv.gram.grid, Eigen::MatrixXd(static_cast<Eigen::Index>(n_paths), n), seed,
                   "cholesky", 0, gv.gram.L, gv.gram.source};
  parallel_for(n_paths, [&](std::size_t p) {
    const NormalStream normals(seed, p);
    Eigen::VectorXd z(f.rank);
    for (Eigen::Index k = 0; k < f.rank; ++k) z(k) = normals(static_cast<std::uint64_t>(k));
    out.paths.row(static_cast<Eigen::Index>(p)) = (gv.mean + f.factor * z).transpose();
  });
  return out;
}

CovarianceEstimate empirical_covariance(const PathEnsemble& ensemble) {
  const auto& x = ensemble.paths;
  const Eigen::Index m = x.rows(), n = x.cols();
  if (m < 2) throw ValidationError("need at least two paths for a covariance estimate");
  const Eigen::RowVectorXd mu = x.colwise().mean();
  const Eigen::MatrixXd c = x.rowwise() - mu;
  CovarianceEstimate out{Eigen::MatrixXd(n, n), Eigen::MatrixXd(n, n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const Eigen::ArrayXd prod = c.col(i).array() * c.col(j).array();
      const double mean = prod.mean();
      const double var = (prod - mean).square().sum() / static_cast<double>(m - 1);
      out.cov(i, j) = out.cov(j, i) = mean * static_cast<double>(m) / static_cast<double>(m - 1);
      out.std_error(i, j) = out.std_error(j, i) = std::sqrt(var / static_cast<double>(m));
    }
  }
  return out;
}

void write_ensemble(const PathEnsemble& ensemble, const std::filesystem::path& stem) {
  io::write_csv(stem.string() + ".csv", ensemble.paths);
  nlohmann::ordered_json j;
  j["format_version"] = io::kFormatVersion;
  j["kind"] = "path_ensemble";
  j["source"] = ensemble.source;
  j["method"] = ensemble.method;
  j["seed"] = ensemble.seed;
  j["n_paths"] = ensemble.paths.rows();
  std::vector<double> times;
  for (double t : ensemble.grid.times()) times.push_back(io::round_sig(t));
  j["grid"] = times;
  if (ensemble.method == "direct") j["substeps"] = ensemble.substeps;
  j["L"] = io::round_sig(ensemble.L);
  io::write_text(stem.string() + ".json", j.dump(2) + "\n");
}

}  // namespace bmavg
