#include "bmavg/deconv.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "bmavg/errors.hpp"
#include "bmavg/io.hpp"
#include "bmavg/parallel.hpp"
#include "bmavg/quadrature.hpp"

namespace bmavg {
namespace {

void validate_step(double delta) {
  if (!(delta > 0.0) || !std::isfinite(delta))
    throw ValidationError("grid step delta must be positive", "deconvolve.delta");
}

double max_abs(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

nlohmann::ordered_json result_json(const DeconvResult& r) {
  nlohmann::ordered_json j;
  j["lambda"] = io::round_sig(r.lambda);
  j["delta"] = io::round_sig(r.delta);
  j["n_steps"] = r.g.size() - 1;
  j["sup_error"] = io::round_sig(r.sup_error);
  j["l2_error"] = io::round_sig(r.l2_error);
  if (r.continuous_sup_error) j["continuous_sup_error"] = io::round_sig(*r.continuous_sup_error);
  j["edge_h"] = io::round_sig(r.edge_h);
  return j;
}

}  // namespace

Eigen::VectorXd volterra_left_riemann(std::span<const double> times,
                                      const std::function<double(double)>& kern,
                                      const Eigen::VectorXd& g) {
  const auto n = static_cast<Eigen::Index>(times.size());
  if (g.size() != n) throw ValidationError("g must have one value per grid time");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 1; i < n; ++i) {
    double sum = 0.0;
    for (Eigen::Index k = 0; k < i; ++k)
      sum += kern(times[k] - times[i]) * g(k) * (times[k + 1] - times[k]);
    out(i) = sum;
  }
  return out;
}

Eigen::VectorXd conv_apply(const Eigen::VectorXd& h, const Eigen::VectorXd& g, double delta) {
  validate_step(delta);
  if (h.size() != g.size())
    throw ValidationError("h and g must live on grids of the same size", "deconvolve.h");
  const Eigen::Index n = g.size();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 1; i < n; ++i) {
    double sum = 0.0;
    for (Eigen::Index k = 0; k < i; ++k) sum += h(i - k) * g(k);
    out(i) = sum * delta;
  }
  return out;
}

Eigen::MatrixXd conv_matrix(const Eigen::VectorXd& h, double delta) {
  validate_step(delta);
  const Eigen::Index n = h.size() - 1;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n + 1, n);
  for (Eigen::Index i = 1; i <= n; ++i)
    for (Eigen::Index k = 0; k < i; ++k) a(i, k) = h(i - k) * delta;
  return a;
}

double edge_of_support(std::span<const double> samples, double delta, std::optional<double> tol) {
  validate_step(delta);
  if (tol && !(*tol >= 0.0)) throw ValidationError("edge tolerance must be >= 0", "tol");
  if (samples.empty()) return 0.0;
  double top = 0.0;
  for (double v : samples) top = std::max(top, std::abs(v));
  const double cut = tol.value_or(1e-12 * top);
  std::size_t m = 0;
  while (m < samples.size() && std::abs(samples[m]) <= cut) ++m;
  return std::min(static_cast<double>(m), static_cast<double>(samples.size() - 1)) * delta;
}

DeconvResult deconv_solve(const Eigen::VectorXd& h, const Eigen::VectorXd& phi, double delta,
                          double lambda) {
  validate_step(delta);
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw ValidationError("lambda must be >= 0", "deconvolve.lambdas");
  if (h.size() != phi.size())
    throw ValidationError("h and phi must live on grids of the same size", "deconvolve.h");
  if (h.size() < 2) throw ValidationError("need at least one grid step", "deconvolve.N");
  if (!h.allFinite() || !phi.allFinite())
    throw ValidationError("h and phi must be finite", "deconvolve.h");
  const double h_top = max_abs(h);
  if (h_top == 0.0) throw ValidationError("h vanishes identically", "deconvolve.h");
  if (std::abs(phi(0)) > 1e-12 * std::max(max_abs(phi), 1e-300))
    throw ValidationError("target must satisfy phi(0) = 0", "deconvolve.target");

  const Eigen::Index n = h.size() - 1;
  Eigen::VectorXd g(n);
  if (lambda == 0.0) {
    const double diag = h(1) * delta;
    if (std::abs(h(1)) <= 1e-12 * h_top)
      throw SingularSystemError("h(-delta) = 0: the unregularized triangular system is "
                                "singular; use lambda > 0");
    for (Eigen::Index i = 1; i <= n; ++i) {
      double sum = 0.0;
      for (Eigen::Index k = 0; k + 1 < i; ++k) sum += h(i - k) * g(k);
      g(i - 1) = (phi(i) - sum * delta) / diag;
    }
  } else {
    Eigen::MatrixXd stacked = Eigen::MatrixXd::Zero(2 * n, n);
    stacked.topRows(n) = conv_matrix(h, delta).bottomRows(n);
    stacked.bottomRows(n).diagonal().setConstant(std::sqrt(lambda));
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(2 * n);
    rhs.head(n) = phi.tail(n);
    g = stacked.householderQr().solve(rhs);
  }

  DeconvResult out;
  out.g.resize(n + 1);
  out.g.head(n) = g;
  out.g(n) = g(n - 1);
  out.residual = conv_apply(h, out.g, delta) - phi;
  out.sup_error = max_abs(out.residual);
  out.l2_error = std::sqrt(delta * out.residual.squaredNorm());
  out.lambda = lambda;
  out.delta = delta;
  out.edge_h = edge_of_support(std::span<const double>(h.data(), static_cast<std::size_t>(h.size())),
                               delta);
  return out;
}

double continuous_sup_error(const std::function<double(double)>& h,
                            const std::function<double(double)>& phi, const Eigen::VectorXd& g,
                            double delta, int per_cell) {
  validate_step(delta);
  if (per_cell < 1) throw ValidationError("per_cell must be >= 1");
  const Eigen::Index n = g.size() - 1;
  const auto& gl = gauss_legendre(4);
  double worst = 0.0;
  for (Eigen::Index j = 0; j <= n * per_cell; ++j) {
    const double t = static_cast<double>(j) * delta / per_cell;
    double conv = 0.0;
    for (Eigen::Index k = 0; k < n && static_cast<double>(k) * delta < t; ++k) {
      const double a = static_cast<double>(k) * delta;
      const double b = std::min(static_cast<double>(k + 1) * delta, t);
      const double c = 0.5 * (a + b), r = 0.5 * (b - a);
      double cell = 0.0;
      for (std::size_t q = 0; q < gl.nodes.size(); ++q) cell += gl.weights[q] * h(c + r * gl.nodes[q] - t);
      conv += g(k) * r * cell;
    }
    worst = std::max(worst, std::abs(conv - phi(t)));
  }
  return worst;
}

std::vector<double> default_lambda_ladder() {
  std::vector<double> out;
  for (int e = 2; e <= 10; ++e) out.push_back(std::pow(10.0, -e));
  out.push_back(0.0);
  return out;
}

LadderResult deconv_ladder(const Eigen::VectorXd& h, const Eigen::VectorXd& phi, double delta,
                           std::span<const double> lambdas) {
  if (lambdas.empty()) throw ValidationError("lambda ladder is empty", "deconvolve.lambdas");
  LadderResult out;
  out.entries.resize(lambdas.size());
  parallel_for(lambdas.size(), [&](std::size_t k) {
    auto& e = out.entries[k];
    e.lambda = lambdas[k];
    try {
      e.result = deconv_solve(h, phi, delta, lambdas[k]);
      e.status = "ok";
    } catch (const SingularSystemError&) {
      e.status = "singular";
    }
  });
  bool any = false;
  for (std::size_t k = 0; k < out.entries.size(); ++k) {
    const auto& r = out.entries[k].result;
    if (!r) continue;
    if (!any || r->sup_error < out.entries[out.best].result->sup_error) out.best = k;
    any = true;
  }
  if (!any)
    throw SingularSystemError("every solve on the lambda ladder was singular; add lambda > 0");
  return out;
}

std::string to_json(const DeconvResult& result) {
  nlohmann::ordered_json j{{"format_version", io::kFormatVersion}, {"kind", "deconv_result"}};
  j.update(result_json(result));
  return j.dump(2) + "\n";
}

std::string to_json(const LadderResult& ladder) {
  nlohmann::ordered_json j;
  j["format_version"] = io::kFormatVersion;
  j["kind"] = "deconv_ladder";
  j["best_lambda"] = io::round_sig(ladder.entries.at(ladder.best).lambda);
  auto& arr = j["ladder"] = nlohmann::ordered_json::array();
  for (const auto& e : ladder.entries) {
    nlohmann::ordered_json row;
    row["lambda"] = io::round_sig(e.lambda);
    row["status"] = e.status;
    if (e.result) {
      const auto r = result_json(*e.result);
      for (const auto& [key, value] : r.items())
        if (key != "lambda") row[key] = value;
    }
    arr.push_back(row);
  }
  return j.dump(2) + "\n";
}

}  // namespace bmavg
