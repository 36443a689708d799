#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "osal/errors.hpp"
#include "osal/sampling.hpp"

namespace osal {

namespace {

constexpr std::size_t kMinTail = 8;

/// Score-equation pieces for log-data t_i = ln(x_i / max x): returns S1/S0 where
/// S0 = sum exp(k t_i), S1 = sum t_i exp(k t_i).
double weighted_log_mean(const std::vector<double>& t, double k) {
  double s0 = 0.0, s1 = 0.0;
  for (double v : t) {
    const double w = std::exp(k * v);
    s0 += w;
    s1 += w * v;
  }
  return s1 / s0;
}

}  // namespace

double weibull_cdf(double x, double shape, double scale) {
  if (x <= 0.0) return 0.0;
  return -std::expm1(-std::pow(x / scale, shape));
}

WeibullFit fit_weibull(std::span<const double> distances, double tail_fraction,
                       const WeibullOptions& options) {
  if (!(tail_fraction > 0.0 && tail_fraction <= 1.0)) {
    throw ContractError("tail_fraction must lie in (0, 1]");
  }
  for (double d : distances) {
    if (!std::isfinite(d) || d < 0.0) throw DegenerateStatsError("distances must be finite and non-negative");
  }
  const auto n = distances.size();
  const auto tail = std::min(n, static_cast<std::size_t>(std::ceil(tail_fraction * n - 1e-9)));
  if (tail < kMinTail) {
    throw DegenerateStatsError("Weibull fit needs at least 8 tail distances, got " +
                               std::to_string(tail));
  }
  std::vector<double> x(distances.begin(), distances.end());
  std::nth_element(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(n - tail), x.end());
  x.erase(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(n - tail));
  // Zero distances carry no information about a positive-support fit.
  std::erase_if(x, [](double v) { return v <= 0.0; });
  if (x.size() < kMinTail) throw DegenerateStatsError("too few positive tail distances");
  const double top = *std::max_element(x.begin(), x.end());
  const double bottom = *std::min_element(x.begin(), x.end());
  if (bottom == top) throw DegenerateStatsError("constant distances");

  std::vector<double> t(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) t[i] = std::log(x[i] / top);
  const double m = static_cast<double>(t.size());
  const double mean_t = std::accumulate(t.begin(), t.end(), 0.0) / m;
  double var_t = 0.0;
  for (double v : t) var_t += (v - mean_t) * (v - mean_t);
  var_t /= m;
  if (!(var_t > 0.0)) throw DegenerateStatsError("constant distances");

  // Score function in the shape; strictly increasing with a unique root.
  auto score = [&](double k) { return weighted_log_mean(t, k) - 1.0 / k - mean_t; };

  WeibullFit fit;
  fit.tail_size = x.size();
  double k = std::numbers::pi / std::sqrt(6.0 * var_t);
  bool converged = false;
  for (int it = 1; it <= options.max_iterations; ++it) {
    const double denom = weighted_log_mean(t, k) - mean_t;
    if (!(denom > 0.0) || !std::isfinite(denom)) break;
    const double next = k + 0.5 * (1.0 / denom - k);
    fit.iterations = it;
    if (std::abs(next - k) <= options.tolerance * k) {
      k = next;
      converged = true;
      break;
    }
    k = next;
  }

  if (!converged) {
    double lo = 1e-3, hi = 1.0;
    while (score(hi) < 0.0 && hi < 1e6) hi *= 2.0;
    while (score(lo) > 0.0 && lo > 1e-9) lo *= 0.5;
    if (score(lo) > 0.0 || score(hi) < 0.0) throw FitError("Weibull shape root not bracketed");
    for (int it = 1; it <= options.max_iterations; ++it) {
      k = 0.5 * (lo + hi);
      (score(k) < 0.0 ? lo : hi) = k;
      fit.iterations = options.max_iterations + it;
      if (hi - lo <= options.tolerance * k) {
        converged = true;
        break;
      }
    }
    k = 0.5 * (lo + hi);
  }
  if (!converged || !std::isfinite(k) || k <= 0.0) {
    throw FitError("Weibull shape did not converge in " + std::to_string(options.max_iterations) +
                   " iterations");
  }
  double s0 = 0.0;
  for (double v : t) s0 += std::exp(k * v);
  fit.shape = k;
  fit.scale = top * std::pow(s0 / m, 1.0 / k);
  if (!std::isfinite(fit.scale) || fit.scale <= 0.0) throw FitError("non-finite Weibull scale");
  return fit;
}

double outlier_probability(const Vector& z, const std::map<ClassIndex, WeibullClassModel>& models) {
  if (models.empty()) throw DegenerateStatsError("no class models for outlier scoring");
  double best = 1.0;
  for (const auto& [c, m] : models) {
    if (m.latent_mean.size() != z.size()) throw ShapeError("latent dimension mismatch");
    best = std::min(best, weibull_cdf((z - m.latent_mean).norm(), m.shape, m.scale));
  }
  return best;
}

}  // namespace osal
