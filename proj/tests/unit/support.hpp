#pragma once

// Reference implementations used as oracles by the unit and acceptance tests. None of
// these reuse library code paths beyond data structures.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>
#include <unistd.h>

#include "osal/vnn.hpp"

namespace osal::testing {

/// KL(N(mu, exp(lv)) || N(0, 1)) for one coordinate by composite Simpson integration of
/// q log(q/p) over mu +- 14 sigma.
inline double kl_by_quadrature(double mu, double lv, int intervals = 20000) {
  const double sigma = std::exp(0.5 * lv);
  const double a = mu - 14.0 * sigma, b = mu + 14.0 * sigma;
  const double h = (b - a) / intervals;
  auto f = [&](double z) {
    const double u = (z - mu) / sigma;
    const double log_q = -0.5 * u * u - std::log(sigma) - 0.5 * std::log(2.0 * M_PI);
    const double log_p = -0.5 * z * z - 0.5 * std::log(2.0 * M_PI);
    return std::exp(log_q) * (log_q - log_p);
  };
  double sum = f(a) + f(b);
  for (int i = 1; i < intervals; ++i) sum += f(a + i * h) * (i % 2 == 1 ? 4.0 : 2.0);
  return sum * h / 3.0;
}

inline double variant_loss(const VnnModel& m, const Batch& b, const LossConfig& cfg,
                           std::uint64_t seed) {
  Rng rng(seed);
  return m.variant() == Variant::m2 ? m2_loss(m, b, cfg, rng).total
                                    : m1_loss(m, b, cfg, rng).total;
}

/// Largest relative error between the analytic gradient and a central difference with
/// step 1e-5, using identical noise for every evaluation. With `max_checks` > 0 only an
/// evenly strided subset of parameters is checked.
inline double worst_gradient_error(VnnModel model, const Batch& batch, const LossConfig& cfg,
                                   std::uint64_t seed, std::size_t max_checks = 0) {
  Vector grad;
  Rng rng(seed);
  loss_and_gradient(model, batch, cfg, rng, grad);
  const std::size_t n = model.parameter_count();
  const std::size_t stride = (max_checks == 0 || max_checks >= n) ? 1 : n / max_checks;
  constexpr double h = 1e-5;
  double worst = 0.0;
  for (std::size_t i = 0; i < n; i += stride) {
    auto& p = model.parameters()[static_cast<Eigen::Index>(i)];
    const double saved = p;
    p = saved + h;
    const double up = variant_loss(model, batch, cfg, seed);
    p = saved - h;
    const double down = variant_loss(model, batch, cfg, seed);
    p = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double analytic = grad[static_cast<Eigen::Index>(i)];
    const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-4});
    worst = std::max(worst, std::abs(numeric - analytic) / scale);
  }
  return worst;
}

inline Dataset blobs(int classes, int per_class, int dim, std::uint64_t seed,
                     double stddev = 1.0) {
  BlobConfig cfg;
  cfg.classes = classes;
  cfg.n_per_class = per_class;
  cfg.eval_per_class = per_class;
  cfg.dim = dim;
  cfg.seed = seed;
  cfg.stddev = stddev;
  return make_blobs(cfg);
}

inline Batch batch_of(const std::vector<SampleRecord>& records) {
  Batch b;
  b.x.resize(static_cast<Eigen::Index>(records.front().features.size()),
             static_cast<Eigen::Index>(records.size()));
  for (std::size_t j = 0; j < records.size(); ++j) {
    for (std::size_t i = 0; i < records[j].features.size(); ++i) {
      b.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = records[j].features[i];
    }
    b.y.push_back(records[j].true_label.value_or(0));
  }
  return b;
}

/// Training accuracy of plain multinomial logistic regression fit by full-batch gradient
/// descent on the raw features.
inline double softmax_regression_accuracy(const Batch& b, int classes, int iterations = 500,
                                          double lr = 0.1) {
  const auto d = b.x.rows();
  const auto n = b.x.cols();
  Matrix w = Matrix::Zero(classes, d);
  Vector bias = Vector::Zero(classes);
  for (int it = 0; it < iterations; ++it) {
    Matrix logits = (w * b.x).colwise() + bias;
    for (Eigen::Index j = 0; j < n; ++j) {
      const double m = logits.col(j).maxCoeff();
      logits.col(j) = (logits.col(j).array() - m).exp();
      logits.col(j) /= logits.col(j).sum();
      logits(b.y[static_cast<std::size_t>(j)], j) -= 1.0;
    }
    w -= lr / n * logits * b.x.transpose();
    bias -= lr / n * logits.rowwise().sum();
  }
  const Matrix logits = (w * b.x).colwise() + bias;
  int correct = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    Eigen::Index best;
    logits.col(j).maxCoeff(&best);
    if (best == b.y[static_cast<std::size_t>(j)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

/// Inverse-CDF Weibull draws.
inline std::vector<double> weibull_draws(double shape, double scale, std::size_t n,
                                         std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> out(n);
  for (auto& x : out) x = scale * std::pow(-std::log1p(-u(rng)), 1.0 / shape);
  return out;
}

/// Weibull MLE by maximizing the profile log-likelihood over the shape: a log-spaced grid
/// followed by golden-section refinement. Returns {shape, scale}.
inline std::pair<double, double> weibull_grid_mle(const std::vector<double>& x) {
  const double n = static_cast<double>(x.size());
  double sum_log = 0.0;
  for (double v : x) sum_log += std::log(v);
  auto mean_pow = [&](double k) {
    double s = 0.0;
    for (double v : x) s += std::pow(v, k);
    return s / n;
  };
  auto profile = [&](double k) {
    return n * std::log(k) - n * std::log(mean_pow(k)) + (k - 1.0) * sum_log;
  };
  double best_k = 0.01, best = -INFINITY;
  for (int i = 0; i <= 2000; ++i) {
    const double k = std::exp(std::log(0.01) + i * (std::log(100.0) - std::log(0.01)) / 2000);
    const double v = profile(k);
    if (v > best) {
      best = v;
      best_k = k;
    }
  }
  double a = best_k * 0.99, b = best_k * 1.01;
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int i = 0; i < 200; ++i) {
    const double c = b - g * (b - a), d = a + g * (b - a);
    if (profile(c) > profile(d)) b = d; else a = c;
  }
  const double k = 0.5 * (a + b);
  return {k, std::pow(mean_pow(k), 1.0 / k)};
}

/// Model whose posterior mean is the input (z_dim == input dim, no trunk) and whose
/// classifier has the given weights (C x z_dim) and zero bias.
inline VnnModel identity_encoder_model(int dim, const Matrix& classifier_weights) {
  ModelSpec spec;
  spec.input_shape = {1, 1, dim};
  spec.z_dim = dim;
  spec.num_classes = static_cast<int>(classifier_weights.rows());
  spec.encoder.hidden = {};
  auto model = VnnModel::zeros(spec);
  auto& p = model.parameters();
  const auto& head = model.mean_head();
  Eigen::Map<Matrix>(p.data() + head.offset, head.out, head.in) = Matrix::Identity(dim, dim);
  const auto& cls = model.classifier();
  Eigen::Map<Matrix>(p.data() + cls.offset, cls.out, cls.in) = classifier_weights;
  return model;
}

inline std::vector<const SampleRecord*> pointers(const std::vector<SampleRecord>& records) {
  std::vector<const SampleRecord*> out;
  for (const auto& r : records) out.push_back(&r);
  return out;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() /
             ("osal_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace osal::testing
