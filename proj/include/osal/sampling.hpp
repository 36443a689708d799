#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "osal/datapool.hpp"
#include "osal/types.hpp"
#include "osal/vnn.hpp"

namespace osal {

enum class Strategy { uncertainty, weibull, random };
std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& text);

struct UncertaintyScore {
  SampleId id;
  double max_class_probability = 0.0;
};

struct WeibullFit {
  double shape = 0.0;
  double scale = 0.0;
  std::size_t tail_size = 0;
  int iterations = 0;
};

struct WeibullOptions {
  int max_iterations = 200;
  double tolerance = 1e-8;
};

struct WeibullClassModel {
  ClassIndex class_index = 0;
  Vector latent_mean;
  double shape = 0.0;
  double scale = 0.0;
  std::size_t tail_size = 0;
  std::size_t n_correct = 0;
};

struct SelectionResult {
  std::vector<SampleId> selected_ids;
  std::map<SampleId, double> scores;
  std::vector<SampleId> rejected_ood_ids;
  bool shortfall = false;
};

/// Max class probability of the classifier at the posterior mean, one per record.
std::vector<UncertaintyScore> uncertainty_scores(const VnnModel& model,
                                                 std::span<const SampleRecord* const> records);

/// The `b` lowest scores, ascending, ties by ascending id.
SelectionResult select_uncertain(std::span<const UncertaintyScore> scores, std::size_t b);

struct ClassLatentStats {
  Vector mean;
  std::vector<SampleId> correct_ids;
  Matrix latents;  // z_dim x n_correct posterior means
};

/// Per-class mean posterior mean over correctly classified labeled samples. Classes without
/// a correct sample are absent.
std::map<ClassIndex, ClassLatentStats> class_latent_means(
    const VnnModel& model, std::span<const SampleRecord* const> labeled,
    std::span<const ClassIndex> labels);

/// Maximum-likelihood Weibull fit to the largest ceil(tail_fraction * n) distances.
WeibullFit fit_weibull(std::span<const double> distances, double tail_fraction,
                       const WeibullOptions& options = {});

double weibull_cdf(double x, double shape, double scale);

/// min over classes of the Weibull CDF of the distance to that class mean.
double outlier_probability(const Vector& z, const std::map<ClassIndex, WeibullClassModel>& models);

/// Fits one model per class that has at least 8 correct samples. The tail is widened to
/// 8 samples for classes too small for `tail_fraction`.
std::map<ClassIndex, WeibullClassModel> fit_class_models(
    const VnnModel& model, std::span<const SampleRecord* const> labeled,
    std::span<const ClassIndex> labels, double tail_fraction,
    const WeibullOptions& options = {});

/// Outlier probabilities >= `reject_threshold` are rejected; the remaining `b` highest
/// outlier probabilities are selected (ties by ascending id).
SelectionResult select_weibull(const VnnModel& model, std::span<const SampleRecord* const> unlabeled,
                               std::span<const SampleRecord* const> labeled,
                               std::span<const ClassIndex> labels, std::size_t b,
                               double tail_fraction, double reject_threshold);

/// Uniform draw without replacement.
SelectionResult random_select(std::span<const SampleId> unlabeled, std::size_t b,
                              std::uint64_t seed);

/// Columns: stage,sample_id,strategy,score,selected,rejected_ood. Rows in ascending id order.
void write_selection_csv(std::ostream& out, int stage, Strategy strategy,
                         const SelectionResult& result, bool header);

}  // namespace osal
