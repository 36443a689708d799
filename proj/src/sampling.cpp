#include <algorithm>
#include <cmath>
#include <numeric>

#include "osal/errors.hpp"
#include "osal/rng.hpp"
#include "osal/sampling.hpp"

namespace osal {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::uncertainty: return "uncertainty";
    case Strategy::weibull: return "weibull";
    case Strategy::random: return "random";
  }
  return "?";
}

Strategy parse_strategy(const std::string& text) {
  if (text == "uncertainty") return Strategy::uncertainty;
  if (text == "weibull") return Strategy::weibull;
  if (text == "random") return Strategy::random;
  throw ConfigError("unknown strategy '" + text + "' (expected uncertainty, weibull or random)");
}

std::vector<UncertaintyScore> uncertainty_scores(const VnnModel& model,
                                                 std::span<const SampleRecord* const> records) {
  if (records.empty()) throw EmptyPoolError("no unlabeled samples to score");
  const Matrix probs = softmax_columns(model.classifier_logits(posterior_means(model, records)));
  std::vector<UncertaintyScore> out(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    out[i] = {records[i]->id, probs.col(static_cast<Eigen::Index>(i)).maxCoeff()};
  }
  return out;
}

SelectionResult select_uncertain(std::span<const UncertaintyScore> scores, std::size_t b) {
  if (b > scores.size()) {
    throw BudgetError("budget " + std::to_string(b) + " exceeds pool of " +
                      std::to_string(scores.size()));
  }
  std::vector<UncertaintyScore> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& c) {
    if (a.max_class_probability != c.max_class_probability) {
      return a.max_class_probability < c.max_class_probability;
    }
    return a.id < c.id;
  });
  SelectionResult r;
  for (const auto& s : scores) {
    if (!r.scores.emplace(s.id, s.max_class_probability).second) {
      throw PoolMembershipError("duplicate id " + std::to_string(s.id.value) + " in scores");
    }
  }
  for (std::size_t i = 0; i < b; ++i) r.selected_ids.push_back(sorted[i].id);
  return r;
}

std::map<ClassIndex, ClassLatentStats> class_latent_means(
    const VnnModel& model, std::span<const SampleRecord* const> labeled,
    std::span<const ClassIndex> labels) {
  if (labeled.empty()) throw EmptyPoolError("labeled pool is empty");
  if (labeled.size() != labels.size()) throw ShapeError("labels do not match labeled records");
  const Matrix means = posterior_means(model, labeled);
  const Matrix logits = model.classifier_logits(means);
  std::map<ClassIndex, std::vector<Eigen::Index>> members;
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    const auto col = static_cast<Eigen::Index>(i);
    if (argmax(logits.col(col)) == labels[i]) members[labels[i]].push_back(col);
  }
  if (members.empty()) throw DegenerateStatsError("no labeled sample is classified correctly");
  std::map<ClassIndex, ClassLatentStats> out;
  for (const auto& [c, cols] : members) {
    ClassLatentStats s;
    s.latents.resize(means.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) {
      s.latents.col(static_cast<Eigen::Index>(j)) = means.col(cols[j]);
      s.correct_ids.push_back(labeled[static_cast<std::size_t>(cols[j])]->id);
    }
    s.mean = s.latents.rowwise().mean();
    out.emplace(c, std::move(s));
  }
  return out;
}

std::map<ClassIndex, WeibullClassModel> fit_class_models(
    const VnnModel& model, std::span<const SampleRecord* const> labeled,
    std::span<const ClassIndex> labels, double tail_fraction, const WeibullOptions& options) {
  constexpr std::size_t kMinTail = 8;
  std::map<ClassIndex, WeibullClassModel> models;
  for (auto& [c, stats] : class_latent_means(model, labeled, labels)) {
    const std::size_t n = stats.correct_ids.size();
    if (n < kMinTail) continue;
    std::vector<double> d(n);
    for (std::size_t j = 0; j < n; ++j) {
      d[j] = (stats.latents.col(static_cast<Eigen::Index>(j)) - stats.mean).norm();
    }
    const double fraction = std::max(tail_fraction, static_cast<double>(kMinTail) / n);
    WeibullFit fit;
    try {
      fit = fit_weibull(d, std::min(1.0, fraction), options);
    } catch (const DegenerateStatsError&) {
      continue;
    }
    models[c] = {c, stats.mean, fit.shape, fit.scale, fit.tail_size, n};
  }
  if (models.empty()) {
    throw DegenerateStatsError("no class has enough correctly classified samples for a Weibull fit");
  }
  return models;
}

SelectionResult select_weibull(const VnnModel& model, std::span<const SampleRecord* const> unlabeled,
                               std::span<const SampleRecord* const> labeled,
                               std::span<const ClassIndex> labels, std::size_t b,
                               double tail_fraction, double reject_threshold) {
  if (unlabeled.empty()) throw EmptyPoolError("no unlabeled samples to score");
  if (b > unlabeled.size()) {
    throw BudgetError("budget " + std::to_string(b) + " exceeds pool of " +
                      std::to_string(unlabeled.size()));
  }
  if (!(reject_threshold > 0.0 && reject_threshold <= 1.0)) {
    throw ContractError("reject threshold must lie in (0, 1]");
  }
  const auto models = fit_class_models(model, labeled, labels, tail_fraction);
  const Matrix z = posterior_means(model, unlabeled);

  SelectionResult r;
  std::vector<std::pair<double, SampleId>> kept;
  for (std::size_t i = 0; i < unlabeled.size(); ++i) {
    const double p = outlier_probability(z.col(static_cast<Eigen::Index>(i)), models);
    const SampleId id = unlabeled[i]->id;
    if (!r.scores.emplace(id, p).second) {
      throw PoolMembershipError("duplicate id " + std::to_string(id.value) + " in pool");
    }
    // A threshold of 1 disables rejection.
    if (reject_threshold < 1.0 && p >= reject_threshold) {
      r.rejected_ood_ids.push_back(id);
    } else {
      kept.emplace_back(p, id);
    }
  }
  std::sort(r.rejected_ood_ids.begin(), r.rejected_ood_ids.end());
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& c) {
    if (a.first != c.first) return a.first > c.first;
    return a.second < c.second;
  });
  const std::size_t take = std::min(b, kept.size());
  r.shortfall = take < b;
  for (std::size_t i = 0; i < take; ++i) r.selected_ids.push_back(kept[i].second);
  return r;
}

SelectionResult random_select(std::span<const SampleId> unlabeled, std::size_t b,
                              std::uint64_t seed) {
  if (b > unlabeled.size()) {
    throw BudgetError("budget " + std::to_string(b) + " exceeds pool of " +
                      std::to_string(unlabeled.size()));
  }
  std::vector<SampleId> ids(unlabeled.begin(), unlabeled.end());
  Rng rng(seed);
  partial_shuffle(ids, b, rng);
  SelectionResult r;
  r.selected_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(b));
  return r;
}

void write_selection_csv(std::ostream& out, int stage, Strategy strategy,
                         const SelectionResult& result, bool header) {
  if (header) out << "stage,sample_id,strategy,score,selected,rejected_ood\n";
  std::map<SampleId, std::pair<bool, bool>> rows;
  for (const auto& [id, s] : result.scores) rows[id];
  for (auto id : result.selected_ids) rows[id].first = true;
  for (auto id : result.rejected_ood_ids) rows[id].second = true;
  const auto old_precision = out.precision(10);
  for (const auto& [id, flags] : rows) {
    out << stage << ',' << id.value << ',' << to_string(strategy) << ',';
    if (auto it = result.scores.find(id); it != result.scores.end()) out << it->second;
    out << ',' << (flags.first ? 1 : 0) << ',' << (flags.second ? 1 : 0) << '\n';
  }
  out.precision(old_precision);
}

}  // namespace osal
