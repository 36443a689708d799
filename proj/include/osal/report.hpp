#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "osal/alloop.hpp"
#include "osal/config.hpp"
#include "osal/sampling.hpp"
#include "osal/vnn.hpp"

namespace osal {

struct TimingResult {
  Strategy strategy = Strategy::uncertainty;
  std::size_t pool_size = 0;
  std::vector<double> seconds;  // one per timed repetition
  double mean_seconds = 0.0;
  double std_seconds = 0.0;  // sample standard deviation
};

/// Wall-clock time of full scoring + selection passes over `unlabeled`. One untimed warm-up
/// pass precedes `repetitions` (>= 3) timed ones.
TimingResult time_sampling(Strategy strategy, const VnnModel& model,
                           std::span<const SampleRecord* const> unlabeled,
                           std::span<const SampleRecord* const> labeled,
                           std::span<const ClassIndex> labels, std::size_t budget,
                           int repetitions, const SamplingSpec& sampling = {},
                           std::uint64_t seed = 0);

/// Trains the configured model on L^0 for `seed`, then times each strategy on a pool of
/// `pool_size` unlabeled records. Records are reused under fresh ids when the dataset has
/// fewer unlabeled samples than requested.
std::vector<TimingResult> bench_sampling(const ExperimentConfig& config, std::size_t pool_size,
                                         int repetitions, const std::vector<Strategy>& strategies,
                                         std::uint64_t seed = 0);

std::string timing_csv(const std::vector<TimingResult>& timings);

/// Accuracy against labeled-pool size for one configuration, averaged over seeds.
struct CurveSet {
  std::string label;
  std::string strategy;
  std::string variant;
  std::string optimizer;
  std::vector<double> labeled;   // mean labeled count per stage
  std::vector<double> fraction;  // labeled / N
  std::vector<double> y_mean;
  std::vector<double> y_std;
  std::size_t n_seeds = 0;
  bool single_run = false;  // drawn without an error band
};

/// Throws AggregationError when the aggregate is empty or breaks the curve invariants.
CurveSet curve_from_aggregate(const Aggregate& aggregate, const std::string& label = {});
/// Loads every seed_* run below `experiment_dir` and aggregates them.
CurveSet load_curve(const std::filesystem::path& experiment_dir, const std::string& label = {});

/// Indices of `curves` by final mean accuracy, descending; ties keep input order.
std::vector<std::size_t> legend_order(const std::vector<CurveSet>& curves);

/// Columns: strategy,variant,optimizer,stage,labeled_count,labeled_fraction,acc_mean,acc_std,n_seeds
std::string curves_csv(const std::vector<CurveSet>& curves);
std::string render_svg(const std::vector<CurveSet>& curves, const std::string& title);

/// Writes <name>.csv (all curves), one <name>_<label>.csv per curve and <name>.svg.
void emit_curves(const std::vector<CurveSet>& curves, const std::filesystem::path& out_dir,
                 const std::string& name, bool with_plot = true);

}  // namespace osal
