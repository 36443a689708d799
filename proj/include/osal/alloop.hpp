#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "osal/config.hpp"
#include "osal/datapool.hpp"
#include "osal/oracle.hpp"
#include "osal/sampling.hpp"
#include "osal/vnn.hpp"

namespace osal {

/// One row of a run: the model trained on L^t, its accuracy, and what the acquisition that
/// followed did. Acquisition fields are zero on the final stage.
struct StageRecord {
  int stage = 0;
  std::size_t labeled = 0;
  double accuracy = 0.0;
  double sampling_seconds = 0.0;
  std::size_t budget = 0;
  std::size_t selected = 0;
  std::size_t promoted = 0;
  std::size_t rejected_ood = 0;    // answered reject_ood by the oracle
  std::size_t filtered_ood = 0;    // withheld by the Weibull threshold, never queried
  std::size_t pending = 0;         // unanswered at the oracle deadline
  std::size_t foreign_selected = 0;
  std::size_t excluded_class_selected = 0;  // selections from classes kept out of L^0
  std::vector<double> epoch_loss;

  bool operator==(const StageRecord&) const = default;
};

struct RunResult {
  std::uint64_t seed = 0;
  std::size_t train_size = 0;  // N, for labeled fractions
  std::string config_json;  // snapshot with `seeds` reduced to this run's seed
  std::vector<StageRecord> stages;
  bool complete = false;
};

/// Mutable state of one run between stages.
struct RunState {
  VnnModel model;
  PoolState pool;
  RecordStore records;
  std::vector<SampleRecord> foreign_records;
  std::size_t initial_total = 0;  // |L^0| + |U^0| including mixed-in foreign records
};

using OracleFactory =
    std::function<std::unique_ptr<Oracle>(const RunState&, const Dataset&, std::uint64_t seed)>;

/// Simulated oracle from the config, or a HumanOracle when oracle.kind is human.
std::unique_ptr<Oracle> make_oracle(const ExperimentConfig& config, const RunState& state,
                                    const Dataset& dataset, std::uint64_t seed,
                                    const std::string& run_id);

/// Resolved cumulative labeled-pool targets; throws ConfigError when the final target
/// exceeds floor(max_labeled_fraction * N).
std::vector<std::size_t> stage_targets(const ExperimentConfig& config, std::size_t n);

/// Builds L^0 (biased when classes are excluded), mixes in foreign samples and creates the
/// initial model.
RunState initial_state(const ExperimentConfig& config, const Dataset& dataset,
                       const Dataset* foreign, std::uint64_t seed);

/// Trains on L^t and evaluates. When `budget` is non-zero, selects, queries and promotes.
StageRecord run_stage(RunState& state, const ExperimentConfig& config, const Dataset& dataset,
                      Oracle& oracle, std::size_t budget, std::uint64_t seed,
                      std::ostream* acquisitions = nullptr);

struct RunOptions {
  std::optional<std::filesystem::path> run_dir;  // persist and resume when set
  OracleFactory oracle_factory;                  // defaults to make_oracle
};

/// Runs every stage of the schedule for one seed. With a run directory, a previous partial
/// run is resumed from its last complete stage and a finished one is returned as is.
RunResult run_experiment(const ExperimentConfig& config, const Dataset& dataset,
                         const Dataset* foreign, std::uint64_t seed, const RunOptions& options = {});
/// Loads the datasets named by the config.
RunResult run_experiment(const ExperimentConfig& config, std::uint64_t seed,
                         const RunOptions& options = {});

struct AggregateStage {
  int stage = 0;
  double labeled_mean = 0.0;
  double accuracy_mean = 0.0;
  double accuracy_std = 0.0;  // sample standard deviation; 0 for a single run
  std::size_t runs = 0;
};

struct Aggregate {
  std::string config_json;  // shared snapshot with seeds removed
  std::vector<std::uint64_t> seeds;
  std::size_t train_size = 0;
  std::vector<AggregateStage> stages;
  bool single_run = false;
};

/// Requires matching configs (modulo seed) and stage counts; throws AggregationError.
Aggregate aggregate_runs(const std::vector<RunResult>& results);

/// Runs each seed into root/seed_<s>, then writes root/aggregate.csv.
Aggregate run_seeds(const ExperimentConfig& config, const std::filesystem::path& root,
                    const std::vector<std::uint64_t>& seeds, const OracleFactory& factory = {});

// Run directory helpers.
bool run_is_complete(const std::filesystem::path& run_dir);
RunResult load_run_result(const std::filesystem::path& run_dir);
std::filesystem::path seed_dir(const std::filesystem::path& root, std::uint64_t seed);
void write_aggregate_csv(const std::filesystem::path& path, const Aggregate& aggregate);
std::string stages_csv(const RunResult& result);
/// stage,labeled,accuracy only; identical across replays of the same (config, seed).
std::string accuracy_csv(const RunResult& result);

}  // namespace osal
