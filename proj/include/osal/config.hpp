#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "osal/datapool.hpp"
#include "osal/oracle.hpp"
#include "osal/sampling.hpp"
#include "osal/vnn.hpp"

namespace osal {

/// Either a path (idx directory, CIFAR directory, blob config file) or inline blob settings.
struct DatasetSpec {
  DatasetFormat format = DatasetFormat::synthetic_blobs;
  std::filesystem::path path;
  std::optional<BlobConfig> blobs;
};

Dataset load_dataset(const DatasetSpec& spec);

/// Cumulative labeled-pool targets, one per stage. Entry 0 is the size of L^0.
struct BudgetSpec {
  enum class Unit { count, percent };
  Unit unit = Unit::count;
  std::vector<double> schedule = {100, 200, 300, 400, 500, 600};

  /// Resolves to absolute counts for a training pool of `n` samples.
  std::vector<std::size_t> resolve(std::size_t n) const;
};

struct OracleSpec {
  OracleKind kind = OracleKind::clean;
  double noise_rate = 0.0;
  std::map<ClassIndex, int> superclass_map;  // overrides the dataset's map when set
  std::string url;                            // human oracle service
  double timeout_seconds = 600.0;
  double poll_seconds = 0.5;
};

struct OodSpec {
  DatasetSpec dataset;
  double fraction = 0.2;
};

struct SamplingSpec {
  double tail_fraction = 0.25;
  double reject_threshold = 1.0;
};

struct ExperimentConfig {
  std::string name = "experiment";
  DatasetSpec dataset;
  Variant variant = Variant::m1;
  Strategy strategy = Strategy::uncertainty;
  EncoderSpec encoder;
  int z_dim = 60;
  std::vector<int> decoder_hidden = {256};
  BudgetSpec budget;
  double max_labeled_fraction = 0.4;
  TrainConfig train;
  LossConfig loss;
  OracleSpec oracle;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::set<ClassIndex> excluded_initial_classes;  // biased L^0 when non-empty
  std::optional<OodSpec> ood;
  SamplingSpec sampling;
  bool warm_start = true;
  bool save_checkpoints = true;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Parses a JSON config. Unknown keys are errors. Relative paths resolve against `base_dir`.
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides = {});
/// Applies dotted `key=value` overrides to a JSON document before parsing. Values that parse
/// as JSON are used as such, anything else as a string. `KEY=null` removes the key.
std::string apply_overrides(const std::string& text, const std::vector<std::string>& overrides);
std::string config_to_json(const ExperimentConfig& config);

}  // namespace osal
