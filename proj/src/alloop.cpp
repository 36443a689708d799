#include "osal/alloop.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "json.hpp"

#include "osal/binary_io.hpp"
#include "osal/errors.hpp"
#include "osal/rng.hpp"

namespace osal {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Stream tags for derive_seed. Each random decision of a run draws from its own stream so
// that resuming at any stage replays the same numbers.
constexpr std::uint64_t kSplitTag = 1;
constexpr std::uint64_t kInitTag = 10;
constexpr std::uint64_t kTrainTag = 100;
constexpr std::uint64_t kRandomTag = 200;
constexpr std::uint64_t kNoiseTag = 300;
constexpr std::uint64_t kMixTag = 400;

ModelSpec model_spec(const ExperimentConfig& config, const Dataset& dataset) {
  ModelSpec spec;
  spec.input_shape = dataset.shape;
  spec.z_dim = config.z_dim;
  spec.num_classes = dataset.num_classes;
  spec.variant = config.variant;
  spec.encoder = config.encoder;
  spec.decoder_hidden = config.decoder_hidden;
  return spec;
}

VnnModel fresh_model(const ExperimentConfig& config, const Dataset& dataset, std::uint64_t seed) {
  Rng rng(derive_seed(seed, kInitTag));
  auto model = VnnModel::create(model_spec(config, dataset), rng);
  model.quantize_to_f32();
  return model;
}

std::string snapshot(const ExperimentConfig& config, std::uint64_t seed) {
  auto copy = config;
  copy.seeds = {seed};
  return config_to_json(copy);
}

std::string without_seeds(const std::string& config_json) {
  auto j = json::parse(config_json);
  j.erase("seeds");
  return j.dump(2) + "\n";
}

std::string stage_name(int t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "stage_%03d", t);
  return buf;
}

json record_to_json(const StageRecord& r) {
  return {{"stage", r.stage},
          {"labeled", r.labeled},
          {"accuracy", r.accuracy},
          {"sampling_seconds", r.sampling_seconds},
          {"budget", r.budget},
          {"selected", r.selected},
          {"promoted", r.promoted},
          {"rejected_ood", r.rejected_ood},
          {"filtered_ood", r.filtered_ood},
          {"pending", r.pending},
          {"foreign_selected", r.foreign_selected},
          {"excluded_class_selected", r.excluded_class_selected},
          {"epoch_loss", r.epoch_loss}};
}

StageRecord record_from_json(const json& j) {
  StageRecord r;
  r.stage = j.at("stage").get<int>();
  r.labeled = j.at("labeled").get<std::size_t>();
  r.accuracy = j.at("accuracy").get<double>();
  r.sampling_seconds = j.at("sampling_seconds").get<double>();
  r.budget = j.at("budget").get<std::size_t>();
  r.selected = j.at("selected").get<std::size_t>();
  r.promoted = j.at("promoted").get<std::size_t>();
  r.rejected_ood = j.at("rejected_ood").get<std::size_t>();
  r.filtered_ood = j.at("filtered_ood").get<std::size_t>();
  r.pending = j.at("pending").get<std::size_t>();
  r.foreign_selected = j.at("foreign_selected").get<std::size_t>();
  r.excluded_class_selected = j.at("excluded_class_selected").get<std::size_t>();
  r.epoch_loss = j.at("epoch_loss").get<std::vector<double>>();
  return r;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<ClassIndex> labels_of(const PoolState& pool) {
  std::vector<ClassIndex> labels;
  labels.reserve(pool.labeled_size());
  for (auto id : pool.labeled_ids()) labels.push_back(pool.oracle_labels().at(id));
  return labels;
}

struct RunDirectory {
  fs::path root;

  void write_manifest(std::uint64_t seed, std::size_t train_size, const std::string& status,
                      std::size_t initial_total,
                      int stages_completed, const std::vector<std::size_t>& targets,
                      const std::string& error = {}) const {
    json j = {{"seed", seed},
              {"train_size", train_size},
              {"status", status},
              {"initial_total", initial_total},
              {"stages_completed", stages_completed},
              {"targets", targets},
              {"determinism",
               "single-threaded Eigen; results are bit-identical for the same build and CPU"}};
    if (!error.empty()) j["error"] = error;
    write_text_atomic(root / "manifest.json", j.dump(2) + "\n");
  }

  void write_tables(const RunResult& result) const {
    write_text_atomic(root / "stages.csv", stages_csv(result));
    write_text_atomic(root / "accuracy.csv", accuracy_csv(result));
    std::ostringstream acq;
    write_selection_csv(acq, 0, Strategy::random, SelectionResult{}, true);
    for (const auto& r : result.stages) {
      const auto part = root / stage_name(r.stage) / "acquisitions.csv";
      if (fs::exists(part)) acq << read_text(part);
    }
    write_text_atomic(root / "acquisitions.csv", acq.str());
  }
};

}  // namespace

std::vector<std::size_t> stage_targets(const ExperimentConfig& config, std::size_t n) {
  auto targets = config.budget.resolve(n);
  const auto cap = static_cast<std::size_t>(std::floor(config.max_labeled_fraction * static_cast<double>(n)));
  if (targets.back() > cap) {
    throw ConfigError("field 'budget.schedule': final target " + std::to_string(targets.back()) +
                      " exceeds max_labeled_fraction * N = " + std::to_string(cap));
  }
  return targets;
}

std::unique_ptr<Oracle> make_oracle(const ExperimentConfig& config, const RunState& state,
                                    const Dataset& dataset, std::uint64_t seed,
                                    const std::string& run_id) {
  const auto& o = config.oracle;
  switch (o.kind) {
    case OracleKind::clean:
    case OracleKind::ood:
      return std::make_unique<SimulatedOracle>(state.records);
    case OracleKind::noisy: {
      NoiseSpec noise;
      noise.rate = o.noise_rate;
      noise.seed = derive_seed(seed, kNoiseTag);
      noise.num_classes = dataset.num_classes;
      if (!o.superclass_map.empty()) {
        noise.superclass_map = o.superclass_map;
      } else if (dataset.superclass_map) {
        noise.superclass_map = *dataset.superclass_map;
      }
      return std::make_unique<SimulatedOracle>(state.records, noise);
    }
    case OracleKind::human: {
      if (o.url.empty()) {
        throw ConfigError("field 'oracle.url': required for the human oracle (or set OSAL_ORACLE_URL)");
      }
      using ms = std::chrono::milliseconds;
      return std::make_unique<HumanOracle>(o.url, run_id, state.records, dataset.shape,
                                           dataset.num_classes,
                                           ms(static_cast<long>(o.timeout_seconds * 1000)),
                                           ms(static_cast<long>(o.poll_seconds * 1000)));
    }
  }
  throw ContractError("unhandled oracle kind");
}

RunState initial_state(const ExperimentConfig& config, const Dataset& dataset,
                       const Dataset* foreign, std::uint64_t seed) {
  const auto targets = stage_targets(config, dataset.train_size());
  RunState state;
  const auto split_seed = derive_seed(seed, kSplitTag);
  state.pool = config.excluded_initial_classes.empty()
                   ? split_initial(dataset, targets.front(), split_seed)
                   : make_biased_pool(dataset, config.excluded_initial_classes, targets.front(), split_seed);
  state.records = RecordStore(dataset);
  if (config.ood) {
    if (foreign == nullptr) throw ContractError("config mixes in foreign samples but none were given");
    auto mixed = mix_ood(state.pool, dataset, *foreign, config.ood->fraction, derive_seed(seed, kMixTag));
    state.pool = std::move(mixed.pool);
    state.foreign_records = std::move(mixed.foreign_records);
    state.records.add_all(state.foreign_records);
  }
  state.initial_total = state.pool.total_size();
  state.model = fresh_model(config, dataset, seed);
  return state;
}

StageRecord run_stage(RunState& state, const ExperimentConfig& config, const Dataset& dataset,
                      Oracle& oracle, std::size_t budget, std::uint64_t seed,
                      std::ostream* acquisitions) {
  const int t = state.pool.stage();
  if (budget > 0 && state.pool.unlabeled_size() == 0) throw PoolExhausted("unlabeled pool is empty");

  StageRecord record;
  record.stage = t;
  record.labeled = state.pool.labeled_size();

  const auto labeled = state.records.lookup(state.pool.labeled_ids());
  const auto labels = labels_of(state.pool);
  if (!config.warm_start) state.model = fresh_model(config, dataset, seed);
  {
    Rng rng(derive_seed(seed, kTrainTag + static_cast<std::uint64_t>(t)));
    const auto batch = make_batch(labeled, labels);
    record.epoch_loss = train_stage(state.model, batch, config.train, config.loss, rng).epoch_loss;
    state.model.quantize_to_f32();
  }
  record.accuracy = evaluate(state.model, std::span<const SampleRecord>(dataset.eval_records));
  if (budget == 0) return record;

  const std::size_t b = std::min(budget, state.pool.unlabeled_size());
  record.budget = b;
  SelectionResult selection;
  const auto start = std::chrono::steady_clock::now();
  switch (config.strategy) {
    case Strategy::uncertainty: {
      const auto unlabeled = state.records.lookup(state.pool.unlabeled_ids());
      const auto scores = uncertainty_scores(state.model, unlabeled);
      selection = select_uncertain(scores, b);
      break;
    }
    case Strategy::weibull: {
      const auto unlabeled = state.records.lookup(state.pool.unlabeled_ids());
      selection = select_weibull(state.model, unlabeled, labeled, labels, b,
                                 config.sampling.tail_fraction, config.sampling.reject_threshold);
      break;
    }
    case Strategy::random:
      selection = random_select(state.pool.unlabeled_ids(), b,
                                derive_seed(seed, kRandomTag + static_cast<std::uint64_t>(t)));
      break;
  }
  record.sampling_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (acquisitions != nullptr) write_selection_csv(*acquisitions, t, config.strategy, selection, false);

  record.selected = selection.selected_ids.size();
  record.filtered_ood = selection.rejected_ood_ids.size();
  for (auto id : selection.selected_ids) {
    const auto& r = state.records.at(id);
    if (r.origin.is_foreign()) ++record.foreign_selected;
    if (r.true_label && config.excluded_initial_classes.contains(*r.true_label)) {
      ++record.excluded_class_selected;
    }
  }

  const auto responses = oracle.query(selection.selected_ids, t);
  if (responses.size() != selection.selected_ids.size()) {
    throw ContractError("oracle answered " + std::to_string(responses.size()) + " of " +
                        std::to_string(selection.selected_ids.size()) + " queries");
  }
  std::vector<std::pair<SampleId, ClassIndex>> annotated;
  for (std::size_t i = 0; i < responses.size(); ++i) {
    const auto& r = responses[i];
    if (r.id != selection.selected_ids[i]) throw ContractError("oracle responses out of order");
    switch (r.outcome) {
      case OracleResponse::Outcome::label:
        if (r.label < 0 || r.label >= dataset.num_classes) {
          throw LabelRangeError("oracle label " + std::to_string(r.label) + " for sample " +
                                std::to_string(r.id.value));
        }
        annotated.emplace_back(r.id, r.label);
        break;
      case OracleResponse::Outcome::reject_ood: ++record.rejected_ood; break;
      case OracleResponse::Outcome::pending: ++record.pending; break;
    }
  }
  // Rejected and unanswered samples never left U; their share of the budget is spent.
  state.pool = promote(state.pool, annotated);
  state.pool.add_discarded_ood(record.rejected_ood);
  record.promoted = annotated.size();

  state.pool.check_invariants();
  if (state.pool.total_size() != state.initial_total) {
    throw ContractError("pool conservation violated: " + std::to_string(state.pool.total_size()) +
                        " != " + std::to_string(state.initial_total));
  }
  return record;
}

RunResult run_experiment(const ExperimentConfig& config, const Dataset& dataset,
                         const Dataset* foreign, std::uint64_t seed, const RunOptions& options) {
  config.validate();
  const auto targets = stage_targets(config, dataset.train_size());
  RunResult result;
  result.seed = seed;
  result.train_size = dataset.train_size();
  result.config_json = snapshot(config, seed);

  std::optional<RunDirectory> dir;
  if (options.run_dir) dir = RunDirectory{*options.run_dir};

  std::optional<RunState> state;
  if (dir && fs::exists(dir->root / "manifest.json")) {
    const auto stored = read_text(dir->root / "config.json");
    if (stored != result.config_json) {
      throw ConfigError("run directory " + dir->root.string() + " holds a different configuration");
    }
    auto previous = load_run_result(dir->root);
    if (previous.complete) {
      spdlog::info("run {} already complete", dir->root.string());
      return previous;
    }
    // Resume from the newest stage whose checkpoints were written.
    while (!previous.stages.empty()) {
      const auto last = dir->root / stage_name(previous.stages.back().stage);
      if (fs::exists(last / "model" / "model.json") && fs::exists(last / "pool" / "pool.json")) break;
      previous.stages.pop_back();
    }
    if (!previous.stages.empty()) {
      const auto last = dir->root / stage_name(previous.stages.back().stage);
      RunState s;
      s.model = load_model(last / "model").model;
      auto cp = load_pool_checkpoint(last / "pool");
      s.pool = std::move(cp.pool);
      s.foreign_records = std::move(cp.extra_records);
      s.records = RecordStore(dataset);
      s.records.add_all(s.foreign_records);
      const auto manifest = json::parse(read_text(dir->root / "manifest.json"));
      s.initial_total = manifest.at("initial_total").get<std::size_t>();
      state = std::move(s);
      result.stages = std::move(previous.stages);
      spdlog::info("resuming {} at stage {}", dir->root.string(), state->pool.stage());
    }
  }
  if (!state) state = initial_state(config, dataset, foreign, seed);
  if (dir) {
    fs::create_directories(dir->root);
    write_text_atomic(dir->root / "config.json", result.config_json);
    dir->write_manifest(seed, dataset.train_size(), "running", state->initial_total, static_cast<int>(result.stages.size()), targets);
  }

  const std::string run_id =
      config.name + "-seed" + std::to_string(seed);
  auto oracle = options.oracle_factory ? options.oracle_factory(*state, dataset, seed)
                                       : make_oracle(config, *state, dataset, seed, run_id);
  try {
    for (int t = state->pool.stage(); t < static_cast<int>(targets.size()); ++t) {
      std::size_t budget = t + 1 < static_cast<int>(targets.size()) ? targets[t + 1] - targets[t] : 0;
      const bool exhausted = budget > 0 && state->pool.unlabeled_size() == 0;
      if (exhausted) budget = 0;
      std::ostringstream acquisitions;
      auto record = run_stage(*state, config, dataset, *oracle, budget, seed, &acquisitions);
      if (budget == 0) state->pool.set_stage(t + 1);
      spdlog::info("seed {} stage {}: labeled {} accuracy {:.4f} promoted {} rejected {}", seed, t,
                   record.labeled, record.accuracy, record.promoted, record.rejected_ood);
      result.stages.push_back(record);
      if (dir) {
        const auto sd = dir->root / stage_name(t);
        fs::create_directories(sd);
        write_text_atomic(sd / "acquisitions.csv", acquisitions.str());
        if (config.save_checkpoints) {
          save_model(sd / "model", state->model);
          save_pool_checkpoint(sd / "pool", state->pool, state->foreign_records, {{"seed", seed}});
        }
        write_text_atomic(sd / "record.json", record_to_json(record).dump(1) + "\n");
        dir->write_tables(result);
        dir->write_manifest(seed, dataset.train_size(), "running", state->initial_total, t + 1, targets);
      }
      if (exhausted) {
        spdlog::info("seed {}: unlabeled pool exhausted after stage {}", seed, t);
        break;
      }
    }
  } catch (const std::exception& e) {
    if (dir) {
      dir->write_manifest(seed, dataset.train_size(), "failed", state->initial_total, static_cast<int>(result.stages.size()),
                          targets, e.what());
    }
    throw;
  }
  result.complete = true;
  if (dir) {
    dir->write_tables(result);
    dir->write_manifest(seed, dataset.train_size(), "complete", state->initial_total, static_cast<int>(result.stages.size()), targets);
  }
  return result;
}

RunResult run_experiment(const ExperimentConfig& config, std::uint64_t seed, const RunOptions& options) {
  const auto dataset = load_dataset(config.dataset);
  std::optional<Dataset> foreign;
  if (config.ood) foreign = load_dataset(config.ood->dataset);
  return run_experiment(config, dataset, foreign ? &*foreign : nullptr, seed, options);
}

Aggregate run_seeds(const ExperimentConfig& config, const fs::path& root,
                    const std::vector<std::uint64_t>& seeds, const OracleFactory& factory) {
  const auto dataset = load_dataset(config.dataset);
  std::optional<Dataset> foreign;
  if (config.ood) foreign = load_dataset(config.ood->dataset);
  std::vector<RunResult> results;
  for (auto seed : seeds) {
    RunOptions options{seed_dir(root, seed), factory};
    results.push_back(run_experiment(config, dataset, foreign ? &*foreign : nullptr, seed, options));
  }
  auto agg = aggregate_runs(results);
  write_aggregate_csv(root / "aggregate.csv", agg);
  return agg;
}

Aggregate aggregate_runs(const std::vector<RunResult>& results) {
  if (results.empty()) throw AggregationError("no runs to aggregate");
  Aggregate agg;
  agg.config_json = without_seeds(results.front().config_json);
  const auto n_stages = results.front().stages.size();
  for (const auto& r : results) {
    if (without_seeds(r.config_json) != agg.config_json) {
      throw AggregationError("run with seed " + std::to_string(r.seed) + " has a different configuration");
    }
    if (r.stages.size() != n_stages) {
      throw AggregationError("run with seed " + std::to_string(r.seed) + " has " +
                             std::to_string(r.stages.size()) + " stages, expected " +
                             std::to_string(n_stages));
    }
    agg.seeds.push_back(r.seed);
  }
  agg.single_run = results.size() == 1;
  agg.train_size = results.front().train_size;
  const double n = static_cast<double>(results.size());
  for (std::size_t s = 0; s < n_stages; ++s) {
    AggregateStage a;
    a.stage = results.front().stages[s].stage;
    a.runs = results.size();
    for (const auto& r : results) {
      a.accuracy_mean += r.stages[s].accuracy;
      a.labeled_mean += static_cast<double>(r.stages[s].labeled);
    }
    a.accuracy_mean /= n;
    a.labeled_mean /= n;
    if (results.size() > 1) {
      double ss = 0.0;
      for (const auto& r : results) ss += std::pow(r.stages[s].accuracy - a.accuracy_mean, 2);
      a.accuracy_std = std::sqrt(ss / (n - 1.0));
    }
    agg.stages.push_back(a);
  }
  return agg;
}

bool run_is_complete(const fs::path& run_dir) {
  const auto manifest = run_dir / "manifest.json";
  if (!fs::exists(manifest)) return false;
  try {
    return json::parse(read_text(manifest)).value("status", "") == "complete";
  } catch (const json::exception&) {
    return false;
  }
}

RunResult load_run_result(const fs::path& run_dir) {
  RunResult result;
  try {
    const auto manifest = json::parse(read_text(run_dir / "manifest.json"));
    result.seed = manifest.at("seed").get<std::uint64_t>();
    result.train_size = manifest.at("train_size").get<std::size_t>();
    result.complete = manifest.at("status").get<std::string>() == "complete";
    result.config_json = read_text(run_dir / "config.json");
    const auto done = manifest.at("stages_completed").get<int>();
    for (int t = 0; t < done; ++t) {
      const auto path = run_dir / stage_name(t) / "record.json";
      if (!fs::exists(path)) break;
      result.stages.push_back(record_from_json(json::parse(read_text(path))));
    }
  } catch (const json::exception& e) {
    throw FormatError(run_dir.string() + ": " + e.what());
  }
  return result;
}

fs::path seed_dir(const fs::path& root, std::uint64_t seed) { return root / ("seed_" + std::to_string(seed)); }

void write_aggregate_csv(const fs::path& path, const Aggregate& agg) {
  std::ostringstream out;
  out << "stage,labeled_mean,acc_mean,acc_std,n_seeds,single_run\n";
  for (const auto& s : agg.stages) {
    out << s.stage << ',' << format_double(s.labeled_mean) << ',' << format_double(s.accuracy_mean)
        << ',' << format_double(s.accuracy_std) << ',' << s.runs << ',' << (agg.single_run ? 1 : 0)
        << '\n';
  }
  write_text_atomic(path, out.str());
}

std::string stages_csv(const RunResult& result) {
  std::ostringstream out;
  out << "stage,labeled,accuracy,sampling_seconds,rejected_ood,budget,selected,promoted,"
         "filtered_ood,pending,foreign_selected,excluded_class_selected\n";
  for (const auto& r : result.stages) {
    out << r.stage << ',' << r.labeled << ',' << format_double(r.accuracy) << ','
        << format_double(r.sampling_seconds) << ',' << r.rejected_ood << ',' << r.budget << ','
        << r.selected << ',' << r.promoted << ',' << r.filtered_ood << ',' << r.pending << ','
        << r.foreign_selected << ',' << r.excluded_class_selected << '\n';
  }
  return out.str();
}

std::string accuracy_csv(const RunResult& result) {
  std::ostringstream out;
  out << "stage,labeled,accuracy\n";
  for (const auto& r : result.stages) {
    out << r.stage << ',' << r.labeled << ',' << format_double(r.accuracy) << '\n';
  }
  return out.str();
}

}  // namespace osal
