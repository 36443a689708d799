// osal: run, resume, benchmark and report active-learning experiments, and serve the
// annotation queue for a human oracle.

#include <algorithm>
#include <atomic>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"

#include "osal/alloop.hpp"
#include "osal/binary_io.hpp"
#include "osal/config.hpp"
#include "osal/errors.hpp"
#include "osal/oracle.hpp"
#include "osal/report.hpp"

namespace fs = std::filesystem;
using namespace osal;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

std::atomic<bool> g_stop{false};
extern "C" void on_signal(int) { g_stop = true; }

std::optional<std::string> env(const char* name) {
  const char* v = std::getenv(name);
  if (v == nullptr || *v == '\0') return std::nullopt;
  return std::string(v);
}

struct ExperimentFlags {
  std::string config;
  std::string run_dir;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> sets;
  std::string oracle, strategy, variant, optimizer;

  void add_to(CLI::App* cmd, bool config_required) {
    auto* c = cmd->add_option("--config", config, "Experiment config (JSON)");
    if (config_required) c->required()->check(CLI::ExistingFile);
    cmd->add_option("--run-dir", run_dir, "Experiment directory (default: $OSAL_RUN_ROOT/<name>)");
    cmd->add_option("--seed", seeds, "Seed to run; repeatable, replaces the config's seeds");
    cmd->add_option("--set", sets, "KEY=VALUE config override; repeatable");
    cmd->add_option("--oracle", oracle, "Oracle kind")->check(CLI::IsMember({"clean", "noisy", "ood", "human"}));
    cmd->add_option("--strategy", strategy, "Acquisition strategy")
        ->check(CLI::IsMember({"uncertainty", "weibull", "random"}));
    cmd->add_option("--variant", variant, "Model variant")->check(CLI::IsMember({"m1", "m2"}));
    cmd->add_option("--optimizer", optimizer, "Optimizer")->check(CLI::IsMember({"sgd", "adam"}));
  }

  /// file < environment < --set < dedicated flags.
  std::vector<std::string> overrides() const {
    std::vector<std::string> out;
    if (auto url = env("OSAL_ORACLE_URL")) out.push_back("oracle.url=" + *url);
    out.insert(out.end(), sets.begin(), sets.end());
    if (!oracle.empty()) out.push_back("oracle.kind=" + oracle);
    if (!strategy.empty()) out.push_back("strategy=" + strategy);
    if (!variant.empty()) out.push_back("variant=" + variant);
    if (!optimizer.empty()) out.push_back("train.optimizer=" + optimizer);
    return out;
  }

  ExperimentConfig load() const {
    auto c = load_config(config, overrides());
    if (!seeds.empty()) {
      c.seeds = seeds;
      c.validate();
    }
    return c;
  }

  fs::path experiment_dir(const ExperimentConfig& c) const {
    if (!run_dir.empty()) return run_dir;
    return fs::path(env("OSAL_RUN_ROOT").value_or("runs")) / c.name;
  }
};

std::vector<std::uint64_t> seed_dirs(const fs::path& root) {
  std::vector<std::uint64_t> seeds;
  if (!fs::is_directory(root)) return seeds;
  for (const auto& e : fs::directory_iterator(root)) {
    const auto name = e.path().filename().string();
    if (e.is_directory() && name.rfind("seed_", 0) == 0 && fs::exists(e.path() / "config.json")) {
      try {
        seeds.push_back(std::stoull(name.substr(5)));
      } catch (const std::exception&) {
      }
    }
  }
  std::sort(seeds.begin(), seeds.end());
  return seeds;
}

int cmd_run(const ExperimentFlags& f) {
  const auto config = f.load();
  const auto root = f.experiment_dir(config);
  fs::create_directories(root);
  write_text_atomic(root / "config.json", config_to_json(config));
  const auto agg = run_seeds(config, root, config.seeds);
  std::cout << "wrote " << agg.seeds.size() << " run(s) and " << (root / "aggregate.csv").string() << "\n";
  std::cout << "final accuracy " << agg.stages.back().accuracy_mean << " +- " << agg.stages.back().accuracy_std
            << " at " << agg.stages.back().labeled_mean << " labeled\n";
  return 0;
}

int cmd_resume(const std::string& run_dir) {
  const fs::path dir(run_dir);
  if (fs::exists(dir / "manifest.json")) {
    if (run_is_complete(dir)) {
      std::cout << "already complete\n";
      return 0;
    }
    const auto config = parse_config(read_text(dir / "config.json"));
    const auto result = run_experiment(config, load_run_result(dir).seed, {dir, {}});
    std::cout << "resumed " << dir.string() << ": " << result.stages.size() << " stages\n";
    return 0;
  }
  const auto seeds = seed_dirs(dir);
  if (seeds.empty()) throw ConfigError("no runs to resume under " + dir.string());
  bool all_complete = true;
  for (auto s : seeds) all_complete = all_complete && run_is_complete(seed_dir(dir, s));
  if (all_complete) {
    std::cout << "already complete\n";
    return 0;
  }
  const auto config = parse_config(read_text(seed_dir(dir, seeds.front()) / "config.json"));
  run_seeds(config, dir, seeds);
  std::cout << "resumed " << seeds.size() << " run(s) under " << dir.string() << "\n";
  return 0;
}

int cmd_bench(const ExperimentFlags& f, std::size_t pool_size, int repetitions, const std::string& out) {
  const auto config = f.load();
  std::vector<Strategy> strategies = {Strategy::uncertainty, Strategy::weibull, Strategy::random};
  if (!f.strategy.empty()) strategies = {parse_strategy(f.strategy)};
  const auto timings = bench_sampling(config, pool_size, repetitions, strategies, config.seeds.front());
  const auto csv = timing_csv(timings);
  if (out.empty()) {
    std::cout << csv;
  } else {
    write_text_atomic(out, csv);
    std::cout << "wrote " << out << "\n";
  }
  return 0;
}

int cmd_report(const std::vector<std::string>& inputs, const std::vector<std::string>& labels,
               const std::string& out, const std::string& name, bool no_plot) {
  if (!labels.empty() && labels.size() != inputs.size()) {
    throw ConfigError("--label must be given once per --input");
  }
  std::vector<CurveSet> curves;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    curves.push_back(load_curve(inputs[i], labels.empty() ? std::string{} : labels[i]));
  }
  emit_curves(curves, out, name, !no_plot);
  std::cout << "wrote " << curves.size() << " curve(s) to " << out << "\n";
  return 0;
}

int cmd_serve(const std::string& host, int port) {
  OracleService service(std::make_shared<AnnotationQueue>());
  const int bound = service.start(host, port);
  std::cout << "annotation service listening on http://" << host << ":" << bound << std::endl;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  service.stop();
  std::cout << "stopped\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Open-set active learning experiments"};
  app.require_subcommand(1);
  bool verbose = false, quiet = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");
  app.add_flag("-q,--quiet", quiet, "Warnings and errors only");

  ExperimentFlags run_flags;
  auto* run = app.add_subcommand("run", "Run every seed of an experiment, then aggregate");
  run_flags.add_to(run, true);

  std::string resume_dir;
  auto* resume = app.add_subcommand("resume", "Continue an interrupted run or experiment directory");
  resume->add_option("--run-dir", resume_dir, "Run or experiment directory")->required()->check(CLI::ExistingDirectory);

  ExperimentFlags bench_flags;
  std::size_t pool_size = 10000;
  int repetitions = 5;
  std::string bench_out;
  auto* bench = app.add_subcommand("bench-sampling", "Time one selection pass per strategy");
  bench_flags.add_to(bench, true);
  bench->add_option("--pool-size", pool_size, "Unlabeled pool size")->check(CLI::PositiveNumber);
  bench->add_option("--repetitions", repetitions, "Timed passes per strategy")->check(CLI::Range(3, 1000));
  bench->add_option("--out", bench_out, "Timing CSV path (default: stdout)");

  std::vector<std::string> report_inputs, report_labels;
  std::string report_out = "report", report_name = "accuracy";
  bool no_plot = false;
  auto* report = app.add_subcommand("report", "Aggregate experiment directories into curves");
  report->add_option("--input", report_inputs, "Experiment directory; repeatable")->required();
  report->add_option("--label", report_labels, "Legend label per input");
  report->add_option("--out", report_out, "Output directory");
  report->add_option("--name", report_name, "Figure name");
  report->add_flag("--no-plot", no_plot, "CSV only");

  std::string host = "127.0.0.1";
  int port = 8080;
  auto* serve = app.add_subcommand("serve-oracle", "Serve the annotation queue over HTTP");
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port (0 picks a free one)");

  BlobConfig blobs;
  std::string synth_out;
  auto* synth = app.add_subcommand("make-synthetic", "Write a Gaussian blob dataset config");
  synth->add_option("--out", synth_out, "Output path")->required();
  synth->add_option("--classes", blobs.classes, "Number of classes")->check(CLI::PositiveNumber);
  synth->add_option("--per-class", blobs.n_per_class, "Training samples per class")->check(CLI::PositiveNumber);
  synth->add_option("--eval-per-class", blobs.eval_per_class, "Evaluation samples per class");
  synth->add_option("--dim", blobs.dim, "Feature dimension")->check(CLI::PositiveNumber);
  synth->add_option("--stddev", blobs.stddev, "Per-coordinate standard deviation");
  synth->add_option("--radius", blobs.radius, "Radius of the ring of class centers");
  synth->add_option("--offset", blobs.offset, "Shift added to every center");
  synth->add_option("--seed", blobs.seed, "Generator seed");
  synth->add_option("--name", blobs.name, "Dataset name");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    if (*run) return cmd_run(run_flags);
    if (*resume) return cmd_resume(resume_dir);
    if (*bench) return cmd_bench(bench_flags, pool_size, repetitions, bench_out);
    if (*report) return cmd_report(report_inputs, report_labels, report_out, report_name, no_plot);
    if (*serve) return cmd_serve(host, port);
    if (*synth) {
      if (blobs.eval_per_class == 0) blobs.eval_per_class = blobs.n_per_class;
      make_blobs(blobs);  // validates the parameters
      write_blob_config(synth_out, blobs);
      std::cout << "wrote " << synth_out << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}
