#include "osal/report.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <sstream>

#include "json.hpp"

#include "osal/binary_io.hpp"
#include "osal/errors.hpp"
#include "osal/rng.hpp"

namespace osal {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

std::string num(double v) { return fmt("%.10g", v); }

double sample_std(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string file_safe(const std::string& s) {
  std::string out;
  for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ? c : '_';
  return out;
}

}  // namespace

TimingResult time_sampling(Strategy strategy, const VnnModel& model,
                           std::span<const SampleRecord* const> unlabeled,
                           std::span<const SampleRecord* const> labeled,
                           std::span<const ClassIndex> labels, std::size_t budget,
                           int repetitions, const SamplingSpec& sampling, std::uint64_t seed) {
  if (unlabeled.empty()) throw EmptyPoolError("cannot time sampling on an empty pool");
  if (repetitions < 3) throw ContractError("timing needs at least 3 repetitions");
  std::vector<SampleId> ids;
  ids.reserve(unlabeled.size());
  for (const auto* r : unlabeled) ids.push_back(r->id);

  auto pass = [&] {
    switch (strategy) {
      case Strategy::uncertainty:
        return select_uncertain(uncertainty_scores(model, unlabeled), budget);
      case Strategy::weibull:
        return select_weibull(model, unlabeled, labeled, labels, budget, sampling.tail_fraction,
                              sampling.reject_threshold);
      case Strategy::random:
        return random_select(ids, budget, seed);
    }
    throw ContractError("unhandled strategy");
  };

  TimingResult out;
  out.strategy = strategy;
  out.pool_size = unlabeled.size();
  pass();  // warm-up
  for (int i = 0; i < repetitions; ++i) {
    const auto start = std::chrono::steady_clock::now();
    const auto result = pass();
    out.seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    if (result.selected_ids.size() > budget) throw ContractError("selection exceeded the budget");
  }
  out.mean_seconds = std::accumulate(out.seconds.begin(), out.seconds.end(), 0.0) /
                     static_cast<double>(out.seconds.size());
  out.std_seconds = sample_std(out.seconds, out.mean_seconds);
  return out;
}

std::vector<TimingResult> bench_sampling(const ExperimentConfig& config, std::size_t pool_size,
                                         int repetitions, const std::vector<Strategy>& strategies,
                                         std::uint64_t seed) {
  if (pool_size == 0) throw EmptyPoolError("benchmark pool size must be positive");
  const auto dataset = load_dataset(config.dataset);
  std::optional<Dataset> foreign;
  if (config.ood) foreign = load_dataset(config.ood->dataset);
  auto state = initial_state(config, dataset, foreign ? &*foreign : nullptr, seed);

  const auto labeled = state.records.lookup(state.pool.labeled_ids());
  std::vector<ClassIndex> labels;
  for (auto id : state.pool.labeled_ids()) labels.push_back(state.pool.oracle_labels().at(id));
  {
    Rng rng(derive_seed(seed, 100));
    train_stage(state.model, make_batch(labeled, labels), config.train, config.loss, rng);
  }

  const auto& source = state.pool.unlabeled_ids();
  if (source.empty()) throw EmptyPoolError("no unlabeled records to build the benchmark pool from");
  std::uint64_t next_id = 0;
  for (const auto& r : dataset.train_records) next_id = std::max(next_id, r.id.value + 1);
  for (const auto& r : dataset.eval_records) next_id = std::max(next_id, r.id.value + 1);
  for (const auto& r : state.foreign_records) next_id = std::max(next_id, r.id.value + 1);
  std::vector<SampleRecord> copies;
  std::vector<const SampleRecord*> pool;
  pool.reserve(pool_size);
  copies.reserve(pool_size > source.size() ? pool_size - source.size() : 0);
  for (std::size_t i = 0; i < pool_size; ++i) {
    const auto& r = state.records.at(source[i % source.size()]);
    if (i < source.size()) {
      pool.push_back(&r);
    } else {
      auto copy = r;
      copy.id = SampleId{next_id++};
      copies.push_back(std::move(copy));
    }
  }
  for (const auto& c : copies) pool.push_back(&c);

  const auto targets = stage_targets(config, dataset.train_size());
  const std::size_t budget = std::min(pool_size, targets.size() > 1 ? targets[1] - targets[0] : std::size_t{100});
  std::vector<TimingResult> out;
  for (auto strategy : strategies) {
    out.push_back(time_sampling(strategy, state.model, pool, labeled, labels, budget, repetitions,
                                config.sampling, seed));
  }
  return out;
}

std::string timing_csv(const std::vector<TimingResult>& timings) {
  std::ostringstream out;
  out << "strategy,pool_size,mean_seconds,std_seconds,repetitions\n";
  for (const auto& t : timings) {
    out << to_string(t.strategy) << ',' << t.pool_size << ',' << num(t.mean_seconds) << ','
        << num(t.std_seconds) << ',' << t.seconds.size() << '\n';
  }
  return out.str();
}

CurveSet curve_from_aggregate(const Aggregate& agg, const std::string& label) {
  if (agg.stages.empty()) throw AggregationError("aggregate has no stages");
  CurveSet c;
  try {
    const auto j = json::parse(agg.config_json);
    c.strategy = j.at("strategy").get<std::string>();
    c.variant = j.at("variant").get<std::string>();
    c.optimizer = j.at("train").at("optimizer").get<std::string>();
    c.label = label.empty() ? j.at("name").get<std::string>() : label;
  } catch (const json::exception& e) {
    throw AggregationError(std::string("aggregate config is unreadable: ") + e.what());
  }
  c.n_seeds = agg.seeds.size();
  c.single_run = agg.single_run;
  for (const auto& s : agg.stages) {
    if (!c.labeled.empty() && s.labeled_mean < c.labeled.back()) {
      throw AggregationError("labeled counts decrease along the curve");
    }
    if (!(s.accuracy_mean >= 0.0 && s.accuracy_mean <= 1.0)) throw AggregationError("accuracy outside [0, 1]");
    c.labeled.push_back(s.labeled_mean);
    c.fraction.push_back(agg.train_size > 0 ? s.labeled_mean / static_cast<double>(agg.train_size) : 0.0);
    c.y_mean.push_back(s.accuracy_mean);
    c.y_std.push_back(s.accuracy_std);
  }
  return c;
}

CurveSet load_curve(const fs::path& experiment_dir, const std::string& label) {
  std::vector<std::pair<std::uint64_t, fs::path>> dirs;
  if (fs::is_directory(experiment_dir)) {
    for (const auto& entry : fs::directory_iterator(experiment_dir)) {
      const auto name = entry.path().filename().string();
      if (!entry.is_directory() || name.rfind("seed_", 0) != 0) continue;
      try {
        dirs.emplace_back(std::stoull(name.substr(5)), entry.path());
      } catch (const std::exception&) {
      }
    }
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<RunResult> runs;
  for (const auto& [seed, dir] : dirs) {
    if (run_is_complete(dir)) runs.push_back(load_run_result(dir));
  }
  if (runs.empty()) throw AggregationError("no complete runs under " + experiment_dir.string());
  return curve_from_aggregate(aggregate_runs(runs), label);
}

std::vector<std::size_t> legend_order(const std::vector<CurveSet>& curves) {
  std::vector<std::size_t> order(curves.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return curves[a].y_mean.back() > curves[b].y_mean.back();
  });
  return order;
}

std::string curves_csv(const std::vector<CurveSet>& curves) {
  std::ostringstream out;
  out << "strategy,variant,optimizer,stage,labeled_count,labeled_fraction,acc_mean,acc_std,n_seeds,label\n";
  for (const auto& c : curves) {
    for (std::size_t s = 0; s < c.y_mean.size(); ++s) {
      out << c.strategy << ',' << c.variant << ',' << c.optimizer << ',' << s << ','
          << num(c.labeled[s]) << ',' << num(c.fraction[s]) << ',' << num(c.y_mean[s]) << ','
          << num(c.y_std[s]) << ',' << c.n_seeds << ',' << c.label << '\n';
    }
  }
  return out.str();
}

std::string render_svg(const std::vector<CurveSet>& curves, const std::string& title) {
  if (curves.empty()) throw AggregationError("nothing to plot");
  constexpr double W = 720, H = 440, left = 60, right = 220, top = 40, bottom = 50;
  const double pw = W - left - right, ph = H - top - bottom;
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

  double x0 = 1e300, x1 = -1e300, y0 = 1.0, y1 = 0.0;
  for (const auto& c : curves) {
    for (std::size_t i = 0; i < c.labeled.size(); ++i) {
      x0 = std::min(x0, c.labeled[i]);
      x1 = std::max(x1, c.labeled[i]);
      y0 = std::min(y0, c.y_mean[i] - c.y_std[i]);
      y1 = std::max(y1, c.y_mean[i] + c.y_std[i]);
    }
  }
  if (x1 <= x0) x1 = x0 + 1;
  y0 = std::max(0.0, std::floor(y0 * 20) / 20);
  y1 = std::min(1.0, std::ceil(y1 * 20) / 20);
  if (y1 <= y0) {
    y1 = std::min(1.0, y0 + 0.05);
    y0 = y1 - 0.05;
  }
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << left + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
    << xml_escape(title) << "</text>\n";
  s << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double yv = y0 + (y1 - y0) * i / 5.0, xv = x0 + (x1 - x0) * i / 5.0;
    s << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << fmt("%.2f", py(yv))
      << "\" y2=\"" << fmt("%.2f", py(yv)) << "\" stroke=\"#ddd\"/>\n";
    s << "<text x=\"" << left - 6 << "\" y=\"" << fmt("%.2f", py(yv) + 4)
      << "\" text-anchor=\"end\">" << fmt("%.3f", yv) << "</text>\n";
    s << "<text x=\"" << fmt("%.2f", px(xv)) << "\" y=\"" << top + ph + 18
      << "\" text-anchor=\"middle\">" << fmt("%.0f", xv) << "</text>\n";
  }
  s << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 10
    << "\" text-anchor=\"middle\">labeled samples</text>\n";
  s << "<text transform=\"translate(16," << top + ph / 2
    << ") rotate(-90)\" text-anchor=\"middle\">accuracy</text>\n";

  const auto order = legend_order(curves);
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const auto& c = curves[order[rank]];
    const char* color = colors[rank % 10];
    if (!c.single_run) {
      s << "<polygon fill=\"" << color << "\" fill-opacity=\"0.15\" stroke=\"none\" points=\"";
      for (std::size_t i = 0; i < c.labeled.size(); ++i) {
        s << fmt("%.2f", px(c.labeled[i])) << ',' << fmt("%.2f", py(std::min(1.0, c.y_mean[i] + c.y_std[i]))) << ' ';
      }
      for (std::size_t i = c.labeled.size(); i-- > 0;) {
        s << fmt("%.2f", px(c.labeled[i])) << ',' << fmt("%.2f", py(std::max(0.0, c.y_mean[i] - c.y_std[i]))) << ' ';
      }
      s << "\"/>\n";
    }
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < c.labeled.size(); ++i) {
      s << fmt("%.2f", px(c.labeled[i])) << ',' << fmt("%.2f", py(c.y_mean[i])) << ' ';
    }
    s << "\"/>\n";
    const double ly = top + 14 + 18 * static_cast<double>(rank);
    s << "<line x1=\"" << left + pw + 12 << "\" x2=\"" << left + pw + 32 << "\" y1=\"" << ly - 4
      << "\" y2=\"" << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << left + pw + 38 << "\" y=\"" << ly << "\">" << xml_escape(c.label) << " ("
      << fmt("%.3f", c.y_mean.back()) << (c.single_run ? ", 1 seed" : "") << ")</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

void emit_curves(const std::vector<CurveSet>& curves, const fs::path& out_dir, const std::string& name,
                 bool with_plot) {
  if (curves.empty()) throw AggregationError("no curves to emit");
  fs::create_directories(out_dir);
  write_text_atomic(out_dir / (name + ".csv"), curves_csv(curves));
  for (const auto& c : curves) {
    write_text_atomic(out_dir / (name + "_" + file_safe(c.label) + ".csv"), curves_csv({c}));
  }
  if (with_plot) write_text_atomic(out_dir / (name + ".svg"), render_svg(curves, name));
}

}  // namespace osal
