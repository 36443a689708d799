#include "osal/config.hpp"

#include <cmath>

#include "json.hpp"

#include "osal/binary_io.hpp"
#include "osal/errors.hpp"

namespace osal {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

[[noreturn]] void fail(const std::string& field, const std::string& message) {
  throw ConfigError("field '" + field + "': " + message);
}

/// Typed access to one JSON object that remembers which keys were consumed.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_.empty() ? "<root>" : path_, "must be an object");
  }

  std::string sub(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const json& at(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) fail(sub(key), "is required");
    return j_.at(key);
  }

  template <class T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      fail(sub(key), "has the wrong type (got " + std::string(j_.at(key).type_name()) + ")");
    }
  }

  template <class Parse>
  void get_enum(const std::string& key, Parse parse) {
    std::string text;
    get(key, text);
    if (text.empty()) return;
    try {
      parse(text);
    } catch (const Error& e) {
      fail(sub(key), e.what());
    }
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) fail(sub(key), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

fs::path resolve_path(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return fs::weakly_canonical(base / p);
}

DatasetSpec parse_dataset(const json& j, const std::string& path, const fs::path& base) {
  Fields f(j, path);
  DatasetSpec spec;
  f.get_enum("format", [&](const std::string& t) { spec.format = parse_dataset_format(t); });
  std::string p;
  f.get("path", p);
  spec.path = resolve_path(p, base);
  if (f.has("blobs")) {
    try {
      spec.blobs = parse_blob_config(f.at("blobs").dump());
    } catch (const FormatError& e) {
      fail(f.sub("blobs"), e.what());
    }
    if (spec.format != DatasetFormat::synthetic_blobs) fail(f.sub("blobs"), "needs format synthetic_blobs");
  }
  if (spec.path.empty() && !spec.blobs) fail(path, "needs a path or inline blobs");
  f.finish();
  return spec;
}

json dataset_json(const DatasetSpec& d) {
  json j = {{"format", to_string(d.format)}};
  if (!d.path.empty()) j["path"] = d.path.string();
  if (d.blobs) {
    const auto& b = *d.blobs;
    json bj = {{"name", b.name},     {"classes", b.classes}, {"n_per_class", b.n_per_class},
               {"eval_per_class", b.eval_per_class},         {"dim", b.dim},
               {"stddev", b.stddev}, {"radius", b.radius},   {"seed", b.seed}};
    if (!b.centers.empty()) bj["centers"] = b.centers;
    if (!b.offset.empty()) bj["offset"] = b.offset;
    j["blobs"] = bj;
  }
  return j;
}

std::size_t line_of(const std::string& text, std::size_t byte, std::size_t& column) {
  std::size_t line = 1;
  column = 1;
  for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      column = 1;
    } else {
      ++column;
    }
  }
  return line;
}

}  // namespace

Dataset load_dataset(const DatasetSpec& spec) {
  Dataset ds = spec.blobs ? make_blobs(*spec.blobs) : load_dataset(spec.path, spec.format);
  ds.validate();
  return ds;
}

std::vector<std::size_t> BudgetSpec::resolve(std::size_t n) const {
  std::vector<std::size_t> out;
  for (double v : schedule) {
    const double count = unit == Unit::percent ? v / 100.0 * static_cast<double>(n) : v;
    out.push_back(static_cast<std::size_t>(std::llround(count)));
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i] == 0 || out[i] >= n) {
      throw ConfigError("field 'budget.schedule': stage " + std::to_string(i) + " resolves to " +
                        std::to_string(out[i]) + " of a pool of " + std::to_string(n));
    }
    if (i > 0 && out[i] <= out[i - 1]) {
      throw ConfigError("field 'budget.schedule': targets must strictly increase");
    }
  }
  return out;
}

void ExperimentConfig::validate() const {
  if (name.empty()) fail("name", "must not be empty");
  if (z_dim < 1) fail("z_dim", "must be positive");
  for (int h : encoder.hidden) {
    if (h < 1) fail("encoder.hidden", "widths must be positive");
  }
  for (int h : decoder_hidden) {
    if (h < 1) fail("decoder_hidden", "widths must be positive");
  }
  if (budget.schedule.empty()) fail("budget.schedule", "must not be empty");
  for (std::size_t i = 0; i < budget.schedule.size(); ++i) {
    const double v = budget.schedule[i];
    if (!(v > 0.0)) fail("budget.schedule", "entries must be positive");
    if (budget.unit == BudgetSpec::Unit::percent && v > 100.0) fail("budget.schedule", "percentages must be <= 100");
    if (i > 0 && !(v > budget.schedule[i - 1])) fail("budget.schedule", "targets must strictly increase");
  }
  if (!(max_labeled_fraction > 0.0 && max_labeled_fraction <= 1.0)) {
    fail("max_labeled_fraction", "must lie in (0, 1]");
  }
  if (budget.unit == BudgetSpec::Unit::percent && budget.schedule.back() / 100.0 > max_labeled_fraction + 1e-12) {
    fail("budget.schedule", "final target exceeds max_labeled_fraction");
  }
  train.validate();
  loss.validate();
  if (!(oracle.noise_rate >= 0.0 && oracle.noise_rate <= 1.0)) fail("oracle.noise_rate", "must lie in [0, 1]");
  if (!(oracle.timeout_seconds > 0.0)) fail("oracle.timeout_seconds", "must be positive");
  if (!(oracle.poll_seconds > 0.0)) fail("oracle.poll_seconds", "must be positive");
  if (seeds.empty()) fail("seeds", "must list at least one seed");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) fail("seeds", "must be unique");
  if (ood && !(ood->fraction > 0.0 && ood->fraction < 1.0)) fail("ood.fraction", "must lie in (0, 1)");
  if (!(sampling.tail_fraction > 0.0 && sampling.tail_fraction <= 1.0)) {
    fail("sampling.tail_fraction", "must lie in (0, 1]");
  }
  if (!(sampling.reject_threshold > 0.0 && sampling.reject_threshold <= 1.0)) {
    fail("sampling.reject_threshold", "must lie in (0, 1]");
  }
}

ExperimentConfig parse_config(const std::string& text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t column = 0;
    const auto line = line_of(text, e.byte, column);
    throw ConfigError("line " + std::to_string(line) + ", column " + std::to_string(column) +
                      ": invalid JSON (" + e.what() + ")");
  }
  ExperimentConfig c;
  Fields root(j, "");
  root.get("name", c.name);
  c.dataset = parse_dataset(root.at("dataset"), "dataset", base_dir);
  root.get_enum("variant", [&](const std::string& t) { c.variant = parse_variant(t); });
  root.get_enum("strategy", [&](const std::string& t) { c.strategy = parse_strategy(t); });
  root.get("z_dim", c.z_dim);
  root.get("decoder_hidden", c.decoder_hidden);
  if (root.has("encoder")) {
    Fields f(root.at("encoder"), "encoder");
    f.get_enum("kind", [&](const std::string& t) {
      if (t == "dense") c.encoder.kind = EncoderSpec::Kind::dense;
      else if (t == "lenet") c.encoder.kind = EncoderSpec::Kind::lenet;
      else throw ConfigError("expected dense or lenet");
    });
    f.get("hidden", c.encoder.hidden);
    f.finish();
  }
  if (root.has("budget")) {
    Fields f(root.at("budget"), "budget");
    const bool sugar = f.has("initial") || f.has("per_stage") || f.has("stages");
    if (sugar) {
      double initial = 0, per_stage = 0;
      int stages = 0;
      f.get("initial", initial);
      f.get("per_stage", per_stage);
      f.get("stages", stages);
      if (f.has("schedule")) fail("budget.schedule", "cannot be combined with initial/per_stage/stages");
      if (stages < 1) fail("budget.stages", "must be positive");
      c.budget.schedule.clear();
      for (int s = 0; s < stages; ++s) c.budget.schedule.push_back(initial + s * per_stage);
    } else {
      f.get("schedule", c.budget.schedule);
    }
    f.get_enum("unit", [&](const std::string& t) {
      if (t == "count") c.budget.unit = BudgetSpec::Unit::count;
      else if (t == "percent") c.budget.unit = BudgetSpec::Unit::percent;
      else throw ConfigError("expected count or percent");
    });
    f.finish();
  }
  root.get("max_labeled_fraction", c.max_labeled_fraction);
  if (root.has("train")) {
    Fields f(root.at("train"), "train");
    f.get("batch_size", c.train.batch_size);
    f.get("learning_rate", c.train.learning_rate);
    f.get("weight_decay", c.train.weight_decay);
    f.get_enum("optimizer", [&](const std::string& t) { c.train.optimizer = parse_optimizer(t); });
    f.get("epochs_per_stage", c.train.epochs_per_stage);
    f.get("momentum", c.train.momentum);
    f.finish();
  }
  if (root.has("loss")) {
    Fields f(root.at("loss"), "loss");
    f.get("beta", c.loss.beta);
    f.get("mc_samples", c.loss.mc_samples);
    f.get_enum("reconstruction", [&](const std::string& t) { c.loss.reconstruction = parse_reconstruction(t); });
    f.finish();
  }
  if (root.has("oracle")) {
    Fields f(root.at("oracle"), "oracle");
    f.get_enum("kind", [&](const std::string& t) { c.oracle.kind = parse_oracle_kind(t); });
    f.get("noise_rate", c.oracle.noise_rate);
    if (f.has("superclass_map")) {
      std::map<std::string, int> m;
      f.get("superclass_map", m);
      for (const auto& [k, v] : m) {
        try {
          c.oracle.superclass_map[std::stoi(k)] = v;
        } catch (const std::exception&) {
          fail("oracle.superclass_map", "keys must be class indices");
        }
      }
    }
    f.get("url", c.oracle.url);
    f.get("timeout_seconds", c.oracle.timeout_seconds);
    f.get("poll_seconds", c.oracle.poll_seconds);
    f.finish();
  }
  root.get("seeds", c.seeds);
  if (root.has("biased_pool")) {
    Fields f(root.at("biased_pool"), "biased_pool");
    f.get("excluded_classes", c.excluded_initial_classes);
    f.finish();
  }
  if (root.has("ood")) {
    Fields f(root.at("ood"), "ood");
    OodSpec o;
    o.dataset = parse_dataset(f.at("dataset"), "ood.dataset", base_dir);
    f.get("fraction", o.fraction);
    f.finish();
    c.ood = o;
  }
  if (root.has("sampling")) {
    Fields f(root.at("sampling"), "sampling");
    f.get("tail_fraction", c.sampling.tail_fraction);
    f.get("reject_threshold", c.sampling.reject_threshold);
    f.finish();
  }
  root.get("warm_start", c.warm_start);
  root.get("save_checkpoints", c.save_checkpoints);
  root.finish();
  c.validate();
  return c;
}

std::string apply_overrides(const std::string& text, const std::vector<std::string>& overrides) {
  if (overrides.empty()) return text;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error&) {
    return text;  // parse_config reports the location
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "' must be KEY=VALUE");
    const std::string key = o.substr(0, eq);
    const std::string value = o.substr(eq + 1);
    json parsed;
    try {
      parsed = json::parse(value);
    } catch (const json::parse_error&) {
      parsed = value;
    }
    json* node = &j;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (part.empty()) throw ConfigError("override '" + o + "' has an empty key segment");
      if (!node->is_object()) throw ConfigError("override '" + o + "' descends into a non-object");
      if (dot == std::string::npos) {
        if (parsed.is_null()) {
          node->erase(part);
        } else {
          (*node)[part] = parsed;
        }
        break;
      }
      node = &(*node)[part];
      if (node->is_null()) *node = json::object();
      start = dot + 1;
    }
  }
  return j.dump(2);
}

ExperimentConfig load_config(const fs::path& path, const std::vector<std::string>& overrides) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  try {
    return parse_config(apply_overrides(text, overrides), path.parent_path());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["dataset"] = dataset_json(c.dataset);
  j["variant"] = to_string(c.variant);
  j["strategy"] = to_string(c.strategy);
  j["encoder"] = {{"kind", c.encoder.kind == EncoderSpec::Kind::lenet ? "lenet" : "dense"},
                  {"hidden", c.encoder.hidden}};
  j["z_dim"] = c.z_dim;
  j["decoder_hidden"] = c.decoder_hidden;
  j["budget"] = {{"unit", c.budget.unit == BudgetSpec::Unit::percent ? "percent" : "count"},
                 {"schedule", c.budget.schedule}};
  j["max_labeled_fraction"] = c.max_labeled_fraction;
  j["train"] = {{"batch_size", c.train.batch_size},
                {"learning_rate", c.train.learning_rate},
                {"weight_decay", c.train.weight_decay},
                {"optimizer", to_string(c.train.optimizer)},
                {"epochs_per_stage", c.train.epochs_per_stage},
                {"momentum", c.train.momentum}};
  j["loss"] = {{"beta", c.loss.beta},
               {"mc_samples", c.loss.mc_samples},
               {"reconstruction", to_string(c.loss.reconstruction)}};
  json sc = json::object();
  for (const auto& [k, v] : c.oracle.superclass_map) sc[std::to_string(k)] = v;
  j["oracle"] = {{"kind", to_string(c.oracle.kind)},
                 {"noise_rate", c.oracle.noise_rate},
                 {"superclass_map", sc},
                 {"url", c.oracle.url},
                 {"timeout_seconds", c.oracle.timeout_seconds},
                 {"poll_seconds", c.oracle.poll_seconds}};
  j["seeds"] = c.seeds;
  j["biased_pool"] = {{"excluded_classes", c.excluded_initial_classes}};
  if (c.ood) j["ood"] = {{"dataset", dataset_json(c.ood->dataset)}, {"fraction", c.ood->fraction}};
  j["sampling"] = {{"tail_fraction", c.sampling.tail_fraction},
                   {"reject_threshold", c.sampling.reject_threshold}};
  j["warm_start"] = c.warm_start;
  j["save_checkpoints"] = c.save_checkpoints;
  return j.dump(2) + "\n";
}

}  // namespace osal
