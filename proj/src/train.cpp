#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

#include "osal/binary_io.hpp"
#include "osal/errors.hpp"
#include "osal/vnn.hpp"

namespace osal {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

/// L2 weight decay is folded into the gradient before the update.
class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, Eigen::Index n) : cfg_(cfg) {
    first_ = Vector::Zero(n);
    if (cfg.optimizer == OptimizerKind::adam) second_ = Vector::Zero(n);
  }

  void step(Vector& params, Vector& grad) {
    if (cfg_.weight_decay > 0.0) grad += cfg_.weight_decay * params;
    if (cfg_.optimizer == OptimizerKind::sgd) {
      first_ = cfg_.momentum * first_ + grad;
      params -= cfg_.learning_rate * first_;
      return;
    }
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ++t_;
    first_ = b1 * first_ + (1.0 - b1) * grad;
    second_ = b2 * second_ + (1.0 - b2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(b1, t_);
    const double c2 = 1.0 - std::pow(b2, t_);
    params.array() -= cfg_.learning_rate * (first_.array() / c1) /
                      ((second_.array() / c2).sqrt() + eps);
  }

 private:
  TrainConfig cfg_;
  Vector first_;
  Vector second_;
  int t_ = 0;
};

}  // namespace

TrainHistory train_stage(VnnModel& model, const Batch& labeled, const TrainConfig& train,
                         const LossConfig& loss, Rng& rng) {
  train.validate();
  loss.validate();
  if (labeled.size() == 0) throw EmptyBatchError("train_stage: labeled pool is empty");
  TrainHistory history;
  if (train.epochs_per_stage == 0) return history;

  const std::size_t n = labeled.size();
  std::vector<std::size_t> order(n);
  Optimizer opt(train, model.parameters().size());
  Vector grad(model.parameters().size());
  Batch mini;
  for (int epoch = 0; epoch < train.epochs_per_stage; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    partial_shuffle(order, n, rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(train.batch_size)) {
      const std::size_t count = std::min(n - start, static_cast<std::size_t>(train.batch_size));
      mini.x.resize(labeled.x.rows(), static_cast<Eigen::Index>(count));
      mini.y.resize(count);
      for (std::size_t k = 0; k < count; ++k) {
        mini.x.col(static_cast<Eigen::Index>(k)) = labeled.x.col(static_cast<Eigen::Index>(order[start + k]));
        mini.y[k] = labeled.y[order[start + k]];
      }
      LossBreakdown l;
      try {
        l = loss_and_gradient(model, mini, loss, rng, grad);
      } catch (const NumericsError& e) {
        throw NumericsError(std::string("training diverged: ") + e.what(), epoch);
      }
      if (!grad.allFinite()) throw NumericsError("non-finite gradient", epoch);
      opt.step(model.parameters(), grad);
      epoch_loss += l.total * static_cast<double>(count);
    }
    history.epoch_loss.push_back(epoch_loss / static_cast<double>(n));
  }
  if (!model.parameters().allFinite()) {
    throw NumericsError("non-finite parameters", train.epochs_per_stage - 1);
  }
  return history;
}

Matrix posterior_means(const VnnModel& model, std::span<const SampleRecord* const> records) {
  constexpr std::size_t kChunk = 512;
  Matrix means(model.z_dim(), static_cast<Eigen::Index>(records.size()));
  for (std::size_t start = 0; start < records.size(); start += kChunk) {
    const std::size_t count = std::min(kChunk, records.size() - start);
    const Matrix x = feature_matrix(records.subspan(start, count));
    means.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count)) =
        model.encode_batch(x).mean;
  }
  return means;
}

int argmax(const Eigen::Ref<const Vector>& v) {
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = static_cast<int>(i);
  }
  return best;
}

std::vector<int> predict(const VnnModel& model, std::span<const SampleRecord* const> records) {
  const Matrix logits = model.classifier_logits(posterior_means(model, records));
  std::vector<int> out(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    out[i] = argmax(logits.col(static_cast<Eigen::Index>(i)));
  }
  return out;
}

double evaluate(const VnnModel& model, std::span<const SampleRecord* const> records) {
  if (records.empty()) throw EmptyBatchError("evaluate: empty evaluation set");
  const auto predictions = predict(model, records);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i]->true_label) throw ContractError("evaluation record without a label");
    if (predictions[i] == *records[i]->true_label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(records.size());
}

double evaluate(const VnnModel& model, std::span<const SampleRecord> records) {
  std::vector<const SampleRecord*> refs;
  refs.reserve(records.size());
  for (const auto& r : records) refs.push_back(&r);
  return evaluate(model, std::span<const SampleRecord* const>(refs));
}

// ---------------------------------------------------------------------------------------

void save_model(const fs::path& dir, const VnnModel& model, const Rng* rng) {
  fs::create_directories(dir);
  const auto& spec = model.spec();
  json j;
  j["variant"] = to_string(spec.variant);
  j["z_dim"] = spec.z_dim;
  j["num_classes"] = spec.num_classes;
  j["input_shape"] = {spec.input_shape.channels, spec.input_shape.height, spec.input_shape.width};
  j["encoder"] = {{"kind", spec.encoder.kind == EncoderSpec::Kind::lenet ? "lenet" : "dense"},
                  {"hidden", spec.encoder.hidden}};
  j["decoder_hidden"] = spec.decoder_hidden;
  json layers = json::array();
  for (const auto& b : model.layout()) {
    layers.push_back({{"name", b.name}, {"shape", b.shape}, {"offset", b.offset}});
  }
  j["layers"] = layers;
  j["parameter_count"] = model.parameter_count();
  j["dtype"] = "float32-le";
  if (rng != nullptr) j["rng_state"] = serialize_rng(*rng);

  std::vector<float> flat(model.parameter_count());
  for (std::size_t i = 0; i < flat.size(); ++i) {
    flat[i] = static_cast<float>(model.parameters()[static_cast<Eigen::Index>(i)]);
  }
  write_f32_le(dir / "model.bin", flat);
  write_text_atomic(dir / "model.json", j.dump(1) + "\n");
}

LoadedModel load_model(const fs::path& dir) {
  json j;
  try {
    j = json::parse(read_text(dir / "model.json"));
  } catch (const json::parse_error& e) {
    throw FormatError((dir / "model.json").string() + ": " + e.what());
  }
  ModelSpec spec;
  LoadedModel out;
  try {
    spec.variant = parse_variant(j.at("variant").get<std::string>());
    spec.z_dim = j.at("z_dim").get<int>();
    spec.num_classes = j.at("num_classes").get<int>();
    const auto shape = j.at("input_shape").get<std::vector<int>>();
    if (shape.size() != 3) throw FormatError("input_shape must have three entries");
    spec.input_shape = {shape[0], shape[1], shape[2]};
    spec.encoder.kind = j.at("encoder").at("kind").get<std::string>() == "lenet"
                            ? EncoderSpec::Kind::lenet
                            : EncoderSpec::Kind::dense;
    spec.encoder.hidden = j.at("encoder").at("hidden").get<std::vector<int>>();
    spec.decoder_hidden = j.at("decoder_hidden").get<std::vector<int>>();
    out.model = VnnModel::zeros(spec);
    if (j.at("parameter_count").get<std::size_t>() != out.model.parameter_count()) {
      throw FormatError("parameter count does not match the declared architecture");
    }
    const auto& layers = j.at("layers");
    if (layers.size() != out.model.layout().size()) throw FormatError("layer table mismatch");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& b = out.model.layout()[i];
      if (layers[i].at("name").get<std::string>() != b.name ||
          layers[i].at("shape").get<std::vector<int>>() != b.shape) {
        throw FormatError("layer " + b.name + " does not match the checkpoint");
      }
    }
    if (j.contains("rng_state")) out.rng = deserialize_rng(j["rng_state"].get<std::string>());
  } catch (const json::exception& e) {
    throw FormatError((dir / "model.json").string() + ": " + e.what());
  }
  const auto flat = read_f32_le(dir / "model.bin");
  if (flat.size() != out.model.parameter_count()) throw FormatError("model.bin size mismatch");
  for (std::size_t i = 0; i < flat.size(); ++i) {
    out.model.parameters()[static_cast<Eigen::Index>(i)] = flat[i];
  }
  return out;
}

}  // namespace osal
