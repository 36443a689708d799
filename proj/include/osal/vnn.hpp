#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "osal/datapool.hpp"
#include "osal/rng.hpp"
#include "osal/types.hpp"

namespace osal {

enum class Variant { m1, m2 };
enum class Reconstruction { bernoulli, gaussian };
enum class OptimizerKind { sgd, adam };

std::string to_string(Variant v);
std::string to_string(Reconstruction r);
std::string to_string(OptimizerKind o);
Variant parse_variant(const std::string& text);
Reconstruction parse_reconstruction(const std::string& text);
OptimizerKind parse_optimizer(const std::string& text);

/// Diagonal Gaussian q(z|x).
struct LatentPosterior {
  Vector mean;
  Vector log_variance;
};

inline constexpr double kLogVarianceMin = -10.0;
inline constexpr double kLogVarianceMax = 10.0;

struct LossConfig {
  double beta = 1.0;
  int mc_samples = 1;
  Reconstruction reconstruction = Reconstruction::bernoulli;

  void validate() const;
};

struct TrainConfig {
  int batch_size = 128;
  double learning_rate = 1e-3;
  double weight_decay = 1e-5;
  OptimizerKind optimizer = OptimizerKind::adam;
  int epochs_per_stage = 10;
  double momentum = 0.9;  // SGD only

  void validate() const;
};

// ---------------------------------------------------------------------------------------
// Layers. Activations are column-per-sample matrices; image tensors are flattened
// channel-major (c, y, x) with x fastest. Parameters live in the owning model's flat
// vector at `offset`.

struct DenseLayer {
  int in = 0;
  int out = 0;
  std::size_t offset = 0;  // W (out x in, column-major) then b (out)
  std::size_t param_count() const { return static_cast<std::size_t>(out) * (in + 1); }
};

struct ReluLayer {
  int dim = 0;
};

struct Conv2dLayer {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 0;
  int in_height = 0;
  int in_width = 0;
  std::size_t offset = 0;  // W^T (in_c*k*k x out_c, column-major) then b (out_c)

  int out_height() const { return in_height - kernel + 1; }
  int out_width() const { return in_width - kernel + 1; }
  int patch_size() const { return in_channels * kernel * kernel; }
  int in_dim() const { return in_channels * in_height * in_width; }
  int out_dim() const { return out_channels * out_height() * out_width(); }
  std::size_t param_count() const {
    return static_cast<std::size_t>(out_channels) * (patch_size() + 1);
  }
};

struct MaxPool2Layer {
  int channels = 0;
  int in_height = 0;
  int in_width = 0;

  int out_height() const { return in_height / 2; }
  int out_width() const { return in_width / 2; }
  int in_dim() const { return channels * in_height * in_width; }
  int out_dim() const { return channels * out_height() * out_width(); }
};

using Layer = std::variant<DenseLayer, ReluLayer, Conv2dLayer, MaxPool2Layer>;

int layer_in_dim(const Layer& layer);
int layer_out_dim(const Layer& layer);

/// A feed-forward stack of layers sharing one parameter vector.
struct Network {
  std::vector<Layer> layers;

  int in_dim() const;
  int out_dim() const;

  /// When `inputs` is non-null, it receives the input of every layer (for backward).
  Matrix forward(const Vector& params, const Matrix& x, std::vector<Matrix>* inputs) const;
  /// Accumulates parameter gradients into `grads` and returns d(loss)/d(input).
  Matrix backward(const Vector& params, Vector& grads, const std::vector<Matrix>& inputs,
                  Matrix grad_out) const;
};

// ---------------------------------------------------------------------------------------

struct EncoderSpec {
  enum class Kind { dense, lenet };
  Kind kind = Kind::dense;
  std::vector<int> hidden = {128};  // dense trunk widths; lenet uses its fixed trunk
};

struct ModelSpec {
  ImageShape input_shape;
  int z_dim = 60;
  int num_classes = 10;
  Variant variant = Variant::m1;
  EncoderSpec encoder;
  std::vector<int> decoder_hidden = {256};

  int input_dim() const { return static_cast<int>(input_shape.size()); }
};

struct ParameterBlock {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Encoder pass over a batch; the trunk inputs are retained for backward.
struct EncoderPass {
  Matrix hidden;
  Matrix mean;
  Matrix raw_log_variance;  // before clamping
  Matrix log_variance;
  std::vector<Matrix> trunk_inputs;
};

/// Variational encoder with a linear classifier on the latent vector, plus a decoder for M2.
class VnnModel {
 public:
  VnnModel() = default;
  /// Parameters drawn U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  static VnnModel create(const ModelSpec& spec, Rng& rng);
  /// Same architecture with all parameters zero.
  static VnnModel zeros(const ModelSpec& spec);

  const ModelSpec& spec() const { return spec_; }
  Variant variant() const { return spec_.variant; }
  int z_dim() const { return spec_.z_dim; }
  int num_classes() const { return spec_.num_classes; }
  int input_dim() const { return spec_.input_dim(); }
  bool has_decoder() const { return spec_.variant == Variant::m2; }

  Vector& parameters() { return params_; }
  const Vector& parameters() const { return params_; }
  std::size_t parameter_count() const { return static_cast<std::size_t>(params_.size()); }
  const std::vector<ParameterBlock>& layout() const { return layout_; }

  const Network& trunk() const { return trunk_; }
  const DenseLayer& mean_head() const { return mean_head_; }
  const DenseLayer& log_variance_head() const { return logvar_head_; }
  const DenseLayer& classifier() const { return classifier_; }
  const Network& decoder() const { return decoder_; }

  EncoderPass encode_batch(const Matrix& x, bool keep_inputs = false) const;
  Matrix classifier_logits(const Matrix& z) const;
  Matrix decoder_logits(const Matrix& z, std::vector<Matrix>* inputs = nullptr) const;

  /// Rounds parameters to float32 so a checkpoint round-trip is lossless.
  void quantize_to_f32();

 private:
  ModelSpec spec_;
  Network trunk_;
  DenseLayer mean_head_;
  DenseLayer logvar_head_;
  DenseLayer classifier_;
  Network decoder_;
  Vector params_;
  std::vector<ParameterBlock> layout_;

  static VnnModel build(const ModelSpec& spec);
};

/// Column-per-sample design matrix with labels.
struct Batch {
  Matrix x;
  std::vector<ClassIndex> y;

  std::size_t size() const { return y.size(); }
};

Batch make_batch(std::span<const SampleRecord* const> records,
                 std::span<const ClassIndex> labels);
Matrix feature_matrix(std::span<const SampleRecord* const> records);

struct LossBreakdown {
  double total = 0.0;
  double classification = 0.0;  // mean over batch of -E_q log p(y|z)
  double reconstruction = 0.0;  // mean over batch of -E_q log p(x|z); 0 for M1
  double kl = 0.0;              // mean over batch, unweighted by beta
};

LatentPosterior encode(const VnnModel& model, std::span<const float> x);
Vector reparameterize(const LatentPosterior& posterior, const Vector& noise);
double kl_term(const LatentPosterior& posterior);
Vector classify(const VnnModel& model, const Vector& z);
/// Column-wise softmax with max subtraction.
Matrix softmax_columns(const Matrix& logits);

/// Objective without reconstruction; valid for both variants.
LossBreakdown m1_loss(const VnnModel& model, const Batch& batch, const LossConfig& config,
                      Rng& rng);
/// Full objective; requires an M2 model.
LossBreakdown m2_loss(const VnnModel& model, const Batch& batch, const LossConfig& config,
                      Rng& rng);

/// Loss for the model's own variant and its gradient w.r.t. the flat parameter vector
/// (`grad` is overwritten). Draws the same noise as m1_loss/m2_loss for a given rng state.
LossBreakdown loss_and_gradient(const VnnModel& model, const Batch& batch,
                                const LossConfig& config, Rng& rng, Vector& grad);
LossBreakdown loss_and_gradient(const VnnModel& model, const Batch& batch,
                                const LossConfig& config, Rng& rng, Vector& grad,
                                bool with_reconstruction);

struct TrainHistory {
  std::vector<double> epoch_loss;
};

/// Mini-batch training for `epochs_per_stage` epochs; optimizer state starts fresh.
TrainHistory train_stage(VnnModel& model, const Batch& labeled, const TrainConfig& train,
                         const LossConfig& loss, Rng& rng);

/// Posterior means (z_dim x n) for the given records, in chunks.
Matrix posterior_means(const VnnModel& model, std::span<const SampleRecord* const> records);
/// argmax with lowest-index tie-break.
int argmax(const Eigen::Ref<const Vector>& v);
std::vector<int> predict(const VnnModel& model, std::span<const SampleRecord* const> records);
double evaluate(const VnnModel& model, std::span<const SampleRecord* const> records);
double evaluate(const VnnModel& model, std::span<const SampleRecord> records);

void save_model(const std::filesystem::path& dir, const VnnModel& model, const Rng* rng = nullptr);
struct LoadedModel {
  VnnModel model;
  std::optional<Rng> rng;
};
LoadedModel load_model(const std::filesystem::path& dir);

}  // namespace osal
