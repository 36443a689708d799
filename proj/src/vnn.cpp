#include "osal/vnn.hpp"

#include <cmath>

#include "osal/errors.hpp"

namespace osal {

std::string to_string(Variant v) { return v == Variant::m1 ? "m1" : "m2"; }
std::string to_string(Reconstruction r) {
  return r == Reconstruction::bernoulli ? "bernoulli" : "gaussian";
}
std::string to_string(OptimizerKind o) { return o == OptimizerKind::sgd ? "sgd" : "adam"; }

Variant parse_variant(const std::string& text) {
  if (text == "m1" || text == "M1") return Variant::m1;
  if (text == "m2" || text == "M2") return Variant::m2;
  throw ConfigError("unknown variant '" + text + "'");
}

Reconstruction parse_reconstruction(const std::string& text) {
  if (text == "bernoulli") return Reconstruction::bernoulli;
  if (text == "gaussian") return Reconstruction::gaussian;
  throw ConfigError("unknown reconstruction likelihood '" + text + "'");
}

OptimizerKind parse_optimizer(const std::string& text) {
  if (text == "sgd") return OptimizerKind::sgd;
  if (text == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + text + "'");
}

void LossConfig::validate() const {
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("loss.beta must be >= 0");
  if (mc_samples < 1) throw ConfigError("loss.mc_samples must be >= 1");
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train.batch_size must be positive");
  if (!(learning_rate >= 0.0)) throw ConfigError("train.learning_rate must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
  if (epochs_per_stage < 0) throw ConfigError("train.epochs_per_stage must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must be in [0,1)");
}

// ---------------------------------------------------------------------------------------

namespace {

class LayoutBuilder {
 public:
  DenseLayer dense(const std::string& name, int in, int out) {
    DenseLayer l{in, out, next_};
    blocks_.push_back({name + ".weight", {out, in}, next_, static_cast<std::size_t>(out) * in});
    blocks_.push_back({name + ".bias", {out}, next_ + static_cast<std::size_t>(out) * in,
                       static_cast<std::size_t>(out)});
    next_ += l.param_count();
    return l;
  }

  Conv2dLayer conv(const std::string& name, int in_c, int out_c, int k, int h, int w) {
    Conv2dLayer l{in_c, out_c, k, h, w, next_};
    if (l.out_height() < 1 || l.out_width() < 1) throw ShapeError("conv kernel larger than input");
    const std::size_t wsize = static_cast<std::size_t>(l.patch_size()) * out_c;
    blocks_.push_back({name + ".weight_t", {l.patch_size(), out_c}, next_, wsize});
    blocks_.push_back({name + ".bias", {out_c}, next_ + wsize, static_cast<std::size_t>(out_c)});
    next_ += l.param_count();
    return l;
  }

  std::size_t size() const { return next_; }
  std::vector<ParameterBlock> blocks() const { return blocks_; }

 private:
  std::size_t next_ = 0;
  std::vector<ParameterBlock> blocks_;
};

}  // namespace

VnnModel VnnModel::build(const ModelSpec& spec) {
  if (spec.z_dim < 1 || spec.num_classes < 1 || spec.input_dim() < 1) {
    throw ShapeError("model dimensions must be positive");
  }
  VnnModel m;
  m.spec_ = spec;
  LayoutBuilder b;
  int width = spec.input_dim();
  if (spec.encoder.kind == EncoderSpec::Kind::lenet) {
    const auto& s = spec.input_shape;
    auto c1 = b.conv("encoder.conv1", s.channels, 6, 5, s.height, s.width);
    MaxPool2Layer p1{6, c1.out_height(), c1.out_width()};
    auto c2 = b.conv("encoder.conv2", 6, 16, 5, p1.out_height(), p1.out_width());
    MaxPool2Layer p2{16, c2.out_height(), c2.out_width()};
    m.trunk_.layers = {c1, ReluLayer{c1.out_dim()}, p1, c2, ReluLayer{c2.out_dim()}, p2};
    width = p2.out_dim();
    int i = 0;
    for (int h : {120, 84}) {
      m.trunk_.layers.push_back(b.dense("encoder.fc" + std::to_string(++i), width, h));
      m.trunk_.layers.push_back(ReluLayer{h});
      width = h;
    }
  } else {
    int i = 0;
    for (int h : spec.encoder.hidden) {
      m.trunk_.layers.push_back(b.dense("encoder.fc" + std::to_string(++i), width, h));
      m.trunk_.layers.push_back(ReluLayer{h});
      width = h;
    }
  }
  m.mean_head_ = b.dense("encoder.mean", width, spec.z_dim);
  m.logvar_head_ = b.dense("encoder.log_variance", width, spec.z_dim);
  m.classifier_ = b.dense("classifier", spec.z_dim, spec.num_classes);
  if (spec.variant == Variant::m2) {
    int w = spec.z_dim;
    int i = 0;
    for (int h : spec.decoder_hidden) {
      m.decoder_.layers.push_back(b.dense("decoder.fc" + std::to_string(++i), w, h));
      m.decoder_.layers.push_back(ReluLayer{h});
      w = h;
    }
    m.decoder_.layers.push_back(b.dense("decoder.out", w, spec.input_dim()));
  }
  m.params_ = Vector::Zero(static_cast<Eigen::Index>(b.size()));
  m.layout_ = b.blocks();
  return m;
}

VnnModel VnnModel::zeros(const ModelSpec& spec) { return build(spec); }

VnnModel VnnModel::create(const ModelSpec& spec, Rng& rng) {
  VnnModel m = build(spec);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  // fan_in: columns of W, rows of W^T; a bias shares the bound of the preceding weight block.
  double bound = 0.0;
  for (const auto& block : m.layout_) {
    if (block.name.ends_with(".weight")) bound = 1.0 / std::sqrt(static_cast<double>(block.shape[1]));
    if (block.name.ends_with(".weight_t")) bound = 1.0 / std::sqrt(static_cast<double>(block.shape[0]));
    for (std::size_t i = 0; i < block.size; ++i) m.params_[block.offset + i] = bound * unit(rng);
  }
  return m;
}

void VnnModel::quantize_to_f32() {
  for (Eigen::Index i = 0; i < params_.size(); ++i) {
    params_[i] = static_cast<double>(static_cast<float>(params_[i]));
  }
}

namespace {

Matrix dense_forward(const Vector& p, const DenseLayer& l, const Matrix& x) {
  Eigen::Map<const Matrix> w(p.data() + l.offset, l.out, l.in);
  Eigen::Map<const Vector> b(p.data() + l.offset + static_cast<std::size_t>(l.out) * l.in, l.out);
  Matrix y = w * x;
  y.colwise() += b;
  return y;
}

}  // namespace

EncoderPass VnnModel::encode_batch(const Matrix& x, bool keep_inputs) const {
  if (x.rows() != input_dim()) {
    throw ShapeError("encoder expects dimension " + std::to_string(input_dim()) + ", got " +
                     std::to_string(x.rows()));
  }
  EncoderPass pass;
  pass.hidden = trunk_.forward(params_, x, keep_inputs ? &pass.trunk_inputs : nullptr);
  pass.mean = dense_forward(params_, mean_head_, pass.hidden);
  pass.raw_log_variance = dense_forward(params_, logvar_head_, pass.hidden);
  pass.log_variance = pass.raw_log_variance.cwiseMax(kLogVarianceMin).cwiseMin(kLogVarianceMax);
  return pass;
}

Matrix VnnModel::classifier_logits(const Matrix& z) const {
  if (z.rows() != z_dim()) {
    throw ShapeError("classifier expects latent dimension " + std::to_string(z_dim()) +
                     ", got " + std::to_string(z.rows()));
  }
  return dense_forward(params_, classifier_, z);
}

Matrix VnnModel::decoder_logits(const Matrix& z, std::vector<Matrix>* inputs) const {
  if (!has_decoder()) throw VariantError("M1 model has no decoder");
  return decoder_.forward(params_, z, inputs);
}

// ---------------------------------------------------------------------------------------

Matrix feature_matrix(std::span<const SampleRecord* const> records) {
  if (records.empty()) return {};
  const auto d = static_cast<Eigen::Index>(records.front()->features.size());
  Matrix x(d, static_cast<Eigen::Index>(records.size()));
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& f = records[i]->features;
    if (static_cast<Eigen::Index>(f.size()) != d) throw ShapeError("records differ in dimension");
    x.col(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::VectorXf>(f.data(), d).cast<double>();
  }
  return x;
}

Batch make_batch(std::span<const SampleRecord* const> records,
                 std::span<const ClassIndex> labels) {
  if (records.size() != labels.size()) throw ShapeError("records and labels differ in length");
  return {feature_matrix(records), {labels.begin(), labels.end()}};
}

LatentPosterior encode(const VnnModel& model, std::span<const float> x) {
  if (static_cast<int>(x.size()) != model.input_dim()) {
    throw ShapeError("encode: expected dimension " + std::to_string(model.input_dim()) +
                     ", got " + std::to_string(x.size()));
  }
  Matrix col = Eigen::Map<const Eigen::VectorXf>(x.data(), static_cast<Eigen::Index>(x.size()))
                   .cast<double>();
  auto pass = model.encode_batch(col);
  return {pass.mean.col(0), pass.log_variance.col(0)};
}

Vector reparameterize(const LatentPosterior& posterior, const Vector& noise) {
  if (noise.size() != posterior.mean.size() || posterior.log_variance.size() != posterior.mean.size()) {
    throw ShapeError("reparameterize: noise length must equal z_dim");
  }
  return posterior.mean + ((0.5 * posterior.log_variance.array()).exp() * noise.array()).matrix();
}

double kl_term(const LatentPosterior& posterior) {
  if (posterior.mean.size() != posterior.log_variance.size()) {
    throw ShapeError("kl_term: mean and log-variance lengths differ");
  }
  if (!posterior.mean.allFinite() || !posterior.log_variance.allFinite()) {
    throw NumericsError("kl_term: non-finite posterior");
  }
  const auto& mu = posterior.mean.array();
  const auto& lv = posterior.log_variance.array();
  // expm1(lv) - lv is exact near lv = 0 where exp(lv) - 1 - lv cancels.
  return 0.5 * (mu.square() + lv.unaryExpr([](double v) { return std::expm1(v) - v; })).sum();
}

Matrix softmax_columns(const Matrix& logits) {
  Matrix p = logits;
  for (Eigen::Index j = 0; j < p.cols(); ++j) {
    auto col = p.col(j);
    col.array() -= col.maxCoeff();
    col = col.array().exp().matrix();
    col /= col.sum();
  }
  return p;
}

Vector classify(const VnnModel& model, const Vector& z) {
  return softmax_columns(model.classifier_logits(z)).col(0);
}

// ---------------------------------------------------------------------------------------
// Objective. Noise for S Monte Carlo draws is laid out as S consecutive blocks of B
// columns; classifier and decoder see all S*B latent columns in one pass.

namespace {

double softplus(double v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }
double sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

LossBreakdown objective(const VnnModel& model, const Batch& batch, const LossConfig& config,
                        Rng& rng, bool with_reconstruction, Vector* grad) {
  config.validate();
  const auto n = static_cast<Eigen::Index>(batch.size());
  if (n == 0) throw EmptyBatchError("empty batch");
  if (batch.x.cols() != n) throw ShapeError("batch features and labels differ in count");
  for (auto y : batch.y) {
    if (y < 0 || y >= model.num_classes()) throw LabelRangeError("label outside [0, C)");
  }
  if (with_reconstruction && !model.has_decoder()) {
    throw VariantError("reconstruction term requires an M2 model");
  }
  const int S = config.mc_samples;
  const int zd = model.z_dim();
  const int C = model.num_classes();
  const bool keep = grad != nullptr;

  EncoderPass enc = model.encode_batch(batch.x, keep);
  Matrix std_dev = (0.5 * enc.log_variance.array()).exp().matrix();

  Matrix eps(zd, S * n);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index j = 0; j < eps.cols(); ++j) {
    for (int i = 0; i < zd; ++i) eps(i, j) = normal(rng);
  }
  Matrix z(zd, S * n);
  for (int s = 0; s < S; ++s) {
    z.middleCols(s * n, n) = enc.mean + std_dev.cwiseProduct(eps.middleCols(s * n, n));
  }

  const double inv = 1.0 / (static_cast<double>(S) * n);
  LossBreakdown out;

  Matrix logits = model.classifier_logits(z);
  Matrix probs = softmax_columns(logits);
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const int y = batch.y[static_cast<std::size_t>(j % n)];
    const double m = logits.col(j).maxCoeff();
    const double lse = m + std::log((logits.col(j).array() - m).exp().sum());
    out.classification += (lse - logits(y, j)) * inv;
  }

  Matrix dec_logits;
  std::vector<Matrix> dec_inputs;
  if (with_reconstruction) {
    dec_logits = model.decoder_logits(z, keep ? &dec_inputs : nullptr);
    for (Eigen::Index j = 0; j < dec_logits.cols(); ++j) {
      const auto x = batch.x.col(j % n);
      double r = 0.0;
      if (config.reconstruction == Reconstruction::bernoulli) {
        for (Eigen::Index i = 0; i < x.size(); ++i) {
          r += softplus(dec_logits(i, j)) - x[i] * dec_logits(i, j);
        }
      } else {
        r = 0.5 * (x - dec_logits.col(j)).squaredNorm();
      }
      out.reconstruction += r * inv;
    }
  }

  const auto& mu = enc.mean.array();
  const auto& lv = enc.log_variance.array();
  out.kl = 0.5 * (mu.square() + lv.unaryExpr([](double v) { return std::expm1(v) - v; })).sum() /
           static_cast<double>(n);
  out.total = out.classification + out.reconstruction + config.beta * out.kl;
  if (!std::isfinite(out.total)) throw NumericsError("non-finite loss");
  if (!keep) return out;

  // Backward.
  const Vector& p = model.parameters();
  grad->setZero(p.size());
  Matrix dlogits = probs;
  for (Eigen::Index j = 0; j < dlogits.cols(); ++j) {
    dlogits(batch.y[static_cast<std::size_t>(j % n)], j) -= 1.0;
  }
  dlogits *= inv;
  const auto& cls = model.classifier();
  Eigen::Map<const Matrix> wc(p.data() + cls.offset, C, zd);
  Eigen::Map<Matrix>(grad->data() + cls.offset, C, zd).noalias() += dlogits * z.transpose();
  Eigen::Map<Vector>(grad->data() + cls.offset + static_cast<std::size_t>(C) * zd, C) +=
      dlogits.rowwise().sum();
  Matrix dz = wc.transpose() * dlogits;

  if (with_reconstruction) {
    Matrix ddec(dec_logits.rows(), dec_logits.cols());
    for (Eigen::Index j = 0; j < ddec.cols(); ++j) {
      const auto x = batch.x.col(j % n);
      if (config.reconstruction == Reconstruction::bernoulli) {
        for (Eigen::Index i = 0; i < x.size(); ++i) ddec(i, j) = sigmoid(dec_logits(i, j)) - x[i];
      } else {
        ddec.col(j) = dec_logits.col(j) - x;
      }
    }
    ddec *= inv;
    dz += model.decoder().backward(p, *grad, dec_inputs, std::move(ddec));
  }

  const double kl_scale = config.beta / static_cast<double>(n);
  Matrix dmu = kl_scale * enc.mean;
  Matrix dlv = (0.5 * kl_scale) * (enc.log_variance.array().exp() - 1.0).matrix();
  for (int s = 0; s < S; ++s) {
    const auto dzs = dz.middleCols(s * n, n);
    dmu += dzs;
    dlv.array() += dzs.array() * eps.middleCols(s * n, n).array() * 0.5 * std_dev.array();
  }
  // Clamped entries pass no gradient.
  dlv = (enc.raw_log_variance.array() < kLogVarianceMin ||
         enc.raw_log_variance.array() > kLogVarianceMax)
            .select(0.0, dlv);

  Matrix dhidden = Matrix::Zero(enc.hidden.rows(), n);
  for (const auto* head : {&model.mean_head(), &model.log_variance_head()}) {
    const Matrix& g = head == &model.mean_head() ? dmu : dlv;
    Eigen::Map<const Matrix> w(p.data() + head->offset, head->out, head->in);
    Eigen::Map<Matrix>(grad->data() + head->offset, head->out, head->in).noalias() +=
        g * enc.hidden.transpose();
    Eigen::Map<Vector>(grad->data() + head->offset + static_cast<std::size_t>(head->out) * head->in,
                       head->out) += g.rowwise().sum();
    dhidden.noalias() += w.transpose() * g;
  }
  if (!model.trunk().layers.empty()) {
    model.trunk().backward(p, *grad, enc.trunk_inputs, std::move(dhidden));
  }
  return out;
}

}  // namespace

LossBreakdown m1_loss(const VnnModel& model, const Batch& batch, const LossConfig& config,
                      Rng& rng) {
  return objective(model, batch, config, rng, false, nullptr);
}

LossBreakdown m2_loss(const VnnModel& model, const Batch& batch, const LossConfig& config,
                      Rng& rng) {
  if (!model.has_decoder()) throw VariantError("m2_loss requires an M2 model");
  return objective(model, batch, config, rng, true, nullptr);
}

LossBreakdown loss_and_gradient(const VnnModel& model, const Batch& batch,
                                const LossConfig& config, Rng& rng, Vector& grad,
                                bool with_reconstruction) {
  return objective(model, batch, config, rng, with_reconstruction, &grad);
}

LossBreakdown loss_and_gradient(const VnnModel& model, const Batch& batch,
                                const LossConfig& config, Rng& rng, Vector& grad) {
  return objective(model, batch, config, rng, model.has_decoder(), &grad);
}

}  // namespace osal
