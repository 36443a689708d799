#include "osal/datapool.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <regex>

#include "json.hpp"

#include "osal/binary_io.hpp"
#include "osal/errors.hpp"
#include "osal/rng.hpp"

namespace osal {

using json = nlohmann::json;
namespace fs = std::filesystem;

void Dataset::validate() const {
  if (num_classes <= 0) throw FormatError(name + ": num_classes must be positive");
  std::unordered_set<SampleId> train_ids;
  auto check = [&](const SampleRecord& r) {
    if (r.features.size() != dim()) {
      throw FormatError(name + ": record " + std::to_string(r.id.value) + " has dimension " +
                        std::to_string(r.features.size()) + ", expected " +
                        std::to_string(dim()));
    }
    if (r.origin.is_foreign() && r.true_label) {
      throw FormatError(name + ": foreign record carries an in-distribution label");
    }
    if (r.true_label && (*r.true_label < 0 || *r.true_label >= num_classes)) {
      throw LabelRangeError(name + ": label " + std::to_string(*r.true_label) +
                            " outside [0, " + std::to_string(num_classes) + ")");
    }
  };
  for (const auto& r : train_records) {
    check(r);
    if (!train_ids.insert(r.id).second) throw FormatError(name + ": duplicate train id");
  }
  for (const auto& r : eval_records) {
    check(r);
    if (train_ids.contains(r.id)) throw FormatError(name + ": train/eval splits share an id");
  }
  if (superclass_map) {
    for (int c = 0; c < num_classes; ++c) {
      if (!superclass_map->contains(c)) {
        throw FormatError(name + ": superclass map misses class " + std::to_string(c));
      }
    }
  }
}

// ---------------------------------------------------------------------------------------
// PoolState

void PoolState::add_labeled(SampleId id, ClassIndex label) {
  if (labeled_set_.contains(id) || unlabeled_set_.contains(id)) {
    throw PoolMembershipError("id " + std::to_string(id.value) + " already pooled");
  }
  labeled_.push_back(id);
  labeled_set_.insert(id);
  oracle_labels_[id] = label;
}

void PoolState::add_unlabeled(SampleId id) {
  if (labeled_set_.contains(id) || unlabeled_set_.contains(id)) {
    throw PoolMembershipError("id " + std::to_string(id.value) + " already pooled");
  }
  unlabeled_.push_back(id);
  unlabeled_set_.insert(id);
}

void PoolState::remove_unlabeled(const std::unordered_set<SampleId>& ids) {
  if (ids.empty()) return;
  std::erase_if(unlabeled_, [&](SampleId id) { return ids.contains(id); });
  for (auto id : ids) unlabeled_set_.erase(id);
}

void PoolState::check_invariants() const {
  if (labeled_set_.size() != labeled_.size() || unlabeled_set_.size() != unlabeled_.size()) {
    throw ContractError("pool id lists contain duplicates");
  }
  for (auto id : labeled_) {
    if (unlabeled_set_.contains(id)) throw ContractError("labeled and unlabeled pools overlap");
    if (!oracle_labels_.contains(id)) throw ContractError("labeled id without oracle label");
  }
  if (oracle_labels_.size() != labeled_.size()) {
    throw ContractError("oracle labels for ids outside the labeled pool");
  }
}

bool PoolState::operator==(const PoolState& other) const {
  return labeled_ == other.labeled_ && unlabeled_ == other.unlabeled_ &&
         oracle_labels_ == other.oracle_labels_ && stage_ == other.stage_ &&
         discarded_ood_ == other.discarded_ood_;
}

// ---------------------------------------------------------------------------------------
// RecordStore

RecordStore::RecordStore(const Dataset& dataset) { add_all(dataset.train_records); }

void RecordStore::add(const SampleRecord& record) {
  if (index_.contains(record.id)) {
    throw PoolMembershipError("duplicate record id " + std::to_string(record.id.value));
  }
  index_.emplace(record.id, records_.size());
  records_.push_back(record);
}

void RecordStore::add_all(std::span<const SampleRecord> records) {
  records_.reserve(records_.size() + records.size());
  for (const auto& r : records) add(r);
}

const SampleRecord* RecordStore::find(SampleId id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &records_[it->second];
}

const SampleRecord& RecordStore::at(SampleId id) const {
  if (const auto* r = find(id)) return *r;
  throw PoolMembershipError("unknown sample id " + std::to_string(id.value));
}

std::vector<const SampleRecord*> RecordStore::lookup(std::span<const SampleId> ids) const {
  std::vector<const SampleRecord*> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(&at(id));
  return out;
}

// ---------------------------------------------------------------------------------------
// Formats

DatasetFormat parse_dataset_format(const std::string& text) {
  if (text == "idx") return DatasetFormat::idx;
  if (text == "cifar_binary" || text == "cifar") return DatasetFormat::cifar_binary;
  if (text == "synthetic_blobs" || text == "synthetic") return DatasetFormat::synthetic_blobs;
  throw ConfigError("unknown dataset format '" + text + "'");
}

std::string to_string(DatasetFormat format) {
  switch (format) {
    case DatasetFormat::idx: return "idx";
    case DatasetFormat::cifar_binary: return "cifar_binary";
    case DatasetFormat::synthetic_blobs: return "synthetic_blobs";
  }
  return "?";
}

namespace {

std::uint32_t read_be32(const std::vector<std::uint8_t>& data, std::size_t offset) {
  return (std::uint32_t{data[offset]} << 24) | (std::uint32_t{data[offset + 1]} << 16) |
         (std::uint32_t{data[offset + 2]} << 8) | std::uint32_t{data[offset + 3]};
}

fs::path find_variant(const fs::path& dir, const std::string& stem) {
  for (const auto& candidate : {stem, stem + ".gz"}) {
    if (fs::exists(dir / candidate)) return dir / candidate;
  }
  // Some mirrors use '.' instead of '-' before "idx".
  std::string dotted = std::regex_replace(stem, std::regex("-idx"), ".idx");
  for (const auto& candidate : {dotted, dotted + ".gz"}) {
    if (fs::exists(dir / candidate)) return dir / candidate;
  }
  throw IoError("missing " + (dir / stem).string() + "[.gz]");
}

}  // namespace

IdxImages read_idx_images(const fs::path& path) {
  const auto data = read_maybe_gz(path);
  if (data.size() < 16) throw FormatError(path.string() + ": truncated IDX header");
  if (read_be32(data, 0) != 0x00000803) {
    throw FormatError(path.string() + ": bad IDX image magic");
  }
  IdxImages images;
  images.count = read_be32(data, 4);
  images.rows = static_cast<int>(read_be32(data, 8));
  images.cols = static_cast<int>(read_be32(data, 12));
  const std::size_t expected =
      images.count * static_cast<std::size_t>(images.rows) * static_cast<std::size_t>(images.cols);
  if (data.size() - 16 != expected) {
    throw FormatError(path.string() + ": header declares " + std::to_string(images.count) +
                      " images but payload has " + std::to_string(data.size() - 16) + " bytes");
  }
  images.pixels.assign(data.begin() + 16, data.end());
  return images;
}

std::vector<std::uint8_t> read_idx_labels(const fs::path& path) {
  const auto data = read_maybe_gz(path);
  if (data.size() < 8) throw FormatError(path.string() + ": truncated IDX header");
  if (read_be32(data, 0) != 0x00000801) {
    throw FormatError(path.string() + ": bad IDX label magic");
  }
  const std::size_t count = read_be32(data, 4);
  if (data.size() - 8 != count) {
    throw FormatError(path.string() + ": header declares " + std::to_string(count) +
                      " labels but payload has " + std::to_string(data.size() - 8));
  }
  return {data.begin() + 8, data.end()};
}

namespace {

std::vector<SampleRecord> idx_records(const fs::path& images_path, const fs::path& labels_path,
                                      int num_classes, std::uint64_t first_id, int& rows,
                                      int& cols) {
  const auto images = read_idx_images(images_path);
  const auto labels = read_idx_labels(labels_path);
  if (labels.size() != images.count) {
    throw FormatError(images_path.string() + ": image/label counts differ");
  }
  rows = images.rows;
  cols = images.cols;
  const std::size_t d = static_cast<std::size_t>(rows) * cols;
  std::vector<SampleRecord> records(images.count);
  for (std::size_t i = 0; i < images.count; ++i) {
    auto& r = records[i];
    r.id = SampleId{first_id + i};
    if (labels[i] >= num_classes) {
      throw LabelRangeError(labels_path.string() + ": label " + std::to_string(labels[i]) +
                            " at index " + std::to_string(i));
    }
    r.true_label = labels[i];
    r.features.resize(d);
    for (std::size_t j = 0; j < d; ++j) r.features[j] = images.pixels[i * d + j] / 255.0f;
  }
  return records;
}

}  // namespace

std::vector<SampleRecord> read_cifar_batch(const fs::path& path, int num_classes,
                                           int label_bytes, std::uint64_t first_id,
                                           std::map<ClassIndex, int>* superclasses) {
  constexpr std::size_t kPixels = 3072;
  const auto data = read_maybe_gz(path);
  const std::size_t record_size = kPixels + static_cast<std::size_t>(label_bytes);
  if (data.empty() || data.size() % record_size != 0) {
    throw FormatError(path.string() + ": size is not a multiple of the CIFAR record size");
  }
  const std::size_t count = data.size() / record_size;
  std::vector<SampleRecord> records(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint8_t* rec = data.data() + i * record_size;
    const int label = rec[label_bytes - 1];
    if (label >= num_classes) {
      throw LabelRangeError(path.string() + ": label byte " + std::to_string(label) +
                            " in record " + std::to_string(i));
    }
    if (label_bytes == 2 && superclasses != nullptr) (*superclasses)[label] = rec[0];
    auto& r = records[i];
    r.id = SampleId{first_id + i};
    r.true_label = label;
    r.features.resize(kPixels);
    for (std::size_t j = 0; j < kPixels; ++j) r.features[j] = rec[label_bytes + j] / 255.0f;
  }
  return records;
}

// ---------------------------------------------------------------------------------------
// Synthetic blobs

BlobConfig parse_blob_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(e.what());
  }
  BlobConfig c;
  try {
    c.classes = j.at("classes").get<int>();
    c.n_per_class = j.at("n_per_class").get<int>();
    c.dim = j.value("dim", c.dim);
    c.stddev = j.value("stddev", c.stddev);
    c.seed = j.value("seed", c.seed);
    c.eval_per_class = j.value("eval_per_class", c.n_per_class);
    c.radius = j.value("radius", c.radius);
    c.name = j.value("name", c.name);
    if (j.contains("centers")) c.centers = j["centers"].get<std::vector<std::vector<double>>>();
    if (j.contains("offset")) c.offset = j["offset"].get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("blob config: ") + e.what());
  }
  return c;
}

BlobConfig read_blob_config(const fs::path& path) {
  try {
    return parse_blob_config(read_text(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_blob_config(const fs::path& path, const BlobConfig& c) {
  json j = {{"name", c.name},     {"classes", c.classes}, {"n_per_class", c.n_per_class},
            {"eval_per_class", c.eval_per_class},         {"dim", c.dim},
            {"stddev", c.stddev}, {"radius", c.radius},   {"seed", c.seed}};
  if (!c.centers.empty()) j["centers"] = c.centers;
  if (!c.offset.empty()) j["offset"] = c.offset;
  write_text_atomic(path, j.dump(2) + "\n");
}

Dataset make_blobs(const BlobConfig& c) {
  if (c.classes <= 0 || c.n_per_class < 0 || c.eval_per_class < 0 || c.dim <= 0 ||
      c.stddev < 0) {
    throw FormatError("invalid blob generator parameters");
  }
  std::vector<std::vector<double>> centers = c.centers;
  if (centers.empty()) {
    for (int k = 0; k < c.classes; ++k) {
      std::vector<double> center(c.dim, 0.0);
      const double angle = 2.0 * std::numbers::pi * k / c.classes;
      if (c.dim > 1) {
        center[0] = c.radius * std::cos(angle);
        center[1] = c.radius * std::sin(angle);
      } else {
        center[0] = c.radius * k;
      }
      centers.push_back(std::move(center));
    }
  }
  if (static_cast<int>(centers.size()) != c.classes) {
    throw FormatError("blob config: expected " + std::to_string(c.classes) + " centers");
  }
  for (auto& center : centers) {
    if (static_cast<int>(center.size()) != c.dim) throw FormatError("blob center dimension");
    if (!c.offset.empty()) {
      if (static_cast<int>(c.offset.size()) != c.dim) throw FormatError("blob offset dimension");
      for (int j = 0; j < c.dim; ++j) center[j] += c.offset[j];
    }
  }

  Dataset ds;
  ds.name = c.name;
  ds.num_classes = c.classes;
  ds.shape = {1, 1, c.dim};
  Rng rng(c.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uint64_t next_id = 0;
  auto draw = [&](int per_class, std::vector<SampleRecord>& out) {
    for (int i = 0; i < per_class; ++i) {
      for (int k = 0; k < c.classes; ++k) {
        SampleRecord r;
        r.id = SampleId{next_id++};
        r.true_label = k;
        r.features.resize(c.dim);
        for (int j = 0; j < c.dim; ++j) {
          r.features[j] = static_cast<float>(centers[k][j] + c.stddev * normal(rng));
        }
        out.push_back(std::move(r));
      }
    }
  };
  draw(c.n_per_class, ds.train_records);
  draw(c.eval_per_class, ds.eval_records);
  return ds;
}

// ---------------------------------------------------------------------------------------

Dataset load_dataset(const fs::path& path, DatasetFormat format) {
  if (!fs::exists(path)) throw IoError("no such dataset path: " + path.string());
  Dataset ds;
  switch (format) {
    case DatasetFormat::idx: {
      ds.name = path.filename().string();
      ds.num_classes = 10;
      int rows = 0, cols = 0, eval_rows = 0, eval_cols = 0;
      ds.train_records = idx_records(find_variant(path, "train-images-idx3-ubyte"),
                                     find_variant(path, "train-labels-idx1-ubyte"),
                                     ds.num_classes, 0, rows, cols);
      ds.eval_records = idx_records(find_variant(path, "t10k-images-idx3-ubyte"),
                                    find_variant(path, "t10k-labels-idx1-ubyte"), ds.num_classes,
                                    ds.train_records.size(), eval_rows, eval_cols);
      if (rows != eval_rows || cols != eval_cols) {
        throw FormatError(path.string() + ": train and eval image sizes differ");
      }
      ds.shape = {1, rows, cols};
      break;
    }
    case DatasetFormat::cifar_binary: {
      ds.name = path.filename().string();
      ds.shape = {3, 32, 32};
      if (fs::exists(path / "train.bin")) {
        ds.num_classes = 100;
        std::map<ClassIndex, int> superclasses;
        ds.train_records = read_cifar_batch(path / "train.bin", 100, 2, 0, &superclasses);
        ds.eval_records = read_cifar_batch(path / "test.bin", 100, 2, ds.train_records.size(),
                                           &superclasses);
        ds.superclass_map = std::move(superclasses);
      } else {
        ds.num_classes = 10;
        for (int b = 1;; ++b) {
          const auto batch = path / ("data_batch_" + std::to_string(b) + ".bin");
          if (!fs::exists(batch)) {
            if (b == 1) throw IoError("no CIFAR batches under " + path.string());
            break;
          }
          auto recs = read_cifar_batch(batch, 10, 1, ds.train_records.size());
          ds.train_records.insert(ds.train_records.end(), std::make_move_iterator(recs.begin()),
                                  std::make_move_iterator(recs.end()));
        }
        ds.eval_records = read_cifar_batch(path / "test_batch.bin", 10, 1,
                                           ds.train_records.size());
      }
      break;
    }
    case DatasetFormat::synthetic_blobs:
      ds = make_blobs(read_blob_config(path));
      break;
  }
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------------------
// Pool construction

PoolState make_biased_pool(const Dataset& dataset, const std::set<ClassIndex>& excluded_classes,
                           std::size_t m, std::uint64_t seed) {
  const std::size_t n = dataset.train_size();
  if (m == 0 || m >= n) {
    throw BudgetError("initial pool size " + std::to_string(m) + " must lie in (0, " +
                      std::to_string(n) + ")");
  }
  if (static_cast<int>(excluded_classes.size()) >= dataset.num_classes) {
    throw BudgetError("every class is excluded from the initial pool");
  }
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = dataset.train_records[i];
    if (!r.true_label) throw ContractError("initial pool draws need ground-truth labels");
    if (!excluded_classes.contains(*r.true_label)) eligible.push_back(i);
  }
  if (eligible.size() < m) {
    throw BudgetError("only " + std::to_string(eligible.size()) +
                      " eligible samples for an initial pool of " + std::to_string(m));
  }
  Rng rng(derive_seed(seed, 0x1));
  partial_shuffle(eligible, m, rng);

  PoolState pool;
  std::unordered_set<std::size_t> chosen;
  for (std::size_t k = 0; k < m; ++k) {
    const auto& r = dataset.train_records[eligible[k]];
    pool.add_labeled(r.id, *r.true_label);
    chosen.insert(eligible[k]);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!chosen.contains(i)) pool.add_unlabeled(dataset.train_records[i].id);
  }
  return pool;
}

PoolState split_initial(const Dataset& dataset, std::size_t m, std::uint64_t seed) {
  return make_biased_pool(dataset, {}, m, seed);
}

std::vector<float> adapt_features(std::span<const float> features, const ImageShape& from,
                                  const ImageShape& target) {
  if (features.size() != from.size()) throw ShapeError("features do not match source shape");
  if (from == target) return {features.begin(), features.end()};
  if (!from.is_image() || !target.is_image()) {
    throw ShapeError("cannot adapt non-image features of dimension " +
                     std::to_string(from.size()) + " to " + std::to_string(target.size()));
  }
  // Channel adaptation first, at the source resolution.
  std::vector<float> chan;
  const std::size_t plane = static_cast<std::size_t>(from.height) * from.width;
  if (from.channels == target.channels) {
    chan.assign(features.begin(), features.end());
  } else if (from.channels == 1) {
    chan.reserve(plane * target.channels);
    for (int c = 0; c < target.channels; ++c) chan.insert(chan.end(), features.begin(), features.end());
  } else if (target.channels == 1) {
    chan.assign(plane, 0.0f);
    for (int c = 0; c < from.channels; ++c) {
      for (std::size_t p = 0; p < plane; ++p) chan[p] += features[c * plane + p] / from.channels;
    }
  } else {
    throw ShapeError("cannot map " + std::to_string(from.channels) + " channels to " +
                     std::to_string(target.channels));
  }
  if (from.height == target.height && from.width == target.width) return chan;

  // Bilinear resize with half-pixel centers.
  std::vector<float> out(target.size());
  const double sy = static_cast<double>(from.height) / target.height;
  const double sx = static_cast<double>(from.width) / target.width;
  for (int c = 0; c < target.channels; ++c) {
    const float* src = chan.data() + c * plane;
    for (int y = 0; y < target.height; ++y) {
      const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, from.height - 1.0);
      const int y0 = static_cast<int>(fy);
      const int y1 = std::min(y0 + 1, from.height - 1);
      const double wy = fy - y0;
      for (int x = 0; x < target.width; ++x) {
        const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, from.width - 1.0);
        const int x0 = static_cast<int>(fx);
        const int x1 = std::min(x0 + 1, from.width - 1);
        const double wx = fx - x0;
        const double top = (1 - wx) * src[y0 * from.width + x0] + wx * src[y0 * from.width + x1];
        const double bot = (1 - wx) * src[y1 * from.width + x0] + wx * src[y1 * from.width + x1];
        out[(static_cast<std::size_t>(c) * target.height + y) * target.width + x] =
            static_cast<float>((1 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

MixResult mix_ood(const PoolState& pool, const Dataset& in_dataset, const Dataset& foreign,
                  double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ContractError("OOD fraction must lie in (0, 1)");
  }
  const auto count =
      static_cast<std::size_t>(std::floor(fraction * in_dataset.train_size() + 1e-9));
  MixResult result{pool, {}};
  if (count == 0) return result;
  if (count > foreign.train_size()) {
    throw BudgetError("foreign dataset has only " + std::to_string(foreign.train_size()) +
                      " records, " + std::to_string(count) + " requested");
  }

  std::uint64_t next_id = 0;
  for (const auto* split : {&in_dataset.train_records, &in_dataset.eval_records}) {
    for (const auto& r : *split) next_id = std::max(next_id, r.id.value + 1);
  }
  std::vector<std::size_t> order(foreign.train_size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, 0x2));
  partial_shuffle(order, count, rng);

  result.foreign_records.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const auto& src = foreign.train_records[order[k]];
    SampleRecord r;
    r.id = SampleId{next_id + k};
    r.origin = Origin::foreign(foreign.name);
    r.features = adapt_features(src.features, foreign.shape, in_dataset.shape);
    if (r.features.size() != in_dataset.dim()) throw ShapeError("adapted foreign dimension");
    result.pool.add_unlabeled(r.id);
    result.foreign_records.push_back(std::move(r));
  }
  return result;
}

PoolState promote(const PoolState& pool,
                  const std::vector<std::pair<SampleId, ClassIndex>>& annotated) {
  PoolState next = pool;
  std::unordered_set<SampleId> moved;
  for (const auto& [id, label] : annotated) {
    if (pool.is_labeled(id) || moved.contains(id)) {
      throw PoolMembershipError("id " + std::to_string(id.value) + " is already labeled");
    }
    if (!pool.is_unlabeled(id)) {
      throw PoolMembershipError("id " + std::to_string(id.value) + " is not in the unlabeled pool");
    }
    moved.insert(id);
  }
  next.remove_unlabeled(moved);
  for (const auto& [id, label] : annotated) next.add_labeled(id, label);
  next.set_stage(pool.stage() + 1);
  return next;
}

PoolState promote(const PoolState& pool, const std::map<SampleId, ClassIndex>& annotated) {
  return promote(pool, std::vector<std::pair<SampleId, ClassIndex>>(annotated.begin(),
                                                                   annotated.end()));
}

// ---------------------------------------------------------------------------------------
// Checkpoints

void save_pool_checkpoint(const fs::path& dir, const PoolState& pool,
                          std::span<const SampleRecord> extra_records,
                          const std::map<std::string, std::uint64_t>& seeds) {
  fs::create_directories(dir);
  json j;
  j["stage"] = pool.stage();
  j["discarded_ood_count"] = pool.discarded_ood_count();
  j["seeds"] = seeds;
  auto ids = [](const std::vector<SampleId>& v) {
    json a = json::array();
    for (auto id : v) a.push_back(id.value);
    return a;
  };
  j["labeled_ids"] = ids(pool.labeled_ids());
  j["unlabeled_ids"] = ids(pool.unlabeled_ids());
  json labels = json::array();
  for (auto id : pool.labeled_ids()) labels.push_back({id.value, pool.oracle_labels().at(id)});
  j["oracle_labels"] = labels;

  json extras = json::array();
  std::vector<float> features;
  std::size_t dim = extra_records.empty() ? 0 : extra_records.front().features.size();
  for (const auto& r : extra_records) {
    if (r.features.size() != dim) throw ShapeError("extra records differ in dimension");
    json e = {{"id", r.id.value}, {"foreign", r.origin.is_foreign()}, {"dataset", r.origin.dataset}};
    if (r.true_label) e["label"] = *r.true_label;
    extras.push_back(e);
    features.insert(features.end(), r.features.begin(), r.features.end());
  }
  j["extra_records"] = extras;
  j["extra_dim"] = dim;
  write_f32_le(dir / "pool_features.bin", features);
  write_text_atomic(dir / "pool.json", j.dump(1) + "\n");
}

PoolCheckpoint load_pool_checkpoint(const fs::path& dir) {
  json j;
  try {
    j = json::parse(read_text(dir / "pool.json"));
  } catch (const json::parse_error& e) {
    throw FormatError((dir / "pool.json").string() + ": " + e.what());
  }
  PoolCheckpoint cp;
  try {
    std::map<std::uint64_t, ClassIndex> labels;
    for (const auto& pair : j.at("oracle_labels")) {
      labels[pair.at(0).get<std::uint64_t>()] = pair.at(1).get<ClassIndex>();
    }
    for (const auto& v : j.at("labeled_ids")) {
      const auto id = v.get<std::uint64_t>();
      if (!labels.contains(id)) throw FormatError("labeled id without oracle label");
      cp.pool.add_labeled(SampleId{id}, labels.at(id));
    }
    for (const auto& v : j.at("unlabeled_ids")) cp.pool.add_unlabeled(SampleId{v.get<std::uint64_t>()});
    cp.pool.set_stage(j.at("stage").get<int>());
    cp.pool.add_discarded_ood(j.at("discarded_ood_count").get<std::size_t>());
    cp.seeds = j.value("seeds", std::map<std::string, std::uint64_t>{});

    const auto dim = j.at("extra_dim").get<std::size_t>();
    const auto features = read_f32_le(dir / "pool_features.bin");
    const auto& extras = j.at("extra_records");
    if (features.size() != dim * extras.size()) throw FormatError("pool feature array size");
    std::size_t k = 0;
    for (const auto& e : extras) {
      SampleRecord r;
      r.id = SampleId{e.at("id").get<std::uint64_t>()};
      r.origin = e.at("foreign").get<bool>() ? Origin::foreign(e.value("dataset", ""))
                                             : Origin::in_distribution();
      if (e.contains("label")) r.true_label = e["label"].get<ClassIndex>();
      r.features.assign(features.begin() + k * dim, features.begin() + (k + 1) * dim);
      cp.extra_records.push_back(std::move(r));
      ++k;
    }
  } catch (const json::exception& e) {
    throw FormatError((dir / "pool.json").string() + ": " + e.what());
  }
  cp.pool.check_invariants();
  return cp;
}

}  // namespace osal
