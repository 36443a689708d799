#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "osal/types.hpp"

namespace osal {

/// Where a record came from. Foreign records never carry an in-distribution label.
struct Origin {
  enum class Kind { in_distribution, foreign };
  Kind kind = Kind::in_distribution;
  std::string dataset;  // foreign dataset name; empty for in-distribution

  static Origin in_distribution() { return {}; }
  static Origin foreign(std::string name) { return {Kind::foreign, std::move(name)}; }
  bool is_foreign() const { return kind == Kind::foreign; }
  bool operator==(const Origin&) const = default;
};

struct SampleRecord {
  SampleId id;
  std::vector<float> features;
  std::optional<ClassIndex> true_label;
  Origin origin;
};

/// Channel-major image layout of a flattened feature vector; synthetic data is 1 x 1 x d.
struct ImageShape {
  int channels = 1;
  int height = 1;
  int width = 1;

  std::size_t size() const { return static_cast<std::size_t>(channels) * height * width; }
  bool is_image() const { return height > 1 && width > 1; }
  bool operator==(const ImageShape&) const = default;
};

struct Dataset {
  std::string name;
  int num_classes = 0;
  ImageShape shape;
  std::optional<std::map<ClassIndex, int>> superclass_map;
  std::vector<SampleRecord> train_records;
  std::vector<SampleRecord> eval_records;

  std::size_t dim() const { return shape.size(); }
  std::size_t train_size() const { return train_records.size(); }

  /// Throws FormatError/LabelRangeError when a record violates the dataset invariants.
  void validate() const;
};

/// Labeled/unlabeled partition of the training pool at stage t.
class PoolState {
 public:
  const std::vector<SampleId>& labeled_ids() const { return labeled_; }
  const std::vector<SampleId>& unlabeled_ids() const { return unlabeled_; }
  const std::map<SampleId, ClassIndex>& oracle_labels() const { return oracle_labels_; }
  int stage() const { return stage_; }
  std::size_t discarded_ood_count() const { return discarded_ood_; }

  bool is_labeled(SampleId id) const { return labeled_set_.contains(id); }
  bool is_unlabeled(SampleId id) const { return unlabeled_set_.contains(id); }
  std::size_t labeled_size() const { return labeled_.size(); }
  std::size_t unlabeled_size() const { return unlabeled_.size(); }
  std::size_t total_size() const { return labeled_.size() + unlabeled_.size(); }

  /// Low-level mutators; callers go through split_initial/promote/mix_ood.
  void add_labeled(SampleId id, ClassIndex label);
  void add_unlabeled(SampleId id);
  void remove_unlabeled(const std::unordered_set<SampleId>& ids);
  void set_stage(int t) { stage_ = t; }
  void add_discarded_ood(std::size_t n) { discarded_ood_ += n; }

  /// Throws ContractError when disjointness or label coverage is broken.
  void check_invariants() const;

  bool operator==(const PoolState& other) const;

 private:
  std::vector<SampleId> labeled_;
  std::vector<SampleId> unlabeled_;
  std::unordered_set<SampleId> labeled_set_;
  std::unordered_set<SampleId> unlabeled_set_;
  std::map<SampleId, ClassIndex> oracle_labels_;
  int stage_ = 0;
  std::size_t discarded_ood_ = 0;
};

/// id -> record lookup over training records plus any mixed-in foreign records.
class RecordStore {
 public:
  RecordStore() = default;
  explicit RecordStore(const Dataset& dataset);

  void add(const SampleRecord& record);
  void add_all(std::span<const SampleRecord> records);
  const SampleRecord& at(SampleId id) const;
  const SampleRecord* find(SampleId id) const;
  std::size_t size() const { return records_.size(); }

  std::vector<const SampleRecord*> lookup(std::span<const SampleId> ids) const;

 private:
  std::vector<SampleRecord> records_;
  std::unordered_map<SampleId, std::size_t> index_;
};

enum class DatasetFormat { idx, cifar_binary, synthetic_blobs };

DatasetFormat parse_dataset_format(const std::string& text);
std::string to_string(DatasetFormat format);

/// Generator parameters for Gaussian blobs. Without explicit centers, class c sits on a
/// ring of radius `radius` in the first two coordinates at angle 2*pi*c/classes.
struct BlobConfig {
  int classes = 4;
  int n_per_class = 50;
  int eval_per_class = 0;
  int dim = 2;
  std::vector<std::vector<double>> centers;
  double stddev = 1.0;
  double radius = 6.0;
  std::vector<double> offset;  // added to every center; used for shifted foreign blobs
  std::uint64_t seed = 0;
  std::string name = "blobs";
};

/// JSON object with classes, n_per_class and optional generator fields.
BlobConfig parse_blob_config(const std::string& json_text);
BlobConfig read_blob_config(const std::filesystem::path& path);
void write_blob_config(const std::filesystem::path& path, const BlobConfig& config);
Dataset make_blobs(const BlobConfig& config);

struct IdxImages {
  std::size_t count = 0;
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> pixels;
};

/// IDX readers accept plain or gzip-compressed files.
IdxImages read_idx_images(const std::filesystem::path& path);
std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path);

/// Reads CIFAR binary batch records: `label_bytes` leading label bytes (1 for CIFAR-10,
/// 2 for CIFAR-100 coarse+fine; the last one is the class) followed by 3072 pixel bytes.
std::vector<SampleRecord> read_cifar_batch(const std::filesystem::path& path, int num_classes,
                                           int label_bytes, std::uint64_t first_id,
                                           std::map<ClassIndex, int>* superclasses = nullptr);

/// idx: directory with {train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz].
/// cifar_binary: directory with data_batch_*.bin + test_batch.bin (CIFAR-10) or train.bin +
///   test.bin (CIFAR-100).
/// synthetic_blobs: BlobConfig file.
Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format);

/// Uniform random L^0 of size m.
PoolState split_initial(const Dataset& dataset, std::size_t m, std::uint64_t seed);

/// L^0 drawn only from classes outside `excluded_classes`; U^0 keeps everything else.
PoolState make_biased_pool(const Dataset& dataset, const std::set<ClassIndex>& excluded_classes,
                           std::size_t m, std::uint64_t seed);

struct MixResult {
  PoolState pool;
  std::vector<SampleRecord> foreign_records;  // adapted to the in-distribution shape
};

/// Adds floor(fraction * N) records of `foreign` to U. Foreign ids continue after the largest
/// id used by `in_dataset`.
MixResult mix_ood(const PoolState& pool, const Dataset& in_dataset, const Dataset& foreign,
                  double fraction, std::uint64_t seed);

/// Grayscale -> RGB channel replication plus bilinear resize to `target`.
std::vector<float> adapt_features(std::span<const float> features, const ImageShape& from,
                                  const ImageShape& target);

/// Moves annotated ids from U to L and advances the stage counter.
PoolState promote(const PoolState& pool, const std::map<SampleId, ClassIndex>& annotated);
/// Same, keeping the promotion order given by `annotated`.
PoolState promote(const PoolState& pool,
                  const std::vector<std::pair<SampleId, ClassIndex>>& annotated);

/// Manifest (pool.json) plus float32 little-endian feature array (pool_features.bin) for
/// the extra records (mixed-in foreign samples).
void save_pool_checkpoint(const std::filesystem::path& dir, const PoolState& pool,
                          std::span<const SampleRecord> extra_records,
                          const std::map<std::string, std::uint64_t>& seeds = {});

struct PoolCheckpoint {
  PoolState pool;
  std::vector<SampleRecord> extra_records;
  std::map<std::string, std::uint64_t> seeds;
};

PoolCheckpoint load_pool_checkpoint(const std::filesystem::path& dir);

}  // namespace osal
