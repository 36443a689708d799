#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "osal/datapool.hpp"
#include "osal/types.hpp"

namespace osal {

struct OracleResponse {
  enum class Outcome { label, reject_ood, pending };

  SampleId id;
  Outcome outcome = Outcome::pending;
  ClassIndex label = -1;  // only meaningful for Outcome::label

  static OracleResponse labeled(SampleId id, ClassIndex c) { return {id, Outcome::label, c}; }
  static OracleResponse rejected(SampleId id) { return {id, Outcome::reject_ood, -1}; }
  static OracleResponse waiting(SampleId id) { return {id, Outcome::pending, -1}; }
  bool operator==(const OracleResponse&) const = default;
};

struct NoiseSpec {
  double rate = 0.0;
  /// class -> superclass. Empty means a single superclass holding every class.
  std::map<ClassIndex, int> superclass_map;
  std::uint64_t seed = 0;
  int num_classes = 0;
};

OracleResponse clean_label(const RecordStore& records, SampleId id);
/// Corruption is decided per (seed, id), so repeated queries for one sample agree.
OracleResponse noisy_label(const RecordStore& records, SampleId id, const NoiseSpec& spec);
OracleResponse ood_response(const RecordStore& records, SampleId id);

enum class OracleKind { clean, noisy, ood, human };
std::string to_string(OracleKind k);
OracleKind parse_oracle_kind(const std::string& text);

/// A sample as sent to a human annotator: 8-bit pixels, interleaved channels, row-major.
struct QueryItem {
  SampleId id;
  std::vector<std::uint8_t> pixels;
  int width = 1;
  int height = 1;
  int channels = 1;
};

QueryItem render_query_item(const SampleRecord& record, const ImageShape& shape);

class Oracle {
 public:
  virtual ~Oracle() = default;
  /// One response per id, in the same order.
  virtual std::vector<OracleResponse> query(const std::vector<SampleId>& ids, int stage) = 0;
};

/// Foreign samples are always answered with reject_ood; in-distribution samples get the
/// true label, or a noisy one when `noise` is set.
class SimulatedOracle : public Oracle {
 public:
  SimulatedOracle(const RecordStore& records, std::optional<NoiseSpec> noise = std::nullopt);
  std::vector<OracleResponse> query(const std::vector<SampleId>& ids, int stage) override;
  std::size_t singleton_fallbacks() const { return fallbacks_; }

 private:
  const RecordStore& records_;
  std::optional<NoiseSpec> noise_;
  std::size_t fallbacks_ = 0;
};

/// Thread-safe store behind the annotation service.
class AnnotationQueue {
 public:
  struct Entry {
    std::string run_id;
    int stage = 0;
    int num_classes = 0;
    QueryItem item;
    OracleResponse response;
    std::uint64_t sequence = 0;  // enqueue order
  };
  struct AuditRecord {
    SampleId id;
    OracleResponse previous;
    OracleResponse replacement;
  };
  struct Progress {
    std::size_t pending = 0;
    std::size_t labeled = 0;
    std::size_t rejected = 0;
  };
  enum class SubmitStatus { ok, unknown_id, out_of_range };

  /// Re-enqueueing a known id resets it to pending.
  void enqueue(const std::string& run_id, int stage, int num_classes,
               const std::vector<QueryItem>& items);
  /// `label` empty means the annotator marked the sample unknown.
  SubmitStatus submit(SampleId id, std::optional<ClassIndex> label);
  void cancel(const std::string& run_id, const std::vector<SampleId>& ids);

  std::vector<Entry> pending() const;
  std::vector<Entry> answered(const std::string& run_id) const;
  std::optional<OracleResponse> response(SampleId id) const;
  Progress progress(const std::string& run_id) const;
  std::vector<AuditRecord> audit_log() const;

  /// Blocks until every id is answered or the deadline passes.
  std::vector<OracleResponse> wait_for(const std::vector<SampleId>& ids,
                                       std::chrono::steady_clock::time_point deadline) const;

 private:
  mutable std::mutex mutex_;
  mutable std::condition_variable changed_;
  std::map<SampleId, Entry> entries_;
  std::vector<AuditRecord> audit_;
  std::uint64_t next_sequence_ = 0;
};

/// HTTP front end for an AnnotationQueue:
///   POST /v1/queries               {run_id, stage, num_classes, items:[...]}      -> 202
///   GET  /v1/queries?status=pending|answered[&run_id=]                             -> 200
///   POST /v1/queries/cancel        {run_id, sample_ids:[...]}                      -> 200
///   POST /v1/labels                {sample_id, outcome:{label:int}|{unknown:true}} -> 200/400/404/422
///   GET  /v1/runs/{run_id}/progress                                                -> 200
class OracleService {
 public:
  explicit OracleService(std::shared_ptr<AnnotationQueue> queue);
  ~OracleService();
  OracleService(const OracleService&) = delete;
  OracleService& operator=(const OracleService&) = delete;

  /// Binds and serves on a background thread; port 0 picks a free port. Returns the port.
  int start(const std::string& host, int port);
  /// Serves on the calling thread until stop() is called from elsewhere.
  void serve(const std::string& host, int port);
  void stop();
  AnnotationQueue& queue() { return *queue_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::shared_ptr<AnnotationQueue> queue_;
  std::thread thread_;
};

/// Oracle backed by a remote annotation service. Queries still pending at the deadline are
/// withdrawn and reported as pending.
class HumanOracle : public Oracle {
 public:
  HumanOracle(std::string base_url, std::string run_id, const RecordStore& records,
              ImageShape shape, int num_classes, std::chrono::milliseconds timeout,
              std::chrono::milliseconds poll_interval = std::chrono::milliseconds(200));
  std::vector<OracleResponse> query(const std::vector<SampleId>& ids, int stage) override;

 private:
  std::string base_url_;
  std::string run_id_;
  const RecordStore& records_;
  ImageShape shape_;
  int num_classes_;
  std::chrono::milliseconds timeout_;
  std::chrono::milliseconds poll_interval_;
};

}  // namespace osal
