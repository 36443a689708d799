#include "osal/oracle.hpp"

#include <algorithm>
#include <cmath>

#include <spdlog/spdlog.h>

#include "osal/errors.hpp"
#include "osal/rng.hpp"

namespace osal {

namespace {

constexpr std::uint64_t kCorruptTag = 0x6e6f697379ULL;
constexpr std::uint64_t kChoiceTag = 0x63686f696365ULL;

const SampleRecord& in_distribution_record(const RecordStore& records, SampleId id) {
  const auto& r = records.at(id);
  if (r.origin.is_foreign() || !r.true_label) {
    throw ContractError("sample " + std::to_string(id.value) +
                        " is foreign; it must be answered with ood_response");
  }
  return r;
}

OracleResponse noisy_label_impl(const RecordStore& records, SampleId id, const NoiseSpec& spec,
                                bool* fell_back) {
  const auto& r = in_distribution_record(records, id);
  const ClassIndex truth = *r.true_label;
  if (!(spec.rate >= 0.0 && spec.rate <= 1.0)) throw ContractError("noise rate must lie in [0, 1]");
  const std::uint64_t key = derive_seed(spec.seed, id.value);
  if (hash_unit(derive_seed(key, kCorruptTag)) >= spec.rate) return OracleResponse::labeled(id, truth);

  std::vector<ClassIndex> candidates;
  if (spec.superclass_map.empty()) {
    if (spec.num_classes <= 0) throw ContractError("noise spec needs num_classes or a superclass map");
    for (ClassIndex c = 0; c < spec.num_classes; ++c) {
      if (c != truth) candidates.push_back(c);
    }
  } else {
    const auto it = spec.superclass_map.find(truth);
    if (it == spec.superclass_map.end()) {
      throw ContractError("no superclass for class " + std::to_string(truth));
    }
    for (const auto& [c, super] : spec.superclass_map) {
      if (c != truth && super == it->second) candidates.push_back(c);
    }
  }
  if (candidates.empty()) {
    spdlog::debug("sample {}: singleton superclass, keeping the true label", id.value);
    if (fell_back != nullptr) *fell_back = true;
    return OracleResponse::labeled(id, truth);
  }
  const double u = hash_unit(derive_seed(key, kChoiceTag));
  const auto pick = std::min(candidates.size() - 1,
                             static_cast<std::size_t>(u * static_cast<double>(candidates.size())));
  return OracleResponse::labeled(id, candidates[pick]);
}

}  // namespace

OracleResponse clean_label(const RecordStore& records, SampleId id) {
  return OracleResponse::labeled(id, *in_distribution_record(records, id).true_label);
}

OracleResponse noisy_label(const RecordStore& records, SampleId id, const NoiseSpec& spec) {
  return noisy_label_impl(records, id, spec, nullptr);
}

OracleResponse ood_response(const RecordStore& records, SampleId id) {
  if (!records.at(id).origin.is_foreign()) {
    throw ContractError("sample " + std::to_string(id.value) + " is in-distribution");
  }
  return OracleResponse::rejected(id);
}

std::string to_string(OracleKind k) {
  switch (k) {
    case OracleKind::clean: return "clean";
    case OracleKind::noisy: return "noisy";
    case OracleKind::ood: return "ood";
    case OracleKind::human: return "human";
  }
  return "?";
}

OracleKind parse_oracle_kind(const std::string& text) {
  if (text == "clean") return OracleKind::clean;
  if (text == "noisy") return OracleKind::noisy;
  if (text == "ood" || text == "ood_reject") return OracleKind::ood;
  if (text == "human") return OracleKind::human;
  throw ConfigError("unknown oracle '" + text + "' (expected clean, noisy, ood or human)");
}

QueryItem render_query_item(const SampleRecord& record, const ImageShape& shape) {
  if (record.features.size() != shape.size()) throw ShapeError("record does not match shape");
  QueryItem item;
  item.id = record.id;
  item.width = shape.width;
  item.height = shape.height;
  item.channels = shape.channels;
  item.pixels.resize(shape.size());
  const std::size_t plane = static_cast<std::size_t>(shape.height) * shape.width;
  for (int c = 0; c < shape.channels; ++c) {
    for (std::size_t p = 0; p < plane; ++p) {
      const float v = std::clamp(record.features[c * plane + p], 0.0f, 1.0f);
      item.pixels[p * shape.channels + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
  }
  return item;
}

// ---------------------------------------------------------------------------------------

SimulatedOracle::SimulatedOracle(const RecordStore& records, std::optional<NoiseSpec> noise)
    : records_(records), noise_(std::move(noise)) {}

std::vector<OracleResponse> SimulatedOracle::query(const std::vector<SampleId>& ids, int) {
  std::vector<OracleResponse> out;
  out.reserve(ids.size());
  for (auto id : ids) {
    const auto& r = records_.at(id);
    if (r.origin.is_foreign()) {
      out.push_back(ood_response(records_, id));
    } else if (noise_) {
      bool fell_back = false;
      out.push_back(noisy_label_impl(records_, id, *noise_, &fell_back));
      fallbacks_ += fell_back;
    } else {
      out.push_back(clean_label(records_, id));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------------------

void AnnotationQueue::enqueue(const std::string& run_id, int stage, int num_classes,
                              const std::vector<QueryItem>& items) {
  if (num_classes <= 0) throw ContractError("num_classes must be positive");
  {
    std::lock_guard lock(mutex_);
    for (const auto& item : items) {
      Entry e{run_id, stage, num_classes, item, OracleResponse::waiting(item.id), next_sequence_++};
      entries_.insert_or_assign(item.id, std::move(e));
    }
  }
  changed_.notify_all();
}

AnnotationQueue::SubmitStatus AnnotationQueue::submit(SampleId id, std::optional<ClassIndex> label) {
  {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(id);
    if (it == entries_.end()) return SubmitStatus::unknown_id;
    auto& e = it->second;
    if (label && (*label < 0 || *label >= e.num_classes)) return SubmitStatus::out_of_range;
    const auto next = label ? OracleResponse::labeled(id, *label) : OracleResponse::rejected(id);
    if (e.response.outcome != OracleResponse::Outcome::pending) {
      audit_.push_back({id, e.response, next});
      spdlog::info("sample {} re-annotated; last submission wins", id.value);
    }
    e.response = next;
  }
  changed_.notify_all();
  return SubmitStatus::ok;
}

void AnnotationQueue::cancel(const std::string& run_id, const std::vector<SampleId>& ids) {
  {
    std::lock_guard lock(mutex_);
    for (auto id : ids) {
      auto it = entries_.find(id);
      if (it != entries_.end() && it->second.run_id == run_id) entries_.erase(it);
    }
  }
  changed_.notify_all();
}

std::vector<AnnotationQueue::Entry> AnnotationQueue::pending() const {
  std::vector<Entry> out;
  {
    std::lock_guard lock(mutex_);
    for (const auto& [id, e] : entries_) {
      if (e.response.outcome == OracleResponse::Outcome::pending) out.push_back(e);
    }
  }
  std::sort(out.begin(), out.end(), [](const Entry& a, const Entry& b) { return a.sequence < b.sequence; });
  return out;
}

std::vector<AnnotationQueue::Entry> AnnotationQueue::answered(const std::string& run_id) const {
  std::vector<Entry> out;
  std::lock_guard lock(mutex_);
  for (const auto& [id, e] : entries_) {
    if (e.response.outcome != OracleResponse::Outcome::pending &&
        (run_id.empty() || e.run_id == run_id)) {
      out.push_back(e);
    }
  }
  return out;
}

std::optional<OracleResponse> AnnotationQueue::response(SampleId id) const {
  std::lock_guard lock(mutex_);
  auto it = entries_.find(id);
  if (it == entries_.end()) return std::nullopt;
  return it->second.response;
}

AnnotationQueue::Progress AnnotationQueue::progress(const std::string& run_id) const {
  Progress p;
  std::lock_guard lock(mutex_);
  for (const auto& [id, e] : entries_) {
    if (e.run_id != run_id) continue;
    switch (e.response.outcome) {
      case OracleResponse::Outcome::pending: ++p.pending; break;
      case OracleResponse::Outcome::label: ++p.labeled; break;
      case OracleResponse::Outcome::reject_ood: ++p.rejected; break;
    }
  }
  return p;
}

std::vector<AnnotationQueue::AuditRecord> AnnotationQueue::audit_log() const {
  std::lock_guard lock(mutex_);
  return audit_;
}

std::vector<OracleResponse> AnnotationQueue::wait_for(
    const std::vector<SampleId>& ids, std::chrono::steady_clock::time_point deadline) const {
  std::unique_lock lock(mutex_);
  auto done = [&] {
    return std::all_of(ids.begin(), ids.end(), [&](SampleId id) {
      auto it = entries_.find(id);
      return it != entries_.end() && it->second.response.outcome != OracleResponse::Outcome::pending;
    });
  };
  changed_.wait_until(lock, deadline, done);
  std::vector<OracleResponse> out;
  for (auto id : ids) {
    auto it = entries_.find(id);
    out.push_back(it == entries_.end() ? OracleResponse::waiting(id) : it->second.response);
  }
  return out;
}

}  // namespace osal
