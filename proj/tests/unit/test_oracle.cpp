#include <atomic>
#include <thread>

#include "doctest.h"
#include "osal/binary_io.hpp"
#include "osal/errors.hpp"
#include "osal/oracle.hpp"

// After the Eigen-dependent headers: <resolv.h> defines a `_res` macro.
#include "httplib.h"
#include "json.hpp"

using namespace osal;
using json = nlohmann::json;
using namespace std::chrono_literals;

namespace {

/// `n` in-distribution records with labels id % classes, then `foreign` foreign records.
RecordStore make_store(std::size_t n, int classes, std::size_t foreign = 0) {
  RecordStore store;
  for (std::size_t i = 0; i < n; ++i) {
    store.add({SampleId{i}, {0.0f, 0.5f, 1.0f, 0.25f}, static_cast<int>(i % classes), {}});
  }
  for (std::size_t i = 0; i < foreign; ++i) {
    store.add({SampleId{n + i}, {1.0f, 1.0f, 1.0f, 1.0f}, std::nullopt, Origin::foreign("other")});
  }
  return store;
}

std::vector<QueryItem> items_for(std::initializer_list<std::uint64_t> ids) {
  std::vector<QueryItem> out;
  for (auto id : ids) out.push_back({SampleId{id}, {0, 128, 255, 7}, 2, 2, 1});
  return out;
}

}  // namespace

TEST_CASE("clean_label") {
  const auto store = make_store(20, 10, 2);
  CHECK(clean_label(store, SampleId{13}) == OracleResponse::labeled(SampleId{13}, 3));
  CHECK_THROWS_AS(clean_label(store, SampleId{99}), PoolMembershipError);
  CHECK_THROWS_AS(clean_label(store, SampleId{20}), ContractError);

  std::vector<SampleId> batch;
  for (std::uint64_t i = 0; i < 20; ++i) batch.push_back(SampleId{19 - i});
  SimulatedOracle oracle(store);
  const auto responses = oracle.query(batch, 0);
  REQUIRE(responses.size() == 20);
  for (std::size_t i = 0; i < 20; ++i) {
    CHECK(responses[i].id == batch[i]);
    CHECK(responses[i].label == static_cast<int>(batch[i].value % 10));
  }
}

TEST_CASE("noisy_label") {
  const auto store = make_store(10000, 20);
  NoiseSpec spec;
  spec.seed = 17;
  for (int c = 0; c < 20; ++c) spec.superclass_map[c] = c / 4;

  SUBCASE("zero noise matches the clean oracle") {
    spec.rate = 0.0;
    for (std::uint64_t i = 0; i < 10000; i += 7) {
      CHECK(noisy_label(store, SampleId{i}, spec) == clean_label(store, SampleId{i}));
    }
  }
  SUBCASE("30% noise stays inside the superclass") {
    spec.rate = 0.3;
    int corrupted = 0;
    for (std::uint64_t i = 0; i < 10000; ++i) {
      const int truth = static_cast<int>(i % 20);
      const auto r = noisy_label(store, SampleId{i}, spec);
      REQUIRE(r.outcome == OracleResponse::Outcome::label);
      if (r.label != truth) {
        ++corrupted;
        CHECK(r.label / 4 == truth / 4);
      }
      CHECK(noisy_label(store, SampleId{i}, spec) == r);
    }
    CHECK(std::abs(corrupted - 3000) <= 150);
  }
  SUBCASE("corrupted labels are spread over the other superclass members") {
    spec.rate = 1.0;
    std::map<int, int> seen;
    for (std::uint64_t i = 0; i < 10000; i += 20) ++seen[noisy_label(store, SampleId{i}, spec).label];
    CHECK(seen.size() == 3);
    CHECK_FALSE(seen.contains(0));
    for (const auto& [c, n] : seen) CHECK(n > 120);
  }
  SUBCASE("singleton superclass falls back to the true label") {
    spec.rate = 1.0;
    spec.superclass_map.clear();
    for (int c = 0; c < 20; ++c) spec.superclass_map[c] = c;
    CHECK(noisy_label(store, SampleId{5}, spec).label == 5);
    SimulatedOracle oracle(store, spec);
    oracle.query({SampleId{1}, SampleId{2}}, 0);
    CHECK(oracle.singleton_fallbacks() == 2);
  }
  SUBCASE("no superclass map means one superclass") {
    spec.rate = 1.0;
    spec.superclass_map.clear();
    spec.num_classes = 20;
    const auto r = noisy_label(store, SampleId{3}, spec);
    CHECK(r.label != 3);
    CHECK(r.label >= 0);
    CHECK(r.label < 20);
  }
  SUBCASE("a different seed corrupts a different set") {
    spec.rate = 0.3;
    NoiseSpec other = spec;
    other.seed = 18;
    int differ = 0;
    for (std::uint64_t i = 0; i < 1000; ++i) {
      differ += noisy_label(store, SampleId{i}, spec) != noisy_label(store, SampleId{i}, other);
    }
    CHECK(differ > 200);
  }
}

TEST_CASE("ood_response") {
  const auto store = make_store(10, 10, 3);
  CHECK(ood_response(store, SampleId{11}) == OracleResponse::rejected(SampleId{11}));
  CHECK_THROWS_AS(ood_response(store, SampleId{1}), ContractError);

  SimulatedOracle oracle(store);
  const auto r = oracle.query({SampleId{1}, SampleId{10}, SampleId{2}, SampleId{12}}, 0);
  CHECK(r[0].outcome == OracleResponse::Outcome::label);
  CHECK(r[1].outcome == OracleResponse::Outcome::reject_ood);
  CHECK(r[3].outcome == OracleResponse::Outcome::reject_ood);

  const auto clean = oracle.query({SampleId{1}, SampleId{2}}, 0);
  for (const auto& x : clean) CHECK(x.outcome == OracleResponse::Outcome::label);
}

TEST_CASE("render_query_item interleaves channels") {
  SampleRecord r{SampleId{4}, {0.0f, 1.0f, 0.5f, 0.2f, 0.3f, 0.4f}, 0, {}};
  const auto item = render_query_item(r, {3, 1, 2});
  CHECK(item.width == 2);
  CHECK(item.height == 1);
  CHECK(item.channels == 3);
  CHECK(item.pixels == std::vector<std::uint8_t>{0, 128, 77, 255, 51, 102});
  CHECK_THROWS_AS(render_query_item(r, {1, 2, 2}), ShapeError);
}

TEST_CASE("AnnotationQueue") {
  AnnotationQueue q;
  q.enqueue("run", 1, 10, items_for({5, 3, 9}));
  SUBCASE("poll before any submission is all pending") {
    const auto r = q.wait_for({SampleId{5}, SampleId{3}, SampleId{9}}, std::chrono::steady_clock::now());
    for (const auto& x : r) CHECK(x.outcome == OracleResponse::Outcome::pending);
    const auto p = q.pending();
    REQUIRE(p.size() == 3);
    CHECK(p[0].item.id == SampleId{5});
    CHECK(p[2].item.id == SampleId{9});
  }
  SUBCASE("labels and unknowns") {
    CHECK(q.submit(SampleId{5}, 2) == AnnotationQueue::SubmitStatus::ok);
    CHECK(q.submit(SampleId{3}, std::nullopt) == AnnotationQueue::SubmitStatus::ok);
    CHECK(q.submit(SampleId{9}, 10) == AnnotationQueue::SubmitStatus::out_of_range);
    CHECK(q.submit(SampleId{9}, -1) == AnnotationQueue::SubmitStatus::out_of_range);
    CHECK(q.submit(SampleId{77}, 1) == AnnotationQueue::SubmitStatus::unknown_id);
    const auto p = q.progress("run");
    CHECK(p.pending == 1);
    CHECK(p.labeled == 1);
    CHECK(p.rejected == 1);
    CHECK(q.response(SampleId{3})->outcome == OracleResponse::Outcome::reject_ood);
  }
  SUBCASE("last write wins and is audited") {
    q.submit(SampleId{5}, 2);
    q.submit(SampleId{5}, 4);
    CHECK(q.response(SampleId{5})->label == 4);
    const auto log = q.audit_log();
    REQUIRE(log.size() == 1);
    CHECK(log[0].previous.label == 2);
    CHECK(log[0].replacement.label == 4);
  }
  SUBCASE("wait_for returns once an annotator finishes") {
    std::thread annotator([&] {
      std::this_thread::sleep_for(20ms);
      q.submit(SampleId{5}, 1);
      q.submit(SampleId{3}, 1);
      q.submit(SampleId{9}, 1);
    });
    const auto r = q.wait_for({SampleId{5}, SampleId{3}, SampleId{9}},
                              std::chrono::steady_clock::now() + 5s);
    annotator.join();
    for (const auto& x : r) CHECK(x.outcome == OracleResponse::Outcome::label);
  }
  SUBCASE("cancel removes entries") {
    q.cancel("run", {SampleId{5}});
    CHECK(q.pending().size() == 2);
    CHECK(q.submit(SampleId{5}, 1) == AnnotationQueue::SubmitStatus::unknown_id);
  }
  SUBCASE("concurrent enqueue and submit") {
    std::atomic<bool> done{false};
    std::thread producer([&] {
      for (std::uint64_t i = 100; i < 600; ++i) q.enqueue("run", 2, 10, items_for({i}));
      done = true;
    });
    std::size_t submitted = 0;
    while (!done || !q.pending().empty()) {
      for (const auto& e : q.pending()) {
        if (q.submit(e.item.id, 1) == AnnotationQueue::SubmitStatus::ok) ++submitted;
      }
    }
    producer.join();
    CHECK(submitted == 503);
    CHECK(q.progress("run").labeled == 503);
  }
}

TEST_CASE("annotation service over HTTP") {
  auto queue = std::make_shared<AnnotationQueue>();
  OracleService service(queue);
  const int port = service.start("127.0.0.1", 0);
  REQUIRE(port > 0);
  httplib::Client client("127.0.0.1", port);

  json items = json::array();
  for (std::uint64_t i = 0; i < 10; ++i) {
    items.push_back({{"sample_id", i}, {"image_base64", base64_encode(std::vector<std::uint8_t>{1, 2, 3, 4})},
                     {"width", 2}, {"height", 2}, {"channels", 1}});
  }
  auto res = client.Post("/v1/queries",
                         json{{"run_id", "r1"}, {"stage", 3}, {"num_classes", 10}, {"items", items}}.dump(),
                         "application/json");
  REQUIRE(res);
  CHECK(res->status == 202);

  res = client.Get("/v1/queries?status=pending");
  REQUIRE(res);
  const auto pending = json::parse(res->body).at("items");
  REQUIRE(pending.size() == 10);
  CHECK(pending[0].at("sample_id") == 0);
  CHECK(pending[0].at("stage") == 3);
  CHECK(base64_decode(pending[0].at("image_base64").get<std::string>()) ==
        std::vector<std::uint8_t>{1, 2, 3, 4});

  auto label = [&](std::uint64_t id, json outcome) {
    return client.Post("/v1/labels", json{{"sample_id", id}, {"outcome", outcome}}.dump(),
                       "application/json");
  };
  for (std::uint64_t i = 0; i < 8; ++i) CHECK(label(i, {{"label", static_cast<int>(i)}})->status == 200);
  CHECK(label(8, {{"unknown", true}})->status == 200);
  CHECK(label(9, {{"label", 10}})->status == 422);
  CHECK(label(9, {{"unknown", true}})->status == 200);
  CHECK(label(42, {{"label", 1}})->status == 404);
  CHECK(client.Post("/v1/labels", "{not json", "application/json")->status == 400);

  res = client.Get("/v1/runs/r1/progress");
  REQUIRE(res);
  const auto progress = json::parse(res->body);
  CHECK(progress.at("pending") == 0);
  CHECK(progress.at("labeled") == 8);
  CHECK(progress.at("rejected") == 2);

  res = client.Get("/v1/queries?status=answered&run_id=r1");
  CHECK(json::parse(res->body).at("items").size() == 10);
  CHECK(client.Get("/v1/queries?status=bogus")->status == 400);
  service.stop();
}

TEST_CASE("HumanOracle round trip") {
  auto queue = std::make_shared<AnnotationQueue>();
  OracleService service(queue);
  const int port = service.start("127.0.0.1", 0);
  const auto store = make_store(10, 10);
  const std::string url = "http://127.0.0.1:" + std::to_string(port);
  std::vector<SampleId> ids;
  for (std::uint64_t i = 0; i < 10; ++i) ids.push_back(SampleId{i});

  SUBCASE("8 labels and 2 unknown") {
    std::thread annotator([&] {
      while (queue->pending().size() < 10) std::this_thread::sleep_for(5ms);
      for (const auto& e : queue->pending()) {
        const auto id = e.item.id.value;
        queue->submit(e.item.id, id < 8 ? std::optional<int>(static_cast<int>(id)) : std::nullopt);
      }
    });
    HumanOracle oracle(url, "run-a", store, {1, 2, 2}, 10, 10s, 10ms);
    const auto r = oracle.query(ids, 1);
    annotator.join();
    int labels = 0, rejected = 0;
    for (const auto& x : r) {
      labels += x.outcome == OracleResponse::Outcome::label;
      rejected += x.outcome == OracleResponse::Outcome::reject_ood;
    }
    CHECK(labels == 8);
    CHECK(rejected == 2);
    CHECK(r[3].label == 3);
    CHECK(queue->pending().empty());
  }
  SUBCASE("unanswered queries time out as pending and are withdrawn") {
    HumanOracle oracle(url, "run-b", store, {1, 2, 2}, 10, 150ms, 20ms);
    std::thread annotator([&] {
      while (queue->pending().size() < 10) std::this_thread::sleep_for(5ms);
      queue->submit(SampleId{0}, 0);
    });
    const auto r = oracle.query(ids, 1);
    annotator.join();
    CHECK(r[0].outcome == OracleResponse::Outcome::label);
    for (std::size_t i = 1; i < 10; ++i) CHECK(r[i].outcome == OracleResponse::Outcome::pending);
    CHECK(queue->pending().empty());
  }
  SUBCASE("unreachable service") {
    service.stop();
    HumanOracle oracle(url, "run-c", store, {1, 2, 2}, 10, 100ms, 10ms);
    CHECK_THROWS_AS(oracle.query(ids, 1), IoError);
  }
  service.stop();
}

TEST_CASE("oracle kind parsing") {
  CHECK(parse_oracle_kind("noisy") == OracleKind::noisy);
  CHECK(parse_oracle_kind("ood") == OracleKind::ood);
  CHECK(to_string(OracleKind::human) == "human");
  CHECK_THROWS_AS(parse_oracle_kind("crowd"), ConfigError);
}
