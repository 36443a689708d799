#include "osal/binary_io.hpp"
#include "osal/errors.hpp"
#include "osal/oracle.hpp"

// After the Eigen-dependent headers: <resolv.h> defines a `_res` macro.
#include <spdlog/spdlog.h>

#include "httplib.h"
#include "json.hpp"

namespace osal {

using json = nlohmann::json;

namespace {

json outcome_json(const OracleResponse& r) {
  switch (r.outcome) {
    case OracleResponse::Outcome::label: return {{"label", r.label}};
    case OracleResponse::Outcome::reject_ood: return {{"unknown", true}};
    case OracleResponse::Outcome::pending: return nullptr;
  }
  return nullptr;
}

json entry_json(const AnnotationQueue::Entry& e, bool with_image) {
  json j = {{"sample_id", e.item.id.value},
            {"run_id", e.run_id},
            {"stage", e.stage},
            {"num_classes", e.num_classes}};
  if (with_image) {
    j["image_base64"] = base64_encode(e.item.pixels);
    j["width"] = e.item.width;
    j["height"] = e.item.height;
    j["channels"] = e.item.channels;
  } else {
    j["outcome"] = outcome_json(e.response);
  }
  return j;
}

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void bad_request(httplib::Response& res, const std::string& message) {
  reply(res, 400, {{"error", message}});
}

}  // namespace

struct OracleService::Impl {
  httplib::Server server;
};

OracleService::OracleService(std::shared_ptr<AnnotationQueue> queue)
    : impl_(std::make_unique<Impl>()), queue_(std::move(queue)) {
  auto& srv = impl_->server;
  auto* q = queue_.get();

  srv.Post("/v1/queries", [q](const httplib::Request& req, httplib::Response& res) {
    try {
      const auto body = json::parse(req.body);
      std::vector<QueryItem> items;
      for (const auto& it : body.at("items")) {
        QueryItem item;
        item.id = SampleId{it.at("sample_id").get<std::uint64_t>()};
        item.pixels = base64_decode(it.at("image_base64").get<std::string>());
        item.width = it.at("width").get<int>();
        item.height = it.at("height").get<int>();
        item.channels = it.at("channels").get<int>();
        if (item.pixels.size() != static_cast<std::size_t>(item.width) * item.height * item.channels) {
          return bad_request(res, "image payload does not match width*height*channels");
        }
        items.push_back(std::move(item));
      }
      q->enqueue(body.at("run_id").get<std::string>(), body.at("stage").get<int>(),
                 body.value("num_classes", 10), items);
      reply(res, 202, {{"accepted", items.size()}});
    } catch (const std::exception& e) {
      bad_request(res, e.what());
    }
  });

  srv.Get("/v1/queries", [q](const httplib::Request& req, httplib::Response& res) {
    const auto status = req.has_param("status") ? req.get_param_value("status") : "pending";
    const auto run_id = req.has_param("run_id") ? req.get_param_value("run_id") : "";
    json items = json::array();
    if (status == "pending") {
      for (const auto& e : q->pending()) {
        if (run_id.empty() || e.run_id == run_id) items.push_back(entry_json(e, true));
      }
    } else if (status == "answered") {
      for (const auto& e : q->answered(run_id)) items.push_back(entry_json(e, false));
    } else {
      return bad_request(res, "status must be pending or answered");
    }
    reply(res, 200, {{"items", items}});
  });

  srv.Post("/v1/queries/cancel", [q](const httplib::Request& req, httplib::Response& res) {
    try {
      const auto body = json::parse(req.body);
      std::vector<SampleId> ids;
      for (const auto& v : body.at("sample_ids")) ids.push_back(SampleId{v.get<std::uint64_t>()});
      q->cancel(body.at("run_id").get<std::string>(), ids);
      reply(res, 200, {{"cancelled", ids.size()}});
    } catch (const std::exception& e) {
      bad_request(res, e.what());
    }
  });

  srv.Post("/v1/labels", [q](const httplib::Request& req, httplib::Response& res) {
    std::optional<ClassIndex> label;
    SampleId id;
    try {
      const auto body = json::parse(req.body);
      id = SampleId{body.at("sample_id").get<std::uint64_t>()};
      const auto& outcome = body.at("outcome");
      if (outcome.contains("label")) {
        label = outcome.at("label").get<int>();
      } else if (!outcome.value("unknown", false)) {
        return bad_request(res, "outcome must be {\"label\": int} or {\"unknown\": true}");
      }
    } catch (const std::exception& e) {
      return bad_request(res, e.what());
    }
    switch (q->submit(id, label)) {
      case AnnotationQueue::SubmitStatus::ok:
        return reply(res, 200, {{"sample_id", id.value}, {"outcome", outcome_json(*q->response(id))}});
      case AnnotationQueue::SubmitStatus::unknown_id:
        return reply(res, 404, {{"error", "no query for sample " + std::to_string(id.value)}});
      case AnnotationQueue::SubmitStatus::out_of_range:
        return reply(res, 422, {{"error", "label out of range"}});
    }
  });

  srv.Get(R"(/v1/runs/([^/]+)/progress)", [q](const httplib::Request& req, httplib::Response& res) {
    const std::string run_id = req.matches[1];
    const auto p = q->progress(run_id);
    reply(res, 200, {{"run_id", run_id}, {"pending", p.pending}, {"labeled", p.labeled},
                     {"rejected", p.rejected}});
  });
}

OracleService::~OracleService() { stop(); }

int OracleService::start(const std::string& host, int port) {
  auto& srv = impl_->server;
  const int bound = port == 0 ? srv.bind_to_any_port(host) : (srv.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([&srv] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  return bound;
}

void OracleService::serve(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) {
    throw IoError("cannot serve on " + host + ":" + std::to_string(port));
  }
}

void OracleService::stop() {
  impl_->server.stop();
  if (thread_.joinable()) thread_.join();
}

// ---------------------------------------------------------------------------------------

HumanOracle::HumanOracle(std::string base_url, std::string run_id, const RecordStore& records,
                         ImageShape shape, int num_classes, std::chrono::milliseconds timeout,
                         std::chrono::milliseconds poll_interval)
    : base_url_(std::move(base_url)),
      run_id_(std::move(run_id)),
      records_(records),
      shape_(shape),
      num_classes_(num_classes),
      timeout_(timeout),
      poll_interval_(poll_interval) {}

std::vector<OracleResponse> HumanOracle::query(const std::vector<SampleId>& ids, int stage) {
  std::vector<OracleResponse> out;
  for (auto id : ids) out.push_back(OracleResponse::waiting(id));
  if (ids.empty()) return out;

  httplib::Client client(base_url_);
  client.set_connection_timeout(std::chrono::seconds(5));
  json items = json::array();
  for (auto id : ids) {
    const auto item = render_query_item(records_.at(id), shape_);
    items.push_back({{"sample_id", id.value},
                     {"image_base64", base64_encode(item.pixels)},
                     {"width", item.width},
                     {"height", item.height},
                     {"channels", item.channels}});
  }
  const json body = {{"run_id", run_id_}, {"stage", stage}, {"num_classes", num_classes_},
                     {"items", items}};
  auto posted = client.Post("/v1/queries", body.dump(), "application/json");
  if (!posted || posted->status != 202) {
    throw IoError("annotation service at " + base_url_ + " rejected the query batch");
  }

  std::map<SampleId, std::size_t> slot;
  for (std::size_t i = 0; i < ids.size(); ++i) slot[ids[i]] = i;
  std::size_t remaining = ids.size();
  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  const std::string path = "/v1/queries?status=answered&run_id=" + httplib::detail::encode_url(run_id_);
  while (true) {
    if (auto res = client.Get(path); res && res->status == 200) {
      const auto answered = json::parse(res->body);
      for (const auto& e : answered.at("items")) {
        const SampleId id{e.at("sample_id").get<std::uint64_t>()};
        auto it = slot.find(id);
        if (it == slot.end()) continue;
        auto& r = out[it->second];
        const bool was_pending = r.outcome == OracleResponse::Outcome::pending;
        const auto& o = e.at("outcome");
        r = o.contains("label") ? OracleResponse::labeled(id, o.at("label").get<int>())
                                : OracleResponse::rejected(id);
        if (was_pending) --remaining;
      }
    } else {
      spdlog::warn("annotation service at {} unreachable; retrying", base_url_);
    }
    if (remaining == 0 || std::chrono::steady_clock::now() >= deadline) break;
    std::this_thread::sleep_for(poll_interval_);
  }

  if (remaining > 0) {
    json late = json::array();
    for (const auto& r : out) {
      if (r.outcome == OracleResponse::Outcome::pending) late.push_back(r.id.value);
    }
    spdlog::warn("{} queries unanswered at the deadline; returning them to the pool", remaining);
    client.Post("/v1/queries/cancel", json{{"run_id", run_id_}, {"sample_ids", late}}.dump(),
                "application/json");
  }
  for (auto& r : out) {
    if (r.outcome == OracleResponse::Outcome::label && (r.label < 0 || r.label >= num_classes_)) {
      throw LabelRangeError("annotation service returned label " + std::to_string(r.label));
    }
  }
  return out;
}

}  // namespace osal
