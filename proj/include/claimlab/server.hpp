#pragma once

// HTTP API over the Engine. Bodies are JSON; see docs/api.md.
//
//   POST /claims/ingest    POST /search      POST /generate
//   POST /simulations      GET /simulations/{id}
//   POST /evaluate         GET /healthz

#include <atomic>
#include <cstdio>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "claimlab/detail/httplib.hpp"
#include <json.hpp>

#include "claimlab/engine.hpp"

namespace claimlab {

// --- request decoding ----------------------------------------------------------

namespace detail {

template <class T>
std::optional<T> opt(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<T>();
}

inline TagMap tag_map(const json& j, const char* key) {
  TagMap out;
  if (auto it = j.find(key); it != j.end() && !it->is_null()) out = it->get<TagMap>();
  return out;
}

}  // namespace detail

inline SearchRequest search_request_from_json(const json& j) {
  SearchRequest r;
  r.text = detail::opt<std::string>(j, "text");
  r.image_embedding = detail::opt<std::vector<double>>(j, "image_embedding");
  r.image_ref = detail::opt<std::string>(j, "image_ref");
  r.weight = detail::opt<double>(j, "weight");
  if (auto k = detail::opt<long long>(j, "k")) {
    if (*k < 1) throw ValidationError("k must be at least 1");
    r.k = static_cast<std::size_t>(*k);
  }
  r.filters = detail::tag_map(j, "filters");
  if (auto s = detail::opt<std::string>(j, "source")) r.source = parse_claim_source(*s);
  if (auto t = detail::opt<std::string>(j, "target")) {
    if (*t == "text") r.target = SearchTarget::ClaimText;
    else if (*t == "image") r.target = SearchTarget::ClaimImage;
    else throw ValidationError("target must be 'text' or 'image'");
  }
  return r;
}

inline SimulationRequest simulation_request_from_json(const json& j) {
  SimulationRequest r;
  r.claim_ids = j.at("claim_ids").get<std::vector<std::string>>();
  r.rounds = detail::opt<std::size_t>(j, "rounds");
  r.set_size = detail::opt<std::size_t>(j, "set_size");
  r.seed = detail::opt<std::uint64_t>(j, "seed");
  r.alpha = detail::opt<double>(j, "alpha");
  if (auto s = detail::opt<std::string>(j, "respondent")) r.respondent = parse_respondent_kind(*s);
  r.temperature = detail::opt<double>(j, "temperature");
  if (auto u = detail::opt<Utilities>(j, "utilities")) r.utilities = *u;
  if (j.contains("profile")) r.profile = profile_from_json(j.at("profile"));
  if (auto n = detail::opt<std::size_t>(j, "icl_count")) r.icl_count = *n;
  return r;
}

inline GenerateRequest generate_request_from_json(const json& j) {
  GenerateRequest r;
  r.product_description = j.at("product_description").get<std::string>();
  r.profile = profile_from_json(j.at("profile"));
  if (auto m = detail::opt<std::string>(j, "icl_method")) r.icl = parse_generation_icl(*m);
  if (auto n = detail::opt<std::size_t>(j, "count")) r.count = *n;
  if (auto n = detail::opt<std::size_t>(j, "icl_count")) r.icl_count = *n;
  return r;
}

inline json evaluate_json(const json& j) {
  const auto predicted = j.at("predicted").get<Scores>();
  const auto truth = j.at("truth").get<Scores>();
  std::vector<std::size_t> top = detail::opt<std::vector<std::size_t>>(j, "top").value_or(std::vector<std::size_t>{});
  if (predicted.size() != truth.size()) throw ValidationError("predicted and truth cover different ids");
  for (const auto& [id, s] : predicted)
    if (!truth.contains(id)) throw ValidationError("id '" + id + "' missing from truth");
  return to_json(evaluate_ranking(predicted, truth, top));
}

// --- simulation jobs -----------------------------------------------------------

enum class JobStatus { Pending, Running, Done, Failed };

inline std::string_view to_string(JobStatus s) {
  switch (s) {
    case JobStatus::Pending: return "pending";
    case JobStatus::Running: return "running";
    case JobStatus::Done: return "done";
    case JobStatus::Failed: return "failed";
  }
  return "unknown";
}

struct SimulationJob {
  std::string job_id;
  JobStatus status = JobStatus::Pending;
  std::optional<json> result;  // present iff Done
  std::string error;           // set iff Failed
  std::string error_kind;
};

inline std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const ValidationError*>(&e)) return "validation";
  if (dynamic_cast<const NotFoundError*>(&e)) return "not_found";
  if (dynamic_cast<const TransportError*>(&e)) return "transport";
  if (dynamic_cast<const ReplyParseError*>(&e)) return "reply_parse";
  if (dynamic_cast<const DomainError*>(&e)) return "domain";
  if (dynamic_cast<const IoError*>(&e)) return "io";
  if (dynamic_cast<const json::exception*>(&e)) return "validation";
  return "internal";
}

inline json to_json(const SimulationJob& job) {
  json j{{"job_id", job.job_id}, {"status", std::string(to_string(job.status))}};
  if (job.result) j["result"] = *job.result;
  if (job.status == JobStatus::Failed) j["error"] = {{"kind", job.error_kind}, {"message", job.error}};
  return j;
}

// Runs each submitted simulation on its own thread; jobs are independent.
class JobManager {
 public:
  explicit JobManager(Engine& engine) : engine_(engine) {}
  JobManager(const JobManager&) = delete;
  JobManager& operator=(const JobManager&) = delete;
  ~JobManager() {
    std::vector<std::thread> threads;
    {
      std::lock_guard lock(mutex_);
      threads.swap(threads_);
    }
    for (auto& t : threads) t.join();
  }

  std::string submit(SimulationRequest request) {
    std::lock_guard lock(mutex_);
    char buf[32];
    std::snprintf(buf, sizeof buf, "sim-%06zu", ++counter_);
    std::string id = buf;
    SimulationJob job;
    job.job_id = id;
    jobs_[id] = std::move(job);
    threads_.emplace_back([this, id, request = std::move(request)] { run(id, request); });
    return id;
  }

  std::optional<SimulationJob> get(const std::string& id) const {
    std::lock_guard lock(mutex_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
  }

 private:
  void run(const std::string& id, const SimulationRequest& request) {
    set(id, [](SimulationJob& j) { j.status = JobStatus::Running; });
    try {
      json result = to_json(engine_.simulate(request));
      set(id, [&](SimulationJob& j) {
        j.result = std::move(result);
        j.status = JobStatus::Done;
      });
    } catch (const std::exception& e) {
      set(id, [&](SimulationJob& j) {
        j.status = JobStatus::Failed;
        j.error = e.what();
        j.error_kind = error_kind(e);
      });
    }
  }

  template <class F>
  void set(const std::string& id, F&& f) {
    std::lock_guard lock(mutex_);
    f(jobs_.at(id));
  }

  Engine& engine_;
  mutable std::mutex mutex_;
  std::map<std::string, SimulationJob> jobs_;
  std::vector<std::thread> threads_;
  std::size_t counter_ = 0;
};

// --- HTTP ----------------------------------------------------------------------

class Server {
 public:
  explicit Server(Engine& engine) : engine_(engine), jobs_(engine) { routes(); }

  bool bind(const std::string& host, int port) { return http_.bind_to_port(host, port); }
  int bind_any_port(const std::string& host) { return http_.bind_to_any_port(host); }
  bool listen_after_bind() { return http_.listen_after_bind(); }
  bool listen(const std::string& host, int port) { return http_.listen(host, port); }
  void stop() { http_.stop(); }
  void wait_until_ready() { http_.wait_until_ready(); }
  JobManager& jobs() { return jobs_; }

 private:
  static void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void reply_error(httplib::Response& res, const std::exception& e) {
    const auto kind = error_kind(e);
    int status = 500;
    if (kind == "validation" || kind == "domain") status = 400;
    else if (kind == "not_found") status = 404;
    else if (kind == "transport" || kind == "reply_parse") status = 502;
    reply(res, status, json{{"error", {{"kind", kind}, {"message", e.what()}}}});
  }

  template <class F>
  static httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const std::exception& e) {
        reply_error(res, e);
      }
    };
  }

  static json body_of(const httplib::Request& req) {
    try {
      return json::parse(req.body);
    } catch (const json::exception& e) {
      throw ValidationError(std::string("request body is not JSON: ") + e.what());
    }
  }

  void routes() {
    http_.Get("/healthz", guarded([](const auto&, auto& res) { reply(res, 200, json{{"status", "ok"}}); }));

    http_.Post("/claims/ingest", guarded([this](const auto& req, auto& res) {
      const json body = body_of(req);
      IngestReport report;
      if (body.contains("records")) {
        std::stringstream lines;
        for (const auto& r : body.at("records")) lines << r.dump() << '\n';
        report = engine_.ingest_claims(lines);
      } else {
        const auto format = body.value("format", std::string("claims"));
        if (format != "claims" && format != "study") throw ValidationError("format must be 'claims' or 'study'");
        report = engine_.ingest(body.at("path").get<std::string>(),
                                format == "claims" ? RecordFormat::Claims : RecordFormat::Study);
      }
      json rejected = json::array();
      for (const auto& r : report.rejections) rejected.push_back({{"line", r.line}, {"reason", r.reason}});
      reply(res, 200, json{{"loaded", report.loaded}, {"rejected", rejected}});
    }));

    http_.Post("/search", guarded([this](const auto& req, auto& res) {
      json hits = json::array();
      for (const auto& h : engine_.search(search_request_from_json(body_of(req)))) hits.push_back(to_json(h));
      reply(res, 200, json{{"hits", hits}});
    }));

    http_.Post("/generate", guarded([this](const auto& req, auto& res) {
      reply(res, 200, json{{"claims", engine_.generate(generate_request_from_json(body_of(req)))}});
    }));

    http_.Post("/simulations", guarded([this](const auto& req, auto& res) {
      auto request = simulation_request_from_json(body_of(req));
      engine_.resolve(request);  // reject invalid requests before queueing
      reply(res, 202, json{{"job_id", jobs_.submit(std::move(request))}});
    }));

    http_.Get(R"(/simulations/([A-Za-z0-9_-]+))", guarded([this](const auto& req, auto& res) {
      auto job = jobs_.get(req.matches[1].str());
      if (!job) throw NotFoundError("no simulation job '" + req.matches[1].str() + "'");
      reply(res, 200, to_json(*job));
    }));

    http_.Post("/evaluate", guarded([this](const auto& req, auto& res) { reply(res, 200, evaluate_json(body_of(req))); }));
  }

  Engine& engine_;
  JobManager jobs_;
  httplib::Server http_;
};

}  // namespace claimlab
