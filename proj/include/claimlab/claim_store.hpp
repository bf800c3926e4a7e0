#pragma once

// Claim records, historical MaxDiff studies and the in-memory store that
// indexes them. Records live in line-delimited JSON files (see
// docs/formats.md); the store is reloaded from those files at startup.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <istream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "claimlab/errors.hpp"
#include "claimlab/io.hpp"

namespace claimlab {

using json = nlohmann::json;
using TagMap = std::map<std::string, std::string>;

enum class ClaimSource { ClaimLog, MaxDiffStudy, Generated, Manual };

inline std::string_view to_string(ClaimSource s) {
  switch (s) {
    case ClaimSource::ClaimLog: return "claim_log";
    case ClaimSource::MaxDiffStudy: return "maxdiff_study";
    case ClaimSource::Generated: return "generated";
    case ClaimSource::Manual: return "manual";
  }
  return "unknown";
}

inline ClaimSource parse_claim_source(std::string_view s) {
  if (s == "claim_log") return ClaimSource::ClaimLog;
  if (s == "maxdiff_study") return ClaimSource::MaxDiffStudy;
  if (s == "generated") return ClaimSource::Generated;
  if (s == "manual") return ClaimSource::Manual;
  throw ValidationError("unknown claim source '" + std::string(s) + "'");
}

inline std::string trim(std::string_view s) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return std::string(s);
}

struct Claim {
  std::string id;
  std::string text;
  ClaimSource source = ClaimSource::Manual;
  std::optional<std::string> study_id;
  std::optional<std::string> claim_log_id;
  TagMap tags;
  std::optional<std::string> image_ref;
  // Preference likelihood from a completed MaxDiff study.
  std::optional<double> score;

  friend bool operator==(const Claim&, const Claim&) = default;
};

inline void validate(const Claim& c) {
  if (trim(c.id).empty()) throw ValidationError("claim id is empty");
  if (trim(c.text).empty()) throw ValidationError("claim '" + c.id + "' has empty text");
  if (c.score && !(*c.score >= 0.0 && *c.score <= 1.0))
    throw ValidationError("claim '" + c.id + "' score outside [0,1]");
  if (c.source == ClaimSource::ClaimLog && !c.claim_log_id)
    throw ValidationError("claim '" + c.id + "' from claim log lacks claim_log_id");
  if (c.source == ClaimSource::MaxDiffStudy && !c.study_id)
    throw ValidationError("claim '" + c.id + "' from MaxDiff study lacks study_id");
}

inline json to_json(const Claim& c) {
  json j;
  j["id"] = c.id;
  j["text"] = c.text;
  j["source"] = std::string(to_string(c.source));
  if (c.study_id) j["study_id"] = *c.study_id;
  if (c.claim_log_id) j["claim_log_id"] = *c.claim_log_id;
  if (!c.tags.empty()) j["tags"] = c.tags;
  if (c.image_ref) j["image_ref"] = *c.image_ref;
  if (c.score) j["score"] = *c.score;
  return j;
}

namespace detail {

inline std::optional<std::string> optional_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw ValidationError(std::string("field '") + key + "' must be a string");
  return it->get<std::string>();
}

inline std::string required_string(const json& j, const char* key) {
  auto v = optional_string(j, key);
  if (!v) throw ValidationError(std::string("missing field '") + key + "'");
  return *v;
}

inline std::vector<std::string> string_list(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_array())
    throw ValidationError(std::string("field '") + key + "' must be an array of strings");
  std::vector<std::string> out;
  for (const auto& e : *it) {
    if (!e.is_string()) throw ValidationError(std::string("field '") + key + "' must hold strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

}  // namespace detail

inline Claim claim_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("claim record must be a JSON object");
  Claim c;
  c.id = detail::required_string(j, "id");
  c.text = detail::required_string(j, "text");
  c.source = parse_claim_source(detail::optional_string(j, "source").value_or("manual"));
  c.study_id = detail::optional_string(j, "study_id");
  c.claim_log_id = detail::optional_string(j, "claim_log_id");
  c.image_ref = detail::optional_string(j, "image_ref");
  if (auto it = j.find("tags"); it != j.end() && !it->is_null()) {
    if (!it->is_object()) throw ValidationError("field 'tags' must be an object");
    for (const auto& [k, v] : it->items()) {
      if (!v.is_string()) throw ValidationError("tag '" + k + "' must be a string");
      c.tags[k] = v.get<std::string>();
    }
  }
  if (auto it = j.find("score"); it != j.end() && !it->is_null()) {
    if (!it->is_number()) throw ValidationError("field 'score' must be a number");
    c.score = it->get<double>();
  }
  validate(c);
  return c;
}

// One best-worst task as recorded in a historical study.
struct Observation {
  std::vector<std::string> set;
  std::string best;
  std::string worst;

  friend bool operator==(const Observation&, const Observation&) = default;
};

inline void validate(const Observation& o) {
  std::set<std::string> members(o.set.begin(), o.set.end());
  if (members.size() != o.set.size()) throw ValidationError("observation set has repeated ids");
  if (o.best == o.worst) throw ValidationError("observation best and worst are the same claim");
  if (!members.contains(o.best)) throw ValidationError("best '" + o.best + "' not in the observation set");
  if (!members.contains(o.worst)) throw ValidationError("worst '" + o.worst + "' not in the observation set");
}

struct MaxDiffStudyRecord {
  std::string study_id;
  std::vector<std::string> claims;
  std::vector<Observation> observations;
  std::optional<std::map<std::string, double>> final_scores;

  friend bool operator==(const MaxDiffStudyRecord&, const MaxDiffStudyRecord&) = default;
};

struct ConsumerProfile {
  std::string name;
  std::string description;
  std::vector<std::string> talking_points;
};

inline void validate(const ConsumerProfile& p) {
  if (trim(p.description).empty()) throw ValidationError("consumer profile description is empty");
}

inline ConsumerProfile profile_from_json(const json& j) {
  ConsumerProfile p;
  p.name = detail::optional_string(j, "name").value_or("");
  p.description = detail::optional_string(j, "description").value_or("");
  if (j.contains("talking_points")) p.talking_points = detail::string_list(j, "talking_points");
  validate(p);
  return p;
}

inline json to_json(const ConsumerProfile& p) {
  return json{{"name", p.name}, {"description", p.description}, {"talking_points", p.talking_points}};
}

// True when every key/value in `filters` is carried by `tags`.
inline bool matches_filters(const TagMap& tags, const TagMap& filters) {
  return std::all_of(filters.begin(), filters.end(), [&](const auto& kv) {
    auto it = tags.find(kv.first);
    return it != tags.end() && it->second == kv.second;
  });
}

enum class RecordFormat { Claims, Study };

struct RecordRejection {
  std::size_t line = 0;
  std::string reason;
};

struct IngestReport {
  std::size_t loaded = 0;
  std::vector<RecordRejection> rejections;
};

struct FilterResult {
  std::vector<Claim> claims;
  // Set when a filter key is carried by no claim in the store.
  bool unknown_key = false;
  std::vector<std::string> unknown_keys;
};

// Thread-safe claim and study store.
//
// Readers take a shared lock and may run concurrently; ingestion parses its
// input without holding the lock and then inserts under an exclusive lock, so
// readers are blocked only for the insertion itself and never observe a
// half-applied batch. Records are never mutated in place; a later record with
// an existing id is rejected.
class ClaimStore {
 public:
  ClaimStore() = default;
  ClaimStore(const ClaimStore&) = delete;
  ClaimStore& operator=(const ClaimStore&) = delete;

  IngestReport ingest(const std::filesystem::path& path, RecordFormat format) {
    auto in = open_for_reading(path);
    return format == RecordFormat::Claims ? ingest_claims(in) : ingest_study(in);
  }

  IngestReport ingest_claims(std::istream& in) {
    struct Parsed {
      std::size_t line;
      Claim claim;
    };
    IngestReport report;
    std::vector<Parsed> parsed;
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
      if (trim(line).empty()) continue;
      try {
        parsed.push_back({n, claim_from_json(json::parse(line))});
      } catch (const json::exception& e) {
        report.rejections.push_back({n, std::string("malformed JSON: ") + e.what()});
      } catch (const ValidationError& e) {
        report.rejections.push_back({n, e.what()});
      }
    }
    std::unique_lock lock(mutex_);
    for (auto& p : parsed) {
      if (claims_.contains(p.claim.id)) {
        report.rejections.push_back({p.line, "duplicate claim id '" + p.claim.id + "'"});
        continue;
      }
      claims_.emplace(p.claim.id, std::move(p.claim));
      ++report.loaded;
    }
    std::sort(report.rejections.begin(), report.rejections.end(),
              [](const auto& a, const auto& b) { return a.line < b.line; });
    return report;
  }

  // A study file holds a header line followed by one observation per line.
  IngestReport ingest_study(std::istream& in) {
    IngestReport report;
    MaxDiffStudyRecord study;
    std::string line;
    std::size_t n = 0;
    bool have_header = false;
    std::vector<std::pair<std::size_t, Observation>> observations;
    while (std::getline(in, line)) {
      ++n;
      if (trim(line).empty()) continue;
      try {
        const json j = json::parse(line);
        if (!have_header) {
          study = study_header_from_json(j);
          have_header = true;
        } else {
          Observation o;
          o.set = detail::string_list(j, "set");
          o.best = detail::required_string(j, "best");
          o.worst = detail::required_string(j, "worst");
          validate(o);
          observations.emplace_back(n, std::move(o));
        }
      } catch (const json::exception& e) {
        report.rejections.push_back({n, std::string("malformed JSON: ") + e.what()});
        if (!have_header) return report;
      } catch (const ValidationError& e) {
        report.rejections.push_back({n, e.what()});
        if (!have_header) return report;
      }
    }
    if (!have_header) return report;

    std::set<std::string> members(study.claims.begin(), study.claims.end());
    for (auto& [ln, o] : observations) {
      auto outside = std::find_if(o.set.begin(), o.set.end(),
                                  [&](const auto& id) { return !members.contains(id); });
      if (outside != o.set.end()) {
        report.rejections.push_back({ln, "claim '" + *outside + "' is not part of study '" + study.study_id + "'"});
        continue;
      }
      study.observations.push_back(std::move(o));
    }

    std::unique_lock lock(mutex_);
    if (studies_.contains(study.study_id)) {
      report.rejections.insert(report.rejections.begin(), {1, "duplicate study id '" + study.study_id + "'"});
      return report;
    }
    for (const auto& id : study.claims) {
      if (!claims_.contains(id)) {
        report.rejections.insert(report.rejections.begin(),
                                 {1, "study references unknown claim '" + id + "'"});
        return report;
      }
    }
    report.loaded = 1 + study.observations.size();
    studies_.emplace(study.study_id, std::move(study));
    return report;
  }

  // Adds one claim; returns false (store unchanged) if the id already exists.
  bool add(Claim claim) {
    validate(claim);
    std::unique_lock lock(mutex_);
    return claims_.emplace(claim.id, std::move(claim)).second;
  }

  bool add_study(MaxDiffStudyRecord study) {
    for (const auto& o : study.observations) validate(o);
    std::unique_lock lock(mutex_);
    for (const auto& id : study.claims)
      if (!claims_.contains(id)) throw ValidationError("study references unknown claim '" + id + "'");
    return studies_.emplace(study.study_id, std::move(study)).second;
  }

  std::optional<Claim> find(const std::string& id) const {
    std::shared_lock lock(mutex_);
    auto it = claims_.find(id);
    if (it == claims_.end()) return std::nullopt;
    return it->second;
  }

  Claim at(const std::string& id) const {
    auto c = find(id);
    if (!c) throw NotFoundError("unknown claim '" + id + "'");
    return *std::move(c);
  }

  // Claims matching every filter and the source (when given), ordered by id.
  FilterResult filter(const TagMap& filters, std::optional<ClaimSource> source = std::nullopt) const {
    std::shared_lock lock(mutex_);
    FilterResult result;
    for (const auto& [key, value] : filters) {
      bool known = std::any_of(claims_.begin(), claims_.end(),
                               [&](const auto& kv) { return kv.second.tags.contains(key); });
      if (!known) result.unknown_keys.push_back(key);
    }
    if (!result.unknown_keys.empty()) {
      result.unknown_key = true;
      return result;
    }
    for (const auto& [id, claim] : claims_) {
      if (source && claim.source != *source) continue;
      if (matches_filters(claim.tags, filters)) result.claims.push_back(claim);
    }
    return result;
  }

  std::vector<Claim> all() const { return filter({}).claims; }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return claims_.size();
  }

  std::optional<MaxDiffStudyRecord> study(const std::string& id) const {
    std::shared_lock lock(mutex_);
    auto it = studies_.find(id);
    if (it == studies_.end()) return std::nullopt;
    return it->second;
  }

  std::vector<MaxDiffStudyRecord> studies() const {
    std::shared_lock lock(mutex_);
    std::vector<MaxDiffStudyRecord> out;
    for (const auto& [id, s] : studies_) out.push_back(s);
    return out;
  }

  void export_claims(std::ostream& out) const {
    std::shared_lock lock(mutex_);
    for (const auto& [id, c] : claims_) out << to_json(c).dump() << '\n';
  }

  // Persists claims to <dir>/claims.jsonl and each study to <dir>/studies/<id>.jsonl.
  void save(const std::filesystem::path& dir) const {
    write_file_atomically(dir / "claims.jsonl", [&](std::ostream& out) { export_claims(out); });
    for (const auto& s : studies())
      write_file_atomically(dir / "studies" / (s.study_id + ".jsonl"),
                            [&](std::ostream& out) { write_study(out, s); });
  }

  // Loads a directory written by save(). Missing files mean an empty store.
  IngestReport load(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    IngestReport total;
    if (fs::exists(dir / "claims.jsonl")) total = ingest(dir / "claims.jsonl", RecordFormat::Claims);
    if (fs::is_directory(dir / "studies")) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(dir / "studies"))
        if (e.path().extension() == ".jsonl") files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        auto r = ingest(f, RecordFormat::Study);
        total.loaded += r.loaded;
        total.rejections.insert(total.rejections.end(), r.rejections.begin(), r.rejections.end());
      }
    }
    return total;
  }

  static void write_study(std::ostream& out, const MaxDiffStudyRecord& s) {
    json header{{"study_id", s.study_id}, {"claims", s.claims}};
    if (s.final_scores) header["final_scores"] = *s.final_scores;
    out << header.dump() << '\n';
    for (const auto& o : s.observations)
      out << json{{"set", o.set}, {"best", o.best}, {"worst", o.worst}}.dump() << '\n';
  }

 private:
  static MaxDiffStudyRecord study_header_from_json(const json& j) {
    if (!j.is_object()) throw ValidationError("study header must be a JSON object");
    MaxDiffStudyRecord s;
    s.study_id = detail::required_string(j, "study_id");
    if (trim(s.study_id).empty()) throw ValidationError("study id is empty");
    s.claims = detail::string_list(j, "claims");
    std::set<std::string> members(s.claims.begin(), s.claims.end());
    if (members.size() != s.claims.size()) throw ValidationError("study lists a claim twice");
    if (auto it = j.find("final_scores"); it != j.end() && !it->is_null()) {
      if (!it->is_object()) throw ValidationError("final_scores must be an object");
      std::map<std::string, double> scores;
      for (const auto& [id, v] : it->items()) {
        if (!v.is_number()) throw ValidationError("score for '" + id + "' must be a number");
        if (!members.contains(id)) throw ValidationError("score given for non-member claim '" + id + "'");
        const double x = v.get<double>();
        if (!(x >= 0.0 && x <= 1.0)) throw ValidationError("score for '" + id + "' outside [0,1]");
        scores[id] = x;
      }
      s.final_scores = std::move(scores);
    }
    return s;
  }

  mutable std::shared_mutex mutex_;
  std::map<std::string, Claim> claims_;
  std::map<std::string, MaxDiffStudyRecord> studies_;
};

}  // namespace claimlab
