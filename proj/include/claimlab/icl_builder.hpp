#pragma once

// In-context-learning examples and fine-tuning records built from completed
// MaxDiff studies, plus the JSONL dataset export.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "claimlab/claim_store.hpp"
#include "claimlab/embed_search.hpp"
#include "claimlab/io.hpp"
#include "claimlab/random.hpp"
#include "claimlab/respondents.hpp"

namespace claimlab {

inline constexpr std::size_t kExampleInputs = 5;

enum class IclMethod { PerformanceBased, SemanticBased };

inline std::string_view to_string(IclMethod m) {
  return m == IclMethod::PerformanceBased ? "performance" : "semantic";
}

inline IclMethod parse_icl_method(std::string_view s) {
  if (s == "performance") return IclMethod::PerformanceBased;
  if (s == "semantic") return IclMethod::SemanticBased;
  throw ValidationError("unknown ICL method '" + std::string(s) + "'");
}

struct IclExample {
  IclMethod method = IclMethod::PerformanceBased;
  std::string study_id;
  std::vector<std::string> input_ids;
  std::vector<std::string> input_claims;
  std::string target_id;
  std::string target_claim;
  // Score (performance) or cosine to the target (semantic) of each input.
  std::vector<double> provenance;

  friend bool operator==(const IclExample&, const IclExample&) = default;
};

struct FinetuneRecord {
  std::string study_id;
  std::vector<std::pair<std::string, std::string>> input_claims;  // (id, text)
  std::string label_best;
  std::string label_worst;

  friend bool operator==(const FinetuneRecord&, const FinetuneRecord&) = default;
};

struct SkipReport {
  std::string study_id;
  std::string reason;
};

// Either a built value or the reason the study was skipped.
template <class T>
struct Built {
  std::optional<T> value;
  std::optional<SkipReport> skipped;
};

using ClaimTexts = std::map<std::string, std::string>;

namespace detail {

// Scored study members with known text, ordered by descending score then id.
inline std::vector<std::pair<std::string, double>> ranked_scores(const MaxDiffStudyRecord& study,
                                                                 const ClaimTexts& texts) {
  std::vector<std::pair<std::string, double>> out;
  if (!study.final_scores) return out;
  for (const auto& [id, s] : *study.final_scores)
    if (texts.contains(id)) out.emplace_back(id, s);
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return out;
}

}  // namespace detail

// Target: the top-scoring claim. Inputs: the claims ranked second to sixth.
inline Built<IclExample> build_performance_example(const MaxDiffStudyRecord& study, const ClaimTexts& texts) {
  const auto ranked = detail::ranked_scores(study, texts);
  if (ranked.size() < kExampleInputs + 1)
    return {std::nullopt, SkipReport{study.study_id, "needs at least 6 scored claims with text, has " +
                                                         std::to_string(ranked.size())}};
  IclExample ex;
  ex.method = IclMethod::PerformanceBased;
  ex.study_id = study.study_id;
  ex.target_id = ranked[0].first;
  ex.target_claim = texts.at(ex.target_id);
  for (std::size_t r = 1; r <= kExampleInputs; ++r) {
    ex.input_ids.push_back(ranked[r].first);
    ex.input_claims.push_back(texts.at(ranked[r].first));
    ex.provenance.push_back(ranked[r].second);
  }
  return {std::move(ex), std::nullopt};
}

// Target: the top-scoring claim. Inputs: its five nearest neighbours by
// cosine similarity among the other study claims, ties by ascending id.
inline Built<IclExample> build_semantic_example(const MaxDiffStudyRecord& study, const ClaimTexts& texts,
                                                const std::map<std::string, EmbeddingVector>& embeddings) {
  const auto ranked = detail::ranked_scores(study, texts);
  if (ranked.empty()) return {std::nullopt, SkipReport{study.study_id, "no scored claims with text"}};
  const std::string& target = ranked[0].first;
  auto target_emb = embeddings.find(target);
  if (target_emb == embeddings.end())
    return {std::nullopt, SkipReport{study.study_id, "best claim '" + target + "' has no embedding"}};

  std::vector<std::pair<std::string, double>> neighbours;
  for (const auto& id : study.claims) {
    if (id == target || !texts.contains(id)) continue;
    auto e = embeddings.find(id);
    if (e == embeddings.end()) continue;
    neighbours.emplace_back(id, cosine(target_emb->second, e->second));
  }
  if (neighbours.size() < kExampleInputs)
    return {std::nullopt, SkipReport{study.study_id, "needs at least 6 embedded claims, has " +
                                                         std::to_string(neighbours.size() + 1)}};
  std::sort(neighbours.begin(), neighbours.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  IclExample ex;
  ex.method = IclMethod::SemanticBased;
  ex.study_id = study.study_id;
  ex.target_id = target;
  ex.target_claim = texts.at(target);
  for (std::size_t i = 0; i < kExampleInputs; ++i) {
    ex.input_ids.push_back(neighbours[i].first);
    ex.input_claims.push_back(texts.at(neighbours[i].first));
    ex.provenance.push_back(neighbours[i].second);
  }
  return {std::move(ex), std::nullopt};
}

// Seeded random 5-subsets of the scored claims, labelled with the highest and
// lowest scoring member. Score ties resolve by ascending id, so among equal
// scores the smallest id is best and the largest is worst.
inline Built<std::vector<FinetuneRecord>> build_finetune_records(const MaxDiffStudyRecord& study,
                                                                 const ClaimTexts& texts,
                                                                 std::size_t samples_per_study, std::uint64_t seed) {
  auto ranked = detail::ranked_scores(study, texts);
  if (ranked.size() < kExampleInputs)
    return {std::nullopt, SkipReport{study.study_id, "needs at least 5 scored claims with text, has " +
                                                         std::to_string(ranked.size())}};
  std::sort(ranked.begin(), ranked.end());  // draw pool ordered by id
  std::map<std::string, std::size_t> position;
  {
    auto by_score = detail::ranked_scores(study, texts);
    for (std::size_t i = 0; i < by_score.size(); ++i) position[by_score[i].first] = i;
  }
  Rng rng(derive_seed(seed, fnv1a64(study.study_id)));
  std::vector<std::size_t> pool(ranked.size());
  std::vector<FinetuneRecord> records;
  for (std::size_t s = 0; s < samples_per_study; ++s) {
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
    // partial Fisher-Yates: first five slots become the sample
    for (std::size_t i = 0; i < kExampleInputs; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
      std::swap(pool[i], pool[j]);
    }
    FinetuneRecord rec;
    rec.study_id = study.study_id;
    std::string best, worst;
    for (std::size_t i = 0; i < kExampleInputs; ++i) {
      const auto& id = ranked[pool[i]].first;
      rec.input_claims.emplace_back(id, texts.at(id));
      if (best.empty() || position[id] < position[best]) best = id;
      if (worst.empty() || position[id] > position[worst]) worst = id;
    }
    rec.label_best = best;
    rec.label_worst = worst;
    records.push_back(std::move(rec));
  }
  return {std::move(records), std::nullopt};
}

// Text shown to the model for one generation example.
inline std::string render_example(const IclExample& ex) {
  std::string out = "Example claims:\n";
  for (std::size_t i = 0; i < ex.input_claims.size(); ++i)
    out += std::to_string(i + 1) + ". " + ex.input_claims[i] + "\n";
  out += "Improved claim: " + ex.target_claim;
  return out;
}

// Text shown to the model for one ranking example.
inline std::string render_example(const FinetuneRecord& r) {
  return claim_lines(r.input_claims) + "BEST: " + r.label_best + "\nWORST: " + r.label_worst;
}

// --- supervised fine-tuning line records -------------------------------------

struct TrainingLine {
  std::string instruction;
  std::string input;
  std::string output;
};

inline TrainingLine training_line(const IclExample& ex) {
  std::string input;
  for (std::size_t i = 0; i < ex.input_claims.size(); ++i)
    input += std::to_string(i + 1) + ". " + ex.input_claims[i] + "\n";
  return {"Write one new product claim that would outperform the example claims below.", input, ex.target_claim};
}

inline TrainingLine training_line(const FinetuneRecord& r) {
  return {"You are a consumer in a MaxDiff survey. Pick the most appealing (BEST) and the least appealing (WORST) "
          "claim below.\n" +
              std::string(kRankingFormat),
          claim_lines(r.input_claims), "BEST: " + r.label_best + "\nWORST: " + r.label_worst};
}

inline json record_json(const IclExample& ex) {
  return json{{"kind", "icl"},
              {"method", std::string(to_string(ex.method))},
              {"study_id", ex.study_id},
              {"input_ids", ex.input_ids},
              {"input_claims", ex.input_claims},
              {"target_id", ex.target_id},
              {"target_claim", ex.target_claim},
              {"provenance", ex.provenance}};
}

inline json record_json(const FinetuneRecord& r) {
  json inputs = json::array();
  for (const auto& [id, text] : r.input_claims) inputs.push_back({{"id", id}, {"text", text}});
  return json{{"kind", "finetune"},
              {"study_id", r.study_id},
              {"input_claims", inputs},
              {"label_best", r.label_best},
              {"label_worst", r.label_worst}};
}

inline void from_record_json(const json& j, IclExample& ex) {
  if (j.at("kind") != "icl") throw ValidationError("record is not an ICL example");
  ex.method = parse_icl_method(j.at("method").get<std::string>());
  ex.study_id = j.at("study_id").get<std::string>();
  ex.input_ids = j.at("input_ids").get<std::vector<std::string>>();
  ex.input_claims = j.at("input_claims").get<std::vector<std::string>>();
  ex.target_id = j.at("target_id").get<std::string>();
  ex.target_claim = j.at("target_claim").get<std::string>();
  ex.provenance = j.at("provenance").get<std::vector<double>>();
}

inline void from_record_json(const json& j, FinetuneRecord& r) {
  if (j.at("kind") != "finetune") throw ValidationError("record is not a fine-tuning record");
  r.study_id = j.at("study_id").get<std::string>();
  r.input_claims.clear();
  for (const auto& e : j.at("input_claims"))
    r.input_claims.emplace_back(e.at("id").get<std::string>(), e.at("text").get<std::string>());
  r.label_best = j.at("label_best").get<std::string>();
  r.label_worst = j.at("label_worst").get<std::string>();
}

// One JSON object per line: {"instruction", "input", "output", "record"}.
template <class Item>
std::size_t export_dataset(std::span<const Item> items, const std::filesystem::path& path) {
  write_file_atomically(path, [&](std::ostream& out) {
    for (const auto& item : items) {
      const auto line = training_line(item);
      json j;
      j["instruction"] = line.instruction;
      j["input"] = line.input;
      j["output"] = line.output;
      j["record"] = record_json(item);
      out << j.dump() << '\n';
    }
  });
  return items.size();
}

template <class Item>
std::vector<Item> import_dataset(const std::filesystem::path& path) {
  auto in = open_for_reading(path);
  std::vector<Item> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (trim(line).empty()) continue;
    try {
      Item item;
      from_record_json(json::parse(line).at("record"), item);
      out.push_back(std::move(item));
    } catch (const json::exception& e) {
      throw ValidationError("dataset line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

struct IclCorpus {
  std::vector<IclExample> examples;
  std::vector<FinetuneRecord> records;
  std::vector<SkipReport> skipped;
};

// Runs the chosen builders over every study; failing studies are reported
// and contribute nothing.
inline IclCorpus build_corpus(std::span<const MaxDiffStudyRecord> studies, const ClaimTexts& texts,
                              bool performance, bool semantic,
                              const std::map<std::string, EmbeddingVector>* embeddings) {
  IclCorpus c;
  for (const auto& s : studies) {
    if (performance) {
      auto b = build_performance_example(s, texts);
      if (b.value) c.examples.push_back(std::move(*b.value));
      else c.skipped.push_back(std::move(*b.skipped));
    }
    if (semantic) {
      if (!embeddings) throw ValidationError("semantic examples need claim embeddings");
      auto b = build_semantic_example(s, texts, *embeddings);
      if (b.value) c.examples.push_back(std::move(*b.value));
      else c.skipped.push_back(std::move(*b.skipped));
    }
  }
  return c;
}

}  // namespace claimlab
