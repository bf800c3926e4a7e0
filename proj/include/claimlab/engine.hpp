#pragma once

// The single orchestration path shared by the CLI and the HTTP service:
// store -> index -> search; design -> respondents -> tally -> scores ->
// regions -> MNL utilities; ICL assembly -> generation; evaluation.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "claimlab/claim_store.hpp"
#include "claimlab/config.hpp"
#include "claimlab/embed_search.hpp"
#include "claimlab/evaluation.hpp"
#include "claimlab/icl_builder.hpp"
#include "claimlab/maxdiff.hpp"
#include "claimlab/respondents.hpp"
#include "claimlab/utility_estimation.hpp"

namespace claimlab {

struct SearchRequest {
  std::optional<std::string> text;
  std::optional<std::vector<double>> image_embedding;
  std::optional<std::string> image_ref;  // looked up in the image embedding table
  std::optional<double> weight;
  std::size_t k = 5;
  TagMap filters;
  std::optional<ClaimSource> source;
  SearchTarget target = SearchTarget::ClaimText;
};

struct SimulationRequest {
  std::vector<std::string> claim_ids;
  std::optional<std::size_t> rounds;
  std::optional<std::size_t> set_size;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha;
  std::optional<RespondentKind> respondent;
  std::optional<double> temperature;
  // Ground-truth utilities for the utility respondent; claims not listed
  // fall back to the logit of their stored preference score.
  Utilities utilities;
  std::optional<ConsumerProfile> profile;  // LLM respondent only
  std::size_t icl_count = 1;               // ranking examples per LLM prompt
};

// Fully resolved parameters; enough to reproduce a run.
struct SimulationParams {
  std::vector<std::string> claim_ids;
  std::size_t rounds = 0;
  std::size_t set_size = 0;
  std::uint64_t seed = 0;
  double alpha = 1.0;
  RespondentKind respondent = RespondentKind::UtilityModel;
  double temperature = 1.0;
  RegionCutoffs cutoffs;
  Utilities respondent_utilities;
};

struct SimulationResult {
  SimulationParams params;
  StudyDesign design;
  std::vector<BestWorstResponse> responses;
  TallyTable tally;
  std::vector<RankedClaim> ranking;
  std::map<std::string, double> likelihood;
  std::map<std::string, Region> regions;
  UtilityVector utilities;
  Utilities normalized;
};

inline json to_json(const SimulationResult& r) {
  json ranking = json::array();
  for (std::size_t i = 0; i < r.ranking.size(); ++i) {
    const auto& c = r.ranking[i];
    ranking.push_back({{"rank", i + 1},
                       {"claim_id", c.claim_id},
                       {"score", c.score},
                       {"appearances", c.counts.appearances},
                       {"best", c.counts.best_count},
                       {"worst", c.counts.worst_count},
                       {"preference_likelihood", r.likelihood.at(c.claim_id)},
                       {"region", std::string(to_string(r.regions.at(c.claim_id)))}});
  }
  json utilities = json::array();
  for (const auto& [id, u] : r.utilities.utilities)
    utilities.push_back({{"claim_id", id}, {"utility", u}, {"normalized", r.normalized.at(id)}});
  json responses = json::array();
  for (std::size_t i = 0; i < r.responses.size(); ++i)
    responses.push_back({{"set_index", r.responses[i].set_index},
                         {"items", r.design.sets[i].item_ids},
                         {"best", r.responses[i].best_id},
                         {"worst", r.responses[i].worst_id}});
  const auto& p = r.params;
  return json{{"params",
               {{"claim_ids", p.claim_ids},
                {"rounds", p.rounds},
                {"set_size", p.set_size},
                {"seed", p.seed},
                {"alpha", p.alpha},
                {"respondent", std::string(to_string(p.respondent))},
                {"temperature", p.temperature},
                {"cutoffs", {{"p1", p.cutoffs.p1}, {"p2", p.cutoffs.p2}}},
                {"respondent_utilities", p.respondent_utilities}}},
              {"ranking", ranking},
              {"utilities",
               {{"converged", r.utilities.converged},
                {"iterations", r.utilities.iterations},
                {"final_loglik", r.utilities.final_loglik},
                {"status", r.utilities.status},
                {"values", utilities}}},
              {"responses", responses}};
}

enum class GenerationIcl { None, Performance, Semantic, Both };

inline GenerationIcl parse_generation_icl(std::string_view s) {
  if (s == "none") return GenerationIcl::None;
  if (s == "performance") return GenerationIcl::Performance;
  if (s == "semantic") return GenerationIcl::Semantic;
  if (s == "both") return GenerationIcl::Both;
  throw ValidationError("unknown ICL method '" + std::string(s) + "'");
}

struct GenerateRequest {
  std::string product_description;
  ConsumerProfile profile;
  GenerationIcl icl = GenerationIcl::Both;
  std::size_t count = 30;
  std::size_t icl_count = 5;  // examples per method
};

// Logit of a preference likelihood, clipped away from 0 and 1.
inline double utility_from_score(double score) {
  constexpr double eps = 1e-3;
  const double p = std::clamp(score, eps, 1.0 - eps);
  return std::log(p / (1.0 - p));
}

class Engine {
 public:
  explicit Engine(AppConfig config, std::shared_ptr<ChatClient> chat = nullptr,
                  std::shared_ptr<EmbeddingProvider> embedder = nullptr)
      : config_(std::move(config)), chat_(std::move(chat)), embedder_(std::move(embedder)) {
    validate(config_);
    if (!embedder_) {
      if (config_.embedding.provider == "http")
        embedder_ = std::make_shared<HttpEmbeddingProvider>(config_.embedding.endpoint, config_.embedding.dim);
      else
        embedder_ = std::make_shared<HashEmbeddingProvider>(config_.embedding.dim);
    }
    if (!chat_) {
      if (config_.stub_llm) chat_ = std::make_shared<StubChatClient>();
      else if (!config_.llm.endpoint.url.empty()) chat_ = std::make_shared<HttpChatClient>(config_.llm);
    }
    if (chat_) gateway_ = std::make_unique<ChatGateway>(chat_, config_.llm.max_in_flight);
    if (!config_.image_embeddings.empty()) images_ = ImageEmbeddingTable::load(config_.image_embeddings);
    if (!config_.store_dir.empty()) store_.load(config_.store_dir);
    rebuild_index();
  }

  const AppConfig& config() const { return config_; }
  ClaimStore& store() { return store_; }
  const ClaimStore& store() const { return store_; }
  EmbeddingProvider& embedder() { return *embedder_; }
  std::shared_ptr<const SearchIndex> index() const { return index_.snapshot(); }

  // Ingests a file, persists the store (when configured) and swaps in a
  // fresh index.
  IngestReport ingest(const std::filesystem::path& path, RecordFormat format) {
    std::lock_guard lock(ingest_mutex_);
    auto report = store_.ingest(path, format);
    after_ingest();
    return report;
  }

  IngestReport ingest_claims(std::istream& in) {
    std::lock_guard lock(ingest_mutex_);
    auto report = store_.ingest_claims(in);
    after_ingest();
    return report;
  }

  void rebuild_index() {
    index_.replace(SearchIndex::build(store_.all(), *embedder_, images_ ? &*images_ : nullptr));
  }

  FusionQuery fusion_query(const SearchRequest& req) {
    if (req.image_embedding && req.image_ref) throw ValidationError("give image_embedding or image_ref, not both");
    const bool has_image = req.image_embedding || req.image_ref;
    if (req.weight && !has_image) throw ValidationError("weight given without an image embedding");
    if (!req.text && !has_image) throw ValidationError("search needs text or an image embedding");
    FusionQuery q;
    if (req.text) q.text = embedder_->embed(EmbedInput::text(*req.text));
    if (req.image_embedding) q.image = EmbeddingVector(*req.image_embedding, Modality::Image);
    if (req.image_ref) {
      const EmbeddingVector* v = images_ ? images_->find(*req.image_ref) : nullptr;
      if (!v) throw NotFoundError("no image embedding for '" + *req.image_ref + "'");
      q.image = *v;
    }
    q.weight = req.weight.value_or(config_.fusion_weight);
    validate(q);
    return q;
  }

  std::vector<SearchHit> search(const SearchRequest& req) {
    if (req.k == 0) throw ValidationError("k must be at least 1");
    const auto q = fusion_query(req);
    return index_.snapshot()->search_top_k(q, req.k, req.filters, req.source, req.target);
  }

  SimulationParams resolve(const SimulationRequest& req) const {
    SimulationParams p;
    p.claim_ids = req.claim_ids;
    p.rounds = req.rounds.value_or(config_.simulation.rounds);
    p.set_size = req.set_size.value_or(config_.simulation.set_size);
    p.seed = req.seed.value_or(config_.simulation.seed);
    p.alpha = req.alpha.value_or(config_.simulation.alpha);
    p.respondent = req.respondent.value_or(config_.simulation.respondent);
    p.temperature = req.temperature.value_or(config_.simulation.temperature);
    p.cutoffs = config_.cutoffs;
    if (p.claim_ids.size() < p.set_size)
      throw ValidationError("simulation needs at least " + std::to_string(p.set_size) + " claims, got " +
                            std::to_string(p.claim_ids.size()));
    if (p.rounds == 0) throw ValidationError("rounds must be positive");
    if (p.rounds * p.set_size < p.claim_ids.size())
      throw ValidationError("too few rounds for every claim to appear at least once");
    for (const auto& id : p.claim_ids)
      if (!store_.find(id)) throw NotFoundError("unknown claim '" + id + "'");
    for (const auto& id : p.claim_ids) {
      const auto claim = store_.find(id);
      if (p.respondent != RespondentKind::UtilityModel) continue;
      if (auto it = req.utilities.find(id); it != req.utilities.end()) p.respondent_utilities[id] = it->second;
      else if (claim->score) p.respondent_utilities[id] = utility_from_score(*claim->score);
      else throw ValidationError("claim '" + id + "' has neither a supplied utility nor a stored score");
    }
    return p;
  }

  SimulationResult simulate(const SimulationRequest& req) {
    SimulationResult r;
    r.params = resolve(req);
    const auto& p = r.params;
    r.design = generate_design(p.claim_ids, p.set_size, p.rounds, p.seed);
    r.responses = respond(p, r.design, req);

    r.tally = TallyTable(p.claim_ids);
    std::vector<ChoiceObservation> observations;
    for (std::size_t i = 0; i < r.design.sets.size(); ++i) {
      r.tally.record(r.design.sets[i], r.responses[i]);
      observations.push_back({r.design.sets[i], r.responses[i]});
    }
    r.ranking = rank_claims(r.tally, p.alpha);
    for (const auto& id : p.claim_ids) {
      r.likelihood[id] = preference_likelihood(r.tally, id);
      r.regions[id] = classify_region(r.likelihood[id], p.cutoffs);
    }
    r.utilities = estimate_mnl(observations, config_.estimation, p.claim_ids);
    r.normalized = normalize_utilities(r.utilities.utilities);
    return r;
  }

  std::vector<std::string> generate(const GenerateRequest& req) {
    if (!gateway_) throw ValidationError("no LLM endpoint configured");
    validate(req.profile);
    if (trim(req.product_description).empty()) throw ValidationError("product description is empty");
    std::vector<std::string> examples;
    for (const auto& ex : generation_examples(req.icl, req.icl_count)) examples.push_back(render_example(ex));
    return generate_claims(*gateway_, req.product_description, req.profile, examples, req.count,
                           config_.llm.max_generation_calls);
  }

  // ICL examples from stored studies, capped per method, in study-id order.
  std::vector<IclExample> generation_examples(GenerationIcl method, std::size_t per_method) {
    if (method == GenerationIcl::None || per_method == 0) return {};
    const auto studies = store_.studies();
    const auto texts = claim_texts();
    const bool perf = method == GenerationIcl::Performance || method == GenerationIcl::Both;
    const bool sem = method == GenerationIcl::Semantic || method == GenerationIcl::Both;
    std::map<std::string, EmbeddingVector> embeddings;
    if (sem) embeddings = study_embeddings(studies, texts);
    std::vector<IclExample> out;
    std::size_t n_perf = 0, n_sem = 0;
    for (auto& ex : build_corpus(studies, texts, perf, sem, &embeddings).examples) {
      auto& n = ex.method == IclMethod::PerformanceBased ? n_perf : n_sem;
      if (n < per_method) {
        ++n;
        out.push_back(std::move(ex));
      }
    }
    return out;
  }

  ClaimTexts claim_texts() const {
    ClaimTexts t;
    for (const auto& c : store_.all()) t[c.id] = c.text;
    return t;
  }

  std::map<std::string, EmbeddingVector> study_embeddings(const std::vector<MaxDiffStudyRecord>& studies,
                                                          const ClaimTexts& texts) {
    std::map<std::string, EmbeddingVector> out;
    for (const auto& s : studies)
      for (const auto& id : s.claims)
        if (auto it = texts.find(id); it != texts.end() && !out.contains(id))
          out.emplace(id, embedder_->embed(EmbedInput::text(it->second)));
    return out;
  }

 private:
  void after_ingest() {
    if (!config_.store_dir.empty()) store_.save(config_.store_dir);
    rebuild_index();
  }

  std::vector<BestWorstResponse> respond(const SimulationParams& p, const StudyDesign& design,
                                         const SimulationRequest& req) {
    std::vector<BestWorstResponse> out(design.sets.size());
    if (p.respondent == RespondentKind::UtilityModel) {
      RespondentConfig rc{RespondentKind::UtilityModel, p.temperature, p.seed, std::nullopt};
      for (std::size_t i = 0; i < design.sets.size(); ++i)
        out[i] = answer_with_utilities(rc, design.sets[i], p.respondent_utilities);
      return out;
    }

    if (!gateway_) throw ValidationError("LLM respondent requested but no LLM endpoint configured");
    if (!req.profile) throw ValidationError("LLM respondent needs a consumer profile");
    const auto texts = claim_texts();
    std::vector<std::string> examples;
    if (req.icl_count > 0) {
      for (const auto& s : store_.studies()) {
        if (examples.size() >= req.icl_count) break;
        auto b = build_finetune_records(s, texts, 1, p.seed);
        if (b.value) examples.push_back(render_example(b.value->front()));
      }
    }
    // Workers pull set indices; each answer lands in its own slot, so the
    // result does not depend on scheduling.
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr error;
    auto worker = [&] {
      for (std::size_t i = next++; i < design.sets.size(); i = next++) {
        try {
          const auto prompt = build_ranking_prompt(design.sets[i], texts, *req.profile, examples);
          out[i] = answer_with_llm(*gateway_, config_.llm.max_retries, design.sets[i], prompt);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = design.sets.size();
        }
      }
    };
    std::vector<std::thread> threads;
    const std::size_t workers = std::min(config_.llm.max_in_flight, design.sets.size());
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
    return out;
  }

  AppConfig config_;
  std::shared_ptr<ChatClient> chat_;
  std::shared_ptr<EmbeddingProvider> embedder_;
  std::unique_ptr<ChatGateway> gateway_;
  std::optional<ImageEmbeddingTable> images_;
  ClaimStore store_;
  IndexHandle index_;
  std::mutex ingest_mutex_;
};

}  // namespace claimlab
