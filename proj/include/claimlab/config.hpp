#pragma once

// Application configuration. Precedence: command-line flags > environment >
// config file > built-in defaults. API tokens are read from the environment
// only.

#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "claimlab/claim_store.hpp"
#include "claimlab/errors.hpp"
#include "claimlab/io.hpp"
#include "claimlab/maxdiff.hpp"
#include "claimlab/respondents.hpp"
#include "claimlab/utility_estimation.hpp"

namespace claimlab {

inline constexpr const char* kApiKeyEnv = "CLAIMLAB_API_KEY";
inline constexpr const char* kConfigEnv = "CLAIMLAB_CONFIG";

struct EmbeddingSettings {
  std::string provider = "hash";  // "hash" or "http"
  std::size_t dim = 64;
  HttpEndpoint endpoint;
};

struct SimulationDefaults {
  std::size_t set_size = 5;
  std::size_t rounds = 50;
  double alpha = 1.0;
  std::uint64_t seed = 0;
  double temperature = 1.0;
  RespondentKind respondent = RespondentKind::UtilityModel;
};

struct AppConfig {
  std::filesystem::path store_dir;  // empty: in-memory only
  std::filesystem::path image_embeddings;
  EmbeddingSettings embedding;
  double fusion_weight = 0.5;
  RegionCutoffs cutoffs;
  SimulationDefaults simulation;
  EstimationSettings estimation;
  LlmSettings llm;
  bool stub_llm = false;
  std::string host = "127.0.0.1";
  int port = 8080;
};

inline void validate(const AppConfig& c) {
  validate(c.cutoffs);
  validate(c.estimation);
  if (!(c.fusion_weight >= 0.0 && c.fusion_weight <= 1.0)) throw ValidationError("fusion_weight must lie in [0,1]");
  if (c.simulation.set_size < 2) throw ValidationError("simulation set_size must be at least 2");
  if (c.simulation.rounds == 0) throw ValidationError("simulation rounds must be positive");
  if (!(c.simulation.alpha >= 0.0)) throw ValidationError("simulation alpha must be non-negative");
  if (!(c.simulation.temperature > 0.0)) throw ValidationError("respondent temperature must be positive");
  if (c.embedding.provider != "hash" && c.embedding.provider != "http")
    throw ValidationError("embedding provider must be 'hash' or 'http'");
  if (c.embedding.dim == 0) throw ValidationError("embedding dim must be positive");
  if (c.llm.max_in_flight == 0) throw ValidationError("llm max_in_flight must be positive");
  if (c.port < 0 || c.port > 65535) throw ValidationError("port out of range");
  if (!c.store_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(c.store_dir, ec);
    if (!std::filesystem::is_directory(c.store_dir))
      throw ValidationError("store_dir is not creatable: " + c.store_dir.string());
  }
  if (!c.image_embeddings.empty() && !std::filesystem::exists(c.image_embeddings))
    throw ValidationError("image_embeddings file does not exist: " + c.image_embeddings.string());
}

namespace detail {

template <class T>
void read_if(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) out = it->get<T>();
}

inline void read_endpoint(const json& j, HttpEndpoint& e) {
  if (j.contains("api_key")) throw ValidationError("API tokens are accepted only through " + std::string(kApiKeyEnv));
  read_if(j, "url", e.url);
  read_if(j, "model", e.model);
  read_if(j, "timeout_seconds", e.timeout_seconds);
}

}  // namespace detail

inline void apply_config_json(AppConfig& c, const json& j) {
  try {
    if (auto it = j.find("store_dir"); it != j.end()) c.store_dir = it->get<std::string>();
    if (auto it = j.find("image_embeddings"); it != j.end()) c.image_embeddings = it->get<std::string>();
    detail::read_if(j, "fusion_weight", c.fusion_weight);
    detail::read_if(j, "stub_llm", c.stub_llm);
    if (auto it = j.find("embedding"); it != j.end()) {
      detail::read_if(*it, "provider", c.embedding.provider);
      detail::read_if(*it, "dim", c.embedding.dim);
      detail::read_endpoint(*it, c.embedding.endpoint);
    }
    if (auto it = j.find("cutoffs"); it != j.end()) {
      detail::read_if(*it, "p1", c.cutoffs.p1);
      detail::read_if(*it, "p2", c.cutoffs.p2);
    }
    if (auto it = j.find("simulation"); it != j.end()) {
      detail::read_if(*it, "set_size", c.simulation.set_size);
      detail::read_if(*it, "rounds", c.simulation.rounds);
      detail::read_if(*it, "alpha", c.simulation.alpha);
      detail::read_if(*it, "seed", c.simulation.seed);
      detail::read_if(*it, "temperature", c.simulation.temperature);
      if (it->contains("respondent")) c.simulation.respondent = parse_respondent_kind(it->at("respondent").get<std::string>());
    }
    if (auto it = j.find("estimation"); it != j.end()) {
      detail::read_if(*it, "max_iterations", c.estimation.max_iterations);
      detail::read_if(*it, "gradient_tolerance", c.estimation.gradient_tolerance);
      detail::read_if(*it, "ridge", c.estimation.ridge);
      detail::read_if(*it, "divergence_bound", c.estimation.divergence_bound);
    }
    if (auto it = j.find("llm"); it != j.end()) {
      detail::read_endpoint(*it, c.llm.endpoint);
      detail::read_if(*it, "max_retries", c.llm.max_retries);
      detail::read_if(*it, "max_in_flight", c.llm.max_in_flight);
      detail::read_if(*it, "temperature", c.llm.temperature);
      detail::read_if(*it, "max_generation_calls", c.llm.max_generation_calls);
    }
    if (auto it = j.find("server"); it != j.end()) {
      detail::read_if(*it, "host", c.host);
      detail::read_if(*it, "port", c.port);
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad config value: ") + e.what());
  }
}

inline void apply_environment(AppConfig& c) {
  auto env = [](const char* name) -> std::optional<std::string> {
    const char* v = std::getenv(name);
    if (!v || !*v) return std::nullopt;
    return std::string(v);
  };
  if (auto key = env(kApiKeyEnv)) {
    c.llm.endpoint.api_key = *key;
    c.embedding.endpoint.api_key = *key;
  }
  if (auto v = env("CLAIMLAB_STORE_DIR")) c.store_dir = *v;
  if (auto v = env("CLAIMLAB_LLM_URL")) c.llm.endpoint.url = *v;
  if (auto v = env("CLAIMLAB_LLM_MODEL")) c.llm.endpoint.model = *v;
  if (auto v = env("CLAIMLAB_EMBEDDING_URL")) c.embedding.endpoint.url = *v;
}

// Defaults, then the config file (explicit path or $CLAIMLAB_CONFIG), then
// the environment. Flags are applied by the caller afterwards.
inline AppConfig load_config(const std::optional<std::filesystem::path>& path = std::nullopt) {
  AppConfig c;
  std::optional<std::filesystem::path> file = path;
  if (!file)
    if (const char* v = std::getenv(kConfigEnv); v && *v) file = v;
  if (file) {
    auto in = open_for_reading(*file);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw ValidationError("config " + file->string() + " is not valid JSON: " + e.what());
    }
    apply_config_json(c, j);
    // relative paths in a config file are relative to the file itself
    const auto base = std::filesystem::absolute(*file).parent_path();
    if (!c.store_dir.empty() && c.store_dir.is_relative()) c.store_dir = base / c.store_dir;
    if (!c.image_embeddings.empty() && c.image_embeddings.is_relative()) c.image_embeddings = base / c.image_embeddings;
  }
  apply_environment(c);
  return c;
}

}  // namespace claimlab
