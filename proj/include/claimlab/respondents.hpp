#pragma once

// Synthetic consumers: a seeded utility-model respondent and an LLM-backed
// respondent/claim generator over a chat-completion endpoint.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "claimlab/claim_store.hpp"
#include "claimlab/errors.hpp"
#include "claimlab/http_client.hpp"
#include "claimlab/maxdiff.hpp"
#include "claimlab/random.hpp"

namespace claimlab {

enum class RespondentKind { UtilityModel, Llm };

inline std::string_view to_string(RespondentKind k) { return k == RespondentKind::Llm ? "llm" : "utility"; }

inline RespondentKind parse_respondent_kind(std::string_view s) {
  if (s == "utility") return RespondentKind::UtilityModel;
  if (s == "llm") return RespondentKind::Llm;
  throw ValidationError("unknown respondent kind '" + std::string(s) + "'");
}

struct LlmSettings {
  HttpEndpoint endpoint;
  int max_retries = 3;
  std::size_t max_in_flight = 4;
  double temperature = 0.7;
  // Upper bound on chat calls issued by one generate_claims request.
  std::size_t max_generation_calls = 5;
};

struct RespondentConfig {
  RespondentKind kind = RespondentKind::UtilityModel;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  std::optional<LlmSettings> llm;
};

inline void validate(const RespondentConfig& c) {
  if (c.kind == RespondentKind::UtilityModel && !(c.temperature > 0.0))
    throw ValidationError("respondent temperature must be positive");
  if (c.kind == RespondentKind::Llm) {
    if (!c.llm) throw ValidationError("LLM respondent needs LLM settings");
    if (c.llm->max_retries < 0) throw ValidationError("max_retries must be non-negative");
    if (c.llm->max_in_flight == 0) throw ValidationError("max_in_flight must be positive");
  }
}

enum class PromptTask { Ranking, Generation };

struct PromptBundle {
  PromptTask task = PromptTask::Ranking;
  std::string system_message;
  std::vector<std::string> icl_examples;
  std::string user_message;

  friend bool operator==(const PromptBundle&, const PromptBundle&) = default;
};

// Flattens the bundle into the user turn sent over the wire: examples first,
// then the task.
inline std::string render_user_turn(const PromptBundle& p) {
  std::string out;
  for (std::size_t i = 0; i < p.icl_examples.size(); ++i) {
    out += "### Example " + std::to_string(i + 1) + "\n";
    out += p.icl_examples[i];
    out += "\n\n";
  }
  out += p.user_message;
  return out;
}

class ChatClient {
 public:
  virtual ~ChatClient() = default;
  // Returns the completion text. Throws TransportError when unreachable.
  virtual std::string complete(const PromptBundle& prompt) = 0;
};

// Chat-completion wire shape shared by common hosted-model endpoints:
//   request  {"model", "temperature", "messages": [{"role":"system"}, {"role":"user"}]}
//   response {"choices": [{"message": {"content": "..."}}]}
class HttpChatClient final : public ChatClient {
 public:
  explicit HttpChatClient(LlmSettings settings) : settings_(std::move(settings)) {}

  std::string complete(const PromptBundle& prompt) override {
    const nlohmann::json body{
        {"model", settings_.endpoint.model},
        {"temperature", settings_.temperature},
        {"messages",
         {{{"role", "system"}, {"content", prompt.system_message}}, {{"role", "user"}, {"content", render_user_turn(prompt)}}}}};
    const auto reply = post_json(settings_.endpoint, body);
    try {
      return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw TransportError(std::string("chat reply has no completion text: ") + e.what());
    }
  }

 private:
  LlmSettings settings_;
};

// Bounds the number of concurrent requests issued to one client.
class ChatGateway {
 public:
  ChatGateway(std::shared_ptr<ChatClient> client, std::size_t max_in_flight)
      : client_(std::move(client)), slots_(max_in_flight) {
    if (!client_) throw ValidationError("chat gateway needs a client");
    if (slots_ == 0) throw ValidationError("max_in_flight must be positive");
  }

  std::string complete(const PromptBundle& prompt) {
    {
      std::unique_lock lock(mutex_);
      freed_.wait(lock, [&] { return in_flight_ < slots_; });
      ++in_flight_;
      peak_ = std::max(peak_, in_flight_);
    }
    struct Release {
      ChatGateway* g;
      ~Release() {
        std::lock_guard lock(g->mutex_);
        --g->in_flight_;
        g->freed_.notify_one();
      }
    } release{this};
    return client_->complete(prompt);
  }

  std::size_t peak_in_flight() const {
    std::lock_guard lock(mutex_);
    return peak_;
  }

 private:
  std::shared_ptr<ChatClient> client_;
  std::size_t slots_;
  mutable std::mutex mutex_;
  std::condition_variable freed_;
  std::size_t in_flight_ = 0;
  std::size_t peak_ = 0;
};

namespace detail {

// Index drawn with probability proportional to exp(logits[i] - max).
inline std::size_t sample_softmax(std::span<const double> logits, Rng& rng) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> w(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) total += (w[i] = std::exp(logits[i] - mx));
  const double target = rng.uniform() * total;
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] <= 0.0) continue;
    last = i;
    acc += w[i];
    if (target < acc) return i;
  }
  return last;
}

}  // namespace detail

// Seeded sequential-softmax respondent: best drawn with weight
// exp(U_i / temperature) over the set, worst with exp(-U_j / temperature) over
// the rest. The stream depends only on (seed, set_index), so responses do not
// depend on the order in which sets are answered.
inline BestWorstResponse answer_with_utilities(const RespondentConfig& config, const ChoiceSet& set,
                                               const std::map<std::string, double>& utilities) {
  if (!(config.temperature > 0.0)) throw ValidationError("respondent temperature must be positive");
  if (set.item_ids.size() < 2) throw ValidationError("choice set needs at least two items");
  std::vector<double> u;
  for (const auto& id : set.item_ids) {
    auto it = utilities.find(id);
    if (it == utilities.end()) throw ValidationError("no utility for claim '" + id + "'");
    u.push_back(it->second / config.temperature);
  }
  Rng rng(derive_seed(config.seed, set.set_index));
  const std::size_t best = detail::sample_softmax(u, rng);
  std::vector<std::size_t> rest;
  std::vector<double> neg;
  for (std::size_t i = 0; i < u.size(); ++i)
    if (i != best) {
      rest.push_back(i);
      neg.push_back(-u[i]);
    }
  const std::size_t worst = rest[detail::sample_softmax(neg, rng)];
  return {set.set_index, set.item_ids[best], set.item_ids[worst]};
}

// Probability that the respondent picks `claim_id` as best from `set`.
inline double best_pick_probability(const std::map<std::string, double>& utilities, const ChoiceSet& set,
                                    const std::string& claim_id, double temperature) {
  double mx = -std::numeric_limits<double>::infinity();
  for (const auto& id : set.item_ids) mx = std::max(mx, utilities.at(id) / temperature);
  double z = 0.0;
  for (const auto& id : set.item_ids) z += std::exp(utilities.at(id) / temperature - mx);
  return std::exp(utilities.at(claim_id) / temperature - mx) / z;
}

// Extracts the single BEST/WORST label pair from a model reply. Labels are
// upper-case words followed by ':' or '='; surrounding markdown emphasis and
// trailing punctuation on the id are ignored. Repeating a label with the same
// value is tolerated, a different value is a conflict.
inline std::pair<std::string, std::string> parse_best_worst(std::string_view raw, const std::set<std::string>& allowed) {
  if (allowed.size() < 2) throw ValidationError("need at least two allowed ids");
  static const std::regex label(R"((?:^|[^A-Za-z])(BEST|WORST)\**\s*[:=]\s*\**\s*([^\s,;*]+))");
  std::optional<std::string> best, worst;
  const std::string text(raw);
  for (auto it = std::sregex_iterator(text.begin(), text.end(), label); it != std::sregex_iterator(); ++it) {
    std::string value = (*it)[2].str();
    while (!value.empty() && std::string_view(".!?)]}\"'`").find(value.back()) != std::string_view::npos)
      value.pop_back();
    while (!value.empty() && std::string_view("([{\"'`").find(value.front()) != std::string_view::npos)
      value.erase(value.begin());
    auto& slot = (*it)[1].str() == "BEST" ? best : worst;
    if (slot && *slot != value) throw ReplyParseError("conflicting " + (*it)[1].str() + " labels");
    slot = value;
  }
  if (!best) throw ReplyParseError("reply has no BEST label");
  if (!worst) throw ReplyParseError("reply has no WORST label");
  if (!allowed.contains(*best)) throw ReplyParseError("BEST names unknown id '" + *best + "'");
  if (!allowed.contains(*worst)) throw ReplyParseError("WORST names unknown id '" + *worst + "'");
  if (*best == *worst) throw ReplyParseError("BEST and WORST name the same id");
  return {*best, *worst};
}

inline std::string profile_block(const ConsumerProfile& profile) {
  std::string out = "Target consumer";
  if (!profile.name.empty()) out += " (" + profile.name + ")";
  out += ": " + trim(profile.description) + "\n";
  if (!profile.talking_points.empty()) {
    out += "Trending topics for this consumer:\n";
    for (const auto& t : profile.talking_points) out += "- " + t + "\n";
  }
  return out;
}

inline constexpr std::string_view kRankingFormat =
    "Answer with exactly two lines and nothing else:\nBEST: <id>\nWORST: <id>";

// Renders a claim list as "[id] text" lines, the layout shared by ranking
// prompts and fine-tuning inputs.
inline std::string claim_lines(std::span<const std::pair<std::string, std::string>> claims) {
  std::string out;
  for (const auto& [id, text] : claims) out += "[" + id + "] " + text + "\n";
  return out;
}

inline PromptBundle build_ranking_prompt(const ChoiceSet& set, const std::map<std::string, std::string>& claim_texts,
                                         const ConsumerProfile& profile, std::vector<std::string> icl_examples = {}) {
  validate(profile);
  std::vector<std::pair<std::string, std::string>> claims;
  for (const auto& id : set.item_ids) {
    auto it = claim_texts.find(id);
    if (it == claim_texts.end()) throw ValidationError("no text for claim '" + id + "'");
    claims.emplace_back(id, it->second);
  }
  PromptBundle p;
  p.task = PromptTask::Ranking;
  p.system_message = "You are a consumer taking part in a MaxDiff survey about product claims.\n" +
                     profile_block(profile) + "Judge each claim as this consumer would.\n";
  p.icl_examples = std::move(icl_examples);
  p.user_message = "From the claims below, pick the one you find most appealing (BEST) and the one you find "
                   "least appealing (WORST).\n\n" +
                   claim_lines(claims) + "\n" + std::string(kRankingFormat);
  return p;
}

inline PromptBundle build_generation_prompt(const std::string& product_description, const ConsumerProfile& profile,
                                            std::vector<std::string> icl_examples, std::size_t count) {
  validate(profile);
  PromptBundle p;
  p.task = PromptTask::Generation;
  p.system_message = "You write product benefit claims that resonate with a specific consumer.\n" +
                     profile_block(profile) + "Claims must be truthful, specific and one sentence long.\n";
  p.icl_examples = std::move(icl_examples);
  p.user_message = "Product: " + trim(product_description) + "\n\nWrite " + std::to_string(count) +
                   " new distinct claims that would outperform the example claims. Put one claim per line, "
                   "without numbering or commentary.";
  return p;
}

// One LLM answer for a set, retrying up to `max_retries` extra times when the
// reply does not parse.
inline BestWorstResponse answer_with_llm(ChatGateway& gateway, int max_retries, const ChoiceSet& set,
                                         const PromptBundle& prompt) {
  const std::set<std::string> allowed(set.item_ids.begin(), set.item_ids.end());
  std::string last_error;
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    const std::string reply = gateway.complete(prompt);
    try {
      auto [best, worst] = parse_best_worst(reply, allowed);
      return {set.set_index, std::move(best), std::move(worst)};
    } catch (const ReplyParseError& e) {
      last_error = e.what();
    }
  }
  throw ReplyParseError("no parsable answer after " + std::to_string(max_retries + 1) + " attempts: " + last_error);
}

// Case-folded, whitespace-collapsed form used for exact deduplication.
inline std::string normalize_claim_text(std::string_view s) {
  std::string out;
  bool space = false;
  for (unsigned char c : s) {
    if (std::isspace(c)) {
      space = !out.empty();
      continue;
    }
    if (space) out += ' ';
    space = false;
    out += static_cast<char>(std::tolower(c));
  }
  return out;
}

// Splits a generation reply into claim lines, dropping list markers.
inline std::vector<std::string> split_generated(std::string_view reply) {
  static const std::regex marker(R"(^\s*(?:[-*]|•|\d+[.)]|\(\d+\))\s*)");
  std::vector<std::string> out;
  std::istringstream in{std::string(reply)};
  std::string line;
  while (std::getline(in, line)) {
    line = trim(std::regex_replace(line, marker, ""));
    if (line.size() >= 2 && line.front() == '"' && line.back() == '"') line = trim(line.substr(1, line.size() - 2));
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

// Asks the model for claims until `count` distinct ones are collected or the
// call budget runs out.
inline std::vector<std::string> generate_claims(ChatGateway& gateway, const std::string& product_description,
                                                const ConsumerProfile& profile,
                                                const std::vector<std::string>& icl_examples, std::size_t count,
                                                std::size_t max_calls) {
  if (count == 0) throw ValidationError("count must be at least 1");
  if (max_calls == 0) throw ValidationError("call budget must be positive");
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (std::size_t call = 0; call < max_calls && out.size() < count; ++call) {
    const auto prompt = build_generation_prompt(product_description, profile, icl_examples, count - out.size());
    for (auto& c : split_generated(gateway.complete(prompt))) {
      if (out.size() == count) break;
      if (seen.insert(normalize_claim_text(c)).second) out.push_back(std::move(c));
    }
  }
  if (out.size() < count)
    throw Error("call budget exhausted with " + std::to_string(out.size()) + " of " + std::to_string(count) +
                " distinct claims");
  return out;
}

// Offline stand-in for a chat endpoint. Ranking prompts are answered by a
// fixed hash of each claim's text; generation prompts get numbered claims
// about the product. Replies depend only on the prompt.
class StubChatClient final : public ChatClient {
 public:
  std::string complete(const PromptBundle& prompt) override {
    if (prompt.task == PromptTask::Ranking) return answer_ranking(prompt.user_message);
    return answer_generation(prompt.user_message);
  }

 private:
  static std::string answer_ranking(const std::string& user) {
    static const std::regex line(R"(^\[([^\]]+)\] (.*)$)");
    std::istringstream in(user);
    std::string l;
    std::optional<std::pair<std::uint64_t, std::string>> best, worst;
    while (std::getline(in, l)) {
      std::smatch m;
      if (!std::regex_match(l, m, line)) continue;
      const auto key = std::make_pair(fnv1a64(m[2].str()), m[1].str());
      if (!best || key > *best) best = key;
      if (!worst || key < *worst) worst = key;
    }
    if (!best) return "I cannot tell.";
    return "BEST: " + best->second + "\nWORST: " + worst->second;
  }

  static std::string answer_generation(const std::string& user) {
    static const std::regex product(R"(Product: (.*))");
    static const std::regex count(R"(Write (\d+) new)");
    std::smatch m;
    std::string name = "this product";
    if (std::regex_search(user, m, product)) name = m[1].str();
    std::size_t n = 1;
    if (std::regex_search(user, m, count)) n = std::stoul(m[1].str());
    std::string out;
    for (std::size_t i = 1; i <= n; ++i) out += name + " delivers benefit #" + std::to_string(i) + " for you.\n";
    return out;
  }
};

}  // namespace claimlab
