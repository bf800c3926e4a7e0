#include <atomic>
#include <chrono>
#include <deque>
#include <thread>

#include <gtest/gtest.h>

#include "claimlab/respondents.hpp"
#include "fake_server.hpp"

using namespace claimlab;

namespace {

const std::map<std::string, double> kUtil{{"a", 1.2}, {"b", 0.3}, {"c", -0.4}, {"d", -1.5}, {"e", 0.0}};
const ChoiceSet kSet{7, {"a", "b", "c", "d", "e"}};

const ConsumerProfile kProfile{"pro", "Busy people with dry skin", {"skin barrier"}};

// Replies with a fixed script, one entry per call (the last repeats).
class ScriptedClient final : public ChatClient {
 public:
  explicit ScriptedClient(std::vector<std::string> replies) : replies_(std::move(replies)) {}
  std::string complete(const PromptBundle& p) override {
    prompts.push_back(p);
    const auto i = std::min(calls++, replies_.size() - 1);
    return replies_[i];
  }
  std::size_t calls = 0;
  std::vector<PromptBundle> prompts;

 private:
  std::vector<std::string> replies_;
};

}  // namespace

TEST(UtilityRespondent, NearZeroTemperaturePicksExtremes) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto r = answer_with_utilities({RespondentKind::UtilityModel, 1e-6, seed, std::nullopt}, kSet, kUtil);
    EXPECT_EQ(r.best_id, "a");
    EXPECT_EQ(r.worst_id, "d");
    EXPECT_EQ(r.set_index, 7u);
  }
}

TEST(UtilityRespondent, DeterministicPerSeedAndSetIndex) {
  const RespondentConfig c{RespondentKind::UtilityModel, 1.0, 42, std::nullopt};
  const auto first = answer_with_utilities(c, kSet, kUtil);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(answer_with_utilities(c, kSet, kUtil), first);
  int differs = 0;
  for (std::size_t idx = 0; idx < 40; ++idx) {
    const ChoiceSet s{idx, kSet.item_ids};
    differs += answer_with_utilities(c, s, kUtil).best_id != first.best_id;
  }
  EXPECT_GT(differs, 0);
}

TEST(UtilityRespondent, BestFrequenciesMatchSoftmax) {
  const int draws = 10000;
  std::map<std::string, int> best;
  for (int i = 0; i < draws; ++i)
    ++best[answer_with_utilities({RespondentKind::UtilityModel, 1.0, static_cast<std::uint64_t>(i), std::nullopt},
                                 kSet, kUtil)
               .best_id];
  for (const auto& id : kSet.item_ids)
    EXPECT_NEAR(best[id] / double(draws), best_pick_probability(kUtil, kSet, id, 1.0), 0.02) << id;
}

TEST(UtilityRespondent, WorstFrequenciesMatchSequentialSoftmax) {
  // P(worst = w) = sum_b P(best = b) * softmax(-U over S \ {b})[w]
  const int draws = 10000;
  std::map<std::string, int> worst;
  for (int i = 0; i < draws; ++i)
    ++worst[answer_with_utilities({RespondentKind::UtilityModel, 1.0, 1000000u + i, std::nullopt}, kSet, kUtil)
                .worst_id];
  for (const auto& w : kSet.item_ids) {
    double p = 0;
    for (const auto& b : kSet.item_ids) {
      if (b == w) continue;
      double z = 0;
      for (const auto& j : kSet.item_ids)
        if (j != b) z += std::exp(-kUtil.at(j));
      p += best_pick_probability(kUtil, kSet, b, 1.0) * std::exp(-kUtil.at(w)) / z;
    }
    EXPECT_NEAR(worst[w] / double(draws), p, 0.02) << w;
  }
}

TEST(UtilityRespondent, HigherTemperatureFlattensTopChoice) {
  double last = 1.0;
  for (double t : {0.25, 0.5, 1.0, 2.0, 4.0, 8.0}) {
    const double p = best_pick_probability(kUtil, kSet, "a", t);
    EXPECT_LT(p, last);
    EXPECT_GT(p, 0.2);
    last = p;
  }
}

TEST(UtilityRespondent, RejectsBadInput) {
  EXPECT_THROW(answer_with_utilities({RespondentKind::UtilityModel, 0.0, 0, std::nullopt}, kSet, kUtil), ValidationError);
  EXPECT_THROW(answer_with_utilities({RespondentKind::UtilityModel, 1.0, 0, std::nullopt}, {0, {"a", "zz"}}, kUtil),
               ValidationError);
}

TEST(ParseReply, AcceptsCommonLayouts) {
  const std::set<std::string> ids{"c1", "c2", "c3"};
  EXPECT_EQ(parse_best_worst("BEST: c1\nWORST: c3", ids), (std::pair<std::string, std::string>{"c1", "c3"}));
  EXPECT_EQ(parse_best_worst("**BEST**: c2\n**WORST**: c1", ids), (std::pair<std::string, std::string>{"c2", "c1"}));
  EXPECT_EQ(parse_best_worst("Sure! BEST = [c3], WORST = c2.", ids), (std::pair<std::string, std::string>{"c3", "c2"}));
  EXPECT_EQ(parse_best_worst("BEST: c1\nWORST: c3\nBEST: c1", ids), (std::pair<std::string, std::string>{"c1", "c3"}));
}

TEST(ParseReply, RejectsAmbiguousOrInvalidReplies) {
  const std::set<std::string> ids{"c1", "c2", "c3"};
  EXPECT_THROW(parse_best_worst("I like c1 the most", ids), ReplyParseError);
  EXPECT_THROW(parse_best_worst("BEST: c1", ids), ReplyParseError);
  EXPECT_THROW(parse_best_worst("BEST: c1\nWORST: c9", ids), ReplyParseError);
  EXPECT_THROW(parse_best_worst("BEST: c1\nWORST: c1", ids), ReplyParseError);
  EXPECT_THROW(parse_best_worst("BEST: c1\nWORST: c3\nBEST: c2", ids), ReplyParseError);
  EXPECT_THROW(parse_best_worst("best: c1\nworst: c3", ids), ReplyParseError);
}

TEST(Prompts, RankingPromptListsSetInOrderAfterExamples) {
  const std::map<std::string, std::string> texts{{"a", "Alpha"}, {"b", "Beta"}, {"c", "Gamma"}};
  const auto p = build_ranking_prompt({0, {"c", "a", "b"}}, texts, kProfile, {"EX1", "EX2"});
  EXPECT_EQ(p.task, PromptTask::Ranking);
  EXPECT_NE(p.system_message.find("Busy people with dry skin"), std::string::npos);
  EXPECT_NE(p.system_message.find("- skin barrier"), std::string::npos);
  EXPECT_NE(p.user_message.find("[c] Gamma\n[a] Alpha\n[b] Beta\n"), std::string::npos);
  EXPECT_NE(p.user_message.find(kRankingFormat), std::string::npos);
  const auto turn = render_user_turn(p);
  EXPECT_EQ(turn.find("### Example 1\nEX1"), 0u);
  EXPECT_LT(turn.find("### Example 2\nEX2"), turn.find("[c] Gamma"));
  EXPECT_THROW(build_ranking_prompt({0, {"a", "z"}}, texts, kProfile), ValidationError);
  EXPECT_THROW(build_ranking_prompt({0, {"a", "b"}}, texts, ConsumerProfile{"x", " ", {}}), ValidationError);
}

TEST(Prompts, GenerationPromptAsksForCount) {
  const auto p = build_generation_prompt("Aqua cream", kProfile, {}, 12);
  EXPECT_EQ(p.task, PromptTask::Generation);
  EXPECT_NE(p.user_message.find("Product: Aqua cream"), std::string::npos);
  EXPECT_NE(p.user_message.find("Write 12 new distinct claims"), std::string::npos);
}

TEST(LlmRespondent, RetriesUnparsableReplies) {
  auto client = std::make_shared<ScriptedClient>(std::vector<std::string>{"hmm", "BEST: a", "BEST: b\nWORST: e"});
  ChatGateway gw(client, 1);
  const std::map<std::string, std::string> texts{{"a", "A"}, {"b", "B"}, {"c", "C"}, {"d", "D"}, {"e", "E"}};
  const auto prompt = build_ranking_prompt(kSet, texts, kProfile);
  const auto r = answer_with_llm(gw, 3, kSet, prompt);
  EXPECT_EQ(r, (BestWorstResponse{7, "b", "e"}));
  EXPECT_EQ(client->calls, 3u);

  auto bad = std::make_shared<ScriptedClient>(std::vector<std::string>{"no idea"});
  ChatGateway gw2(bad, 1);
  EXPECT_THROW(answer_with_llm(gw2, 2, kSet, prompt), ReplyParseError);
  EXPECT_EQ(bad->calls, 3u);
}

TEST(LlmRespondent, StubAnswersAreDeterministicAndValid) {
  auto stub = std::make_shared<StubChatClient>();
  ChatGateway gw(stub, 2);
  const std::map<std::string, std::string> texts{{"a", "A1"}, {"b", "B1"}, {"c", "C1"}, {"d", "D1"}, {"e", "E1"}};
  const auto prompt = build_ranking_prompt(kSet, texts, kProfile);
  const auto r1 = answer_with_llm(gw, 0, kSet, prompt);
  const auto r2 = answer_with_llm(gw, 0, kSet, prompt);
  EXPECT_EQ(r1, r2);
  EXPECT_NE(r1.best_id, r1.worst_id);
}

TEST(Generation, DeduplicatesAndTopsUpWithinBudget) {
  auto client = std::make_shared<ScriptedClient>(std::vector<std::string>{
      "1. Soft skin all day\n2. soft  SKIN all day\n- Glow from within\n", "\"Glow from within\"\nBarrier care\nMore"});
  ChatGateway gw(client, 1);
  const auto out = generate_claims(gw, "Cream", kProfile, {}, 3, 5);
  EXPECT_EQ(out, (std::vector<std::string>{"Soft skin all day", "Glow from within", "Barrier care"}));
  EXPECT_EQ(client->calls, 2u);
  EXPECT_NE(client->prompts[1].user_message.find("Write 1 new"), std::string::npos);
}

TEST(Generation, BudgetExhaustionIsAnError) {
  auto client = std::make_shared<ScriptedClient>(std::vector<std::string>{"Same claim"});
  ChatGateway gw(client, 1);
  EXPECT_THROW(generate_claims(gw, "Cream", kProfile, {}, 2, 3), Error);
  EXPECT_EQ(client->calls, 3u);
}

TEST(Generation, StubProducesRequestedCount) {
  ChatGateway gw(std::make_shared<StubChatClient>(), 4);
  const auto out = generate_claims(gw, "Aqua cream", kProfile, {"EX"}, 30, 5);
  ASSERT_EQ(out.size(), 30u);
  std::set<std::string> distinct;
  for (const auto& c : out) distinct.insert(normalize_claim_text(c));
  EXPECT_EQ(distinct.size(), 30u);
}

TEST(Generation, SplitDropsMarkersAndBlankLines) {
  EXPECT_EQ(split_generated("1) One\n\n  * Two \n(3) Three\n• Four"),
            (std::vector<std::string>{"One", "Two", "Three", "Four"}));
  EXPECT_EQ(normalize_claim_text("  Soft   Skin\tNow "), "soft skin now");
}

TEST(Gateway, BoundsConcurrentCalls) {
  class Slow final : public ChatClient {
   public:
    std::string complete(const PromptBundle&) override {
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
      return "ok";
    }
  };
  ChatGateway gw(std::make_shared<Slow>(), 3);
  std::vector<std::thread> threads;
  for (int i = 0; i < 12; ++i)
    threads.emplace_back([&] {
      for (int j = 0; j < 4; ++j) gw.complete({});
    });
  for (auto& t : threads) t.join();
  EXPECT_LE(gw.peak_in_flight(), 3u);
  EXPECT_GE(gw.peak_in_flight(), 1u);
}

TEST(HttpChat, ParsesCompletionAndSendsMessages) {
  nlohmann::json seen;
  testing_support::FakeServer server("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen = nlohmann::json::parse(req.body);
    res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"BEST: a\nWORST: d"}}]})",
                    "application/json");
  });
  LlmSettings s;
  s.endpoint = {server.url("/v1/chat/completions"), "chat-model", "", 5.0};
  HttpChatClient client(s);
  PromptBundle p{PromptTask::Ranking, "SYS", {"EX"}, "USER"};
  EXPECT_EQ(client.complete(p), "BEST: a\nWORST: d");
  EXPECT_EQ(seen["model"], "chat-model");
  EXPECT_EQ(seen["messages"][0]["content"], "SYS");
  EXPECT_EQ(seen["messages"][1]["content"], "### Example 1\nEX\n\nUSER");
}

TEST(HttpChat, DeadEndpointIsTransportError) {
  LlmSettings s;
  s.endpoint = {"http://127.0.0.1:" + std::to_string(testing_support::dead_port()) + "/chat", "m", "", 2.0};
  HttpChatClient client(s);
  EXPECT_THROW(client.complete({}), TransportError);
}
