#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "claimlab/maxdiff.hpp"

using namespace claimlab;

namespace {

std::vector<std::string> ids(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("c" + std::to_string(i));
  return out;
}

std::map<std::string, std::size_t> appearances(const StudyDesign& d) {
  std::map<std::string, std::size_t> n;
  for (const auto& id : d.claim_ids) n[id] = 0;
  for (const auto& s : d.sets)
    for (const auto& id : s.item_ids) ++n[id];
  return n;
}

}  // namespace

TEST(Design, SixClaimsTenSetsOfThreeShowEachFiveTimes) {
  const auto d = generate_design(ids(6), 3, 10, 1);
  ASSERT_EQ(d.num_sets(), 10u);
  for (const auto& [id, n] : appearances(d)) EXPECT_EQ(n, 5u) << id;
}

TEST(Design, BalancedAndDistinctAcrossGrid) {
  for (std::size_t n : {10, 30, 100})
    for (std::size_t k : {3, 5})
      for (std::size_t t : {10, 50, 200}) {
        const auto d = generate_design(ids(n), k, t, n * 1000 + k * 10 + t);
        std::size_t lo = SIZE_MAX, hi = 0;
        for (const auto& [id, c] : appearances(d)) {
          lo = std::min(lo, c);
          hi = std::max(hi, c);
        }
        EXPECT_LE(hi - lo, 1u) << n << "," << k << "," << t;
        for (std::size_t i = 0; i < d.sets.size(); ++i) {
          const auto& s = d.sets[i];
          EXPECT_EQ(s.set_index, i);
          EXPECT_EQ(s.item_ids.size(), k);
          EXPECT_EQ(std::set<std::string>(s.item_ids.begin(), s.item_ids.end()).size(), k);
        }
      }
}

TEST(Design, SameSeedSameDesignDifferentSeedDiffers) {
  EXPECT_EQ(generate_design(ids(12), 4, 30, 99), generate_design(ids(12), 4, 30, 99));
  EXPECT_NE(generate_design(ids(12), 4, 30, 99).sets, generate_design(ids(12), 4, 30, 100).sets);
}

TEST(Design, RejectsInvalidParameters) {
  EXPECT_THROW(generate_design({}, 2, 1, 0), ValidationError);
  EXPECT_THROW(generate_design(ids(3), 1, 1, 0), ValidationError);
  EXPECT_THROW(generate_design(ids(3), 4, 1, 0), ValidationError);
  EXPECT_THROW(generate_design(ids(3), 2, 0, 0), ValidationError);
  EXPECT_THROW(generate_design({"a", "a", "b"}, 2, 1, 0), ValidationError);
}

TEST(Design, WritesHeaderAndOneLinePerSet) {
  const auto d = generate_design(ids(4), 2, 3, 5);
  std::ostringstream out;
  write_design(out, d);
  std::istringstream in(out.str());
  std::string line;
  std::vector<nlohmann::json> lines;
  while (std::getline(in, line)) lines.push_back(nlohmann::json::parse(line));
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0]["num_sets"], 3);
  EXPECT_EQ(lines[2]["items"].get<std::vector<std::string>>(), d.sets[1].item_ids);
}

TEST(Tally, RecordResponseCountsOneSet) {
  TallyTable t(ids(3));
  const ChoiceSet s{0, {"c0", "c1", "c2"}};
  t = record_response(t, s, {0, "c1", "c2"});
  EXPECT_EQ(t.at("c0"), (ClaimTally{1, 0, 0}));
  EXPECT_EQ(t.at("c1"), (ClaimTally{1, 1, 0}));
  EXPECT_EQ(t.at("c2"), (ClaimTally{1, 0, 1}));
  EXPECT_EQ(t.responses(), 1u);
}

TEST(Tally, RejectsInvalidResponses) {
  TallyTable t;
  const ChoiceSet s{0, {"a", "b", "c"}};
  EXPECT_THROW(t.record(s, {0, "a", "a"}), ValidationError);
  EXPECT_THROW(t.record(s, {0, "a", "z"}), ValidationError);
  EXPECT_THROW(t.record(s, {1, "a", "b"}), ValidationError);
  EXPECT_EQ(t.responses(), 0u);
  EXPECT_THROW(t.at("a"), NotFoundError);
}

TEST(Tally, CountsConserveAcrossAnyDesign) {
  const auto d = generate_design(ids(9), 4, 60, 3);
  TallyTable t(d.claim_ids);
  for (const auto& s : d.sets) t.record(s, {s.set_index, s.item_ids[0], s.item_ids[3]});
  std::uint64_t best = 0, worst = 0, shown = 0;
  for (const auto& [id, c] : t.entries()) {
    best += c.best_count;
    worst += c.worst_count;
    shown += c.appearances;
  }
  EXPECT_EQ(best, 60u);
  EXPECT_EQ(worst, 60u);
  EXPECT_EQ(shown, 60u * 4);
}

TEST(Tally, MergeEqualsRecordingEverything) {
  const auto d = generate_design(ids(7), 3, 40, 8);
  TallyTable all(d.claim_ids), left(d.claim_ids), right(d.claim_ids);
  for (const auto& s : d.sets) {
    const BestWorstResponse r{s.set_index, s.item_ids[1], s.item_ids[2]};
    all.record(s, r);
    (s.set_index % 2 ? left : right).record(s, r);
  }
  TallyTable lr = left, rl = right;
  lr.merge(right);
  rl.merge(left);
  EXPECT_EQ(lr, all);
  EXPECT_EQ(rl, all);
}

TEST(Scores, PreferenceLikelihoodAndCountScore) {
  TallyTable u;
  std::size_t idx = 0;
  auto add = [&](const std::string& best, const std::string& worst, const std::string& other) {
    const ChoiceSet si{idx, {best, worst, other}};
    u.record(si, {idx, best, worst});
    ++idx;
  };
  for (int i = 0; i < 3; ++i) add("a", "x", "y");
  add("x", "a", "y");
  for (int i = 0; i < 6; ++i) add("x", "y", "a");
  EXPECT_EQ(u.at("a"), (ClaimTally{10, 3, 1}));
  EXPECT_DOUBLE_EQ(preference_likelihood(u, "a"), 0.3);
  EXPECT_DOUBLE_EQ(count_score(u, "a"), 2.0);       // (3+1)/(1+1)
  EXPECT_DOUBLE_EQ(count_score(u, "a", 0.0), 3.0);  // 3/1
}

TEST(Scores, CountScoreExamples) {
  TallyTable t;
  std::size_t idx = 0;
  auto add = [&](const std::string& best, const std::string& worst) {
    t.record({idx, {best, worst}}, {idx, best, worst});
    ++idx;
  };
  for (int i = 0; i < 4; ++i) add("p", "q");
  add("q", "p");
  // p: best 4, worst 1 -> (4+1)/(1+1) = 2.5 ; q: best 1, worst 4 -> 2/5
  EXPECT_DOUBLE_EQ(count_score(t, "p"), 2.5);
  EXPECT_DOUBLE_EQ(count_score(t, "q"), 0.4);
  // never picked at all: (0+1)/(0+1) = 1
  t.record({idx, {"p", "q", "r"}}, {idx, "p", "q"});
  EXPECT_DOUBLE_EQ(count_score(t, "r"), 1.0);
  EXPECT_THROW(count_score(t, "r", 0.0), DomainError);
  EXPECT_THROW(count_score(t, "p", -1.0), ValidationError);
}

TEST(Scores, UnseenClaimHasNoLikelihood) {
  TallyTable t(std::vector<std::string>{"a", "b"});
  EXPECT_THROW(preference_likelihood(t, "a"), DomainError);
  EXPECT_THROW(count_score(t, "a"), DomainError);
}

TEST(Regions, BoundariesFollowCutoffs) {
  const RegionCutoffs c{0.2, 0.4};
  EXPECT_EQ(classify_region(0.0, c), Region::LessAppealing);
  EXPECT_EQ(classify_region(0.2, c), Region::LessAppealing);
  EXPECT_EQ(classify_region(0.2000001, c), Region::Appealing);
  EXPECT_EQ(classify_region(0.4, c), Region::Appealing);
  EXPECT_EQ(classify_region(0.41, c), Region::HighlyAppealing);
  EXPECT_EQ(to_string(Region::HighlyAppealing), "highly_appealing");
  EXPECT_THROW(classify_region(0.3, {0.4, 0.2}), ValidationError);
  EXPECT_THROW(classify_region(0.3, {0.0, 0.2}), ValidationError);
}

TEST(Ranking, DescendingScoreThenBestThenId) {
  TallyTable t;
  std::size_t idx = 0;
  auto add = [&](const std::string& best, const std::string& worst, const std::string& other) {
    t.record({idx, {best, worst, other}}, {idx, best, worst});
    ++idx;
  };
  add("a", "c", "b");
  add("a", "c", "b");
  add("c", "a", "b");
  add("d", "a", "b");
  add("d", "e", "b");
  const auto r = rank_claims(t);
  std::vector<std::string> order;
  for (const auto& x : r) order.push_back(x.claim_id);
  // d 3/1, a 3/3 with two bests, b 1/1 with none, c 2/3, e 1/2
  EXPECT_EQ(order, (std::vector<std::string>{"d", "a", "b", "c", "e"}));
}

TEST(Ranking, EqualScoreAndBestFallsBackToId) {
  TallyTable t;
  t.record({0, {"z", "y", "x"}}, {0, "z", "y"});
  t.record({1, {"x", "y", "w"}}, {1, "x", "y"});
  // z and x both best 1 worst 0
  const auto r = rank_claims(t);
  EXPECT_EQ(r[0].claim_id, "x");
  EXPECT_EQ(r[1].claim_id, "z");
}
