#pragma once

// Best-worst (MaxDiff) study designs, response tallies, count-based scores,
// appeal regions and rankings.

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "claimlab/errors.hpp"
#include "claimlab/random.hpp"

namespace claimlab {

struct ChoiceSet {
  std::size_t set_index = 0;
  std::vector<std::string> item_ids;

  friend bool operator==(const ChoiceSet&, const ChoiceSet&) = default;
};

struct BestWorstResponse {
  std::size_t set_index = 0;
  std::string best_id;
  std::string worst_id;

  friend bool operator==(const BestWorstResponse&, const BestWorstResponse&) = default;
};

struct StudyDesign {
  std::vector<std::string> claim_ids;
  std::size_t set_size = 0;
  std::vector<ChoiceSet> sets;
  std::uint64_t seed = 0;

  std::size_t num_sets() const { return sets.size(); }
  friend bool operator==(const StudyDesign&, const StudyDesign&) = default;
};

// Balanced random design: every set takes the k least-shown claims, with
// random tie-breaking, so appearance counts never differ by more than one.
// Item order inside each set is shuffled.
inline StudyDesign generate_design(const std::vector<std::string>& claim_ids, std::size_t k, std::size_t num_sets,
                                   std::uint64_t seed) {
  if (claim_ids.empty()) throw ValidationError("design needs at least one claim");
  std::set<std::string> distinct(claim_ids.begin(), claim_ids.end());
  if (distinct.size() != claim_ids.size()) throw ValidationError("design claim ids must be distinct");
  if (k < 2) throw ValidationError("set size must be at least 2");
  if (k > claim_ids.size()) throw ValidationError("set size exceeds the number of claims");
  if (num_sets == 0) throw ValidationError("design needs at least one set");

  const std::size_t n = claim_ids.size();
  Rng rng(seed);
  std::vector<std::size_t> shown(n, 0);
  std::vector<std::size_t> order(n);
  std::vector<std::uint64_t> tie(n);

  StudyDesign design{claim_ids, k, {}, seed};
  design.sets.reserve(num_sets);
  for (std::size_t t = 0; t < num_sets; ++t) {
    std::iota(order.begin(), order.end(), 0);
    for (auto& x : tie) x = rng.below(UINT64_MAX);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (shown[a] != shown[b]) return shown[a] < shown[b];
      if (tie[a] != tie[b]) return tie[a] < tie[b];
      return a < b;
    });
    std::vector<std::size_t> picked(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    rng.shuffle(std::span(picked));
    ChoiceSet set{t, {}};
    for (auto i : picked) {
      ++shown[i];
      set.item_ids.push_back(claim_ids[i]);
    }
    design.sets.push_back(std::move(set));
  }
  return design;
}

inline void validate_response(const ChoiceSet& set, const BestWorstResponse& r) {
  if (r.set_index != set.set_index) throw ValidationError("response refers to a different set");
  if (r.best_id == r.worst_id) throw ValidationError("best and worst must differ");
  auto member = [&](const std::string& id) {
    return std::find(set.item_ids.begin(), set.item_ids.end(), id) != set.item_ids.end();
  };
  if (!member(r.best_id)) throw ValidationError("best '" + r.best_id + "' is not in the set");
  if (!member(r.worst_id)) throw ValidationError("worst '" + r.worst_id + "' is not in the set");
}

struct ClaimTally {
  std::uint64_t appearances = 0;
  std::uint64_t best_count = 0;
  std::uint64_t worst_count = 0;

  friend bool operator==(const ClaimTally&, const ClaimTally&) = default;
};

// Per-claim counters. Recording is a commutative increment, so tables built
// from disjoint batches of responses merge by elementwise addition.
class TallyTable {
 public:
  TallyTable() = default;
  explicit TallyTable(std::span<const std::string> claim_ids) {
    for (const auto& id : claim_ids) counts_[id];
  }

  void record(const ChoiceSet& set, const BestWorstResponse& response) {
    validate_response(set, response);
    for (const auto& id : set.item_ids) ++counts_[id].appearances;
    ++counts_[response.best_id].best_count;
    ++counts_[response.worst_id].worst_count;
    ++responses_;
  }

  void merge(const TallyTable& other) {
    for (const auto& [id, t] : other.counts_) {
      auto& mine = counts_[id];
      mine.appearances += t.appearances;
      mine.best_count += t.best_count;
      mine.worst_count += t.worst_count;
    }
    responses_ += other.responses_;
  }

  const ClaimTally& at(const std::string& id) const {
    auto it = counts_.find(id);
    if (it == counts_.end()) throw NotFoundError("claim '" + id + "' is not in the tally");
    return it->second;
  }

  bool contains(const std::string& id) const { return counts_.contains(id); }
  const std::map<std::string, ClaimTally>& entries() const { return counts_; }
  std::uint64_t responses() const { return responses_; }

  friend bool operator==(const TallyTable&, const TallyTable&) = default;

 private:
  std::map<std::string, ClaimTally> counts_;
  std::uint64_t responses_ = 0;
};

inline TallyTable record_response(TallyTable tally, const ChoiceSet& set, const BestWorstResponse& response) {
  tally.record(set, response);
  return tally;
}

// Share of a claim's appearances in which it was picked best.
inline double preference_likelihood(const TallyTable& tally, const std::string& claim_id) {
  const auto& t = tally.at(claim_id);
  if (t.appearances == 0)
    throw DomainError("preference likelihood undefined: claim '" + claim_id + "' never appeared");
  return static_cast<double>(t.best_count) / static_cast<double>(t.appearances);
}

// Smoothed best-to-worst ratio (best + alpha) / (worst + alpha).
inline double count_score(const TallyTable& tally, const std::string& claim_id, double alpha = 1.0) {
  if (!(alpha >= 0.0)) throw ValidationError("smoothing alpha must be non-negative");
  const auto& t = tally.at(claim_id);
  if (t.appearances == 0) throw DomainError("count score undefined: claim '" + claim_id + "' never appeared");
  const double denom = static_cast<double>(t.worst_count) + alpha;
  if (denom == 0.0) throw DomainError("count score undefined: claim '" + claim_id + "' never picked worst and alpha is 0");
  return (static_cast<double>(t.best_count) + alpha) / denom;
}

struct RegionCutoffs {
  double p1 = 0.2;
  double p2 = 0.4;
};

inline void validate(const RegionCutoffs& c) {
  if (!(c.p1 > 0.0 && c.p1 < 1.0 && c.p2 > 0.0 && c.p2 < 1.0))
    throw ValidationError("region cutoffs must lie in (0,1)");
  if (!(c.p2 > c.p1)) throw ValidationError("region cutoff p2 must exceed p1");
}

enum class Region { LessAppealing, Appealing, HighlyAppealing };

inline std::string_view to_string(Region r) {
  switch (r) {
    case Region::LessAppealing: return "less_appealing";
    case Region::Appealing: return "appealing";
    case Region::HighlyAppealing: return "highly_appealing";
  }
  return "unknown";
}

// > p2 is highly appealing, <= p1 is less appealing, anything between is appealing.
inline Region classify_region(double likelihood, const RegionCutoffs& cutoffs) {
  validate(cutoffs);
  if (likelihood > cutoffs.p2) return Region::HighlyAppealing;
  if (likelihood <= cutoffs.p1) return Region::LessAppealing;
  return Region::Appealing;
}

struct RankedClaim {
  std::string claim_id;
  double score = 0.0;
  ClaimTally counts;

  friend bool operator==(const RankedClaim&, const RankedClaim&) = default;
};

// Descending count score; ties by descending best count, then ascending id.
inline std::vector<RankedClaim> rank_claims(const TallyTable& tally, double alpha = 1.0) {
  std::vector<RankedClaim> out;
  for (const auto& [id, t] : tally.entries()) out.push_back({id, count_score(tally, id, alpha), t});
  std::sort(out.begin(), out.end(), [](const RankedClaim& a, const RankedClaim& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.counts.best_count != b.counts.best_count) return a.counts.best_count > b.counts.best_count;
    return a.claim_id < b.claim_id;
  });
  return out;
}

inline void write_design(std::ostream& out, const StudyDesign& d) {
  out << nlohmann::json{{"claim_ids", d.claim_ids}, {"set_size", d.set_size}, {"num_sets", d.num_sets()},
                        {"seed", d.seed}}
             .dump()
      << '\n';
  for (const auto& s : d.sets) out << nlohmann::json{{"set_index", s.set_index}, {"items", s.item_ids}}.dump() << '\n';
}

inline void write_tally(std::ostream& out, const TallyTable& t) {
  for (const auto& [id, c] : t.entries())
    out << nlohmann::json{{"claim_id", id}, {"appearances", c.appearances}, {"best", c.best_count},
                          {"worst", c.worst_count}}
               .dump()
        << '\n';
}

}  // namespace claimlab
