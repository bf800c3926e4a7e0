#pragma once

// Rank agreement: Kendall's tau and top-N coverage.

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "claimlab/errors.hpp"

namespace claimlab {

using Positions = std::map<std::string, std::size_t>;
using Scores = std::map<std::string, double>;

struct RankComparison {
  std::size_t n = 0;
  std::uint64_t concordant = 0;
  std::uint64_t discordant = 0;
  double tau = 0.0;
  std::map<std::size_t, std::size_t> top_n_coverage;

  friend bool operator==(const RankComparison&, const RankComparison&) = default;
};

namespace detail {

// Counts inversions of `v` by merge sort.
inline std::uint64_t count_inversions(std::vector<std::size_t>& v, std::vector<std::size_t>& buf, std::size_t lo,
                                      std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::uint64_t inv = count_inversions(v, buf, lo, mid) + count_inversions(v, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[i] <= v[j]) {
      buf[k++] = v[i++];
    } else {
      inv += mid - i;
      buf[k++] = v[j++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return inv;
}

inline void require_permutation(const Positions& p, const char* which) {
  std::set<std::size_t> seen;
  for (const auto& [id, pos] : p)
    if (!seen.insert(pos).second) throw ValidationError(std::string(which) + " ranking has tied positions");
}

}  // namespace detail

// tau = (C - D) / (n(n-1)/2) over tie-free rankings given as id -> position.
// Discordant pairs are counted as inversions in O(n log n).
inline RankComparison kendall_tau(const Positions& rank_a, const Positions& rank_b) {
  if (rank_a.size() != rank_b.size()) throw ValidationError("rankings cover different ids");
  for (const auto& [id, pos] : rank_a)
    if (!rank_b.contains(id)) throw ValidationError("id '" + id + "' missing from second ranking");
  detail::require_permutation(rank_a, "first");
  detail::require_permutation(rank_b, "second");

  const std::size_t n = rank_a.size();
  if (n < 2) throw ValidationError("Kendall's tau needs at least two items");
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(n);
  for (const auto& [id, pos] : rank_a) pairs.emplace_back(pos, rank_b.at(id));
  std::sort(pairs.begin(), pairs.end());
  std::vector<std::size_t> second(n), buf(n);
  for (std::size_t i = 0; i < n; ++i) second[i] = pairs[i].second;

  RankComparison r;
  r.n = n;
  const std::uint64_t total = static_cast<std::uint64_t>(n) * (n - 1) / 2;
  r.discordant = detail::count_inversions(second, buf, 0, n);
  r.concordant = total - r.discordant;
  r.tau = (static_cast<double>(r.concordant) - static_cast<double>(r.discordant)) / static_cast<double>(total);
  return r;
}

// Size of the intersection of the two top-n prefixes.
inline std::size_t top_n_coverage(std::span<const std::string> predicted, std::span<const std::string> truth,
                                  std::size_t n) {
  if (n > predicted.size() || n > truth.size()) throw ValidationError("n exceeds the ranking length");
  const std::set<std::string> top(truth.begin(), truth.begin() + static_cast<std::ptrdiff_t>(n));
  return static_cast<std::size_t>(std::count_if(predicted.begin(), predicted.begin() + static_cast<std::ptrdiff_t>(n),
                                                [&](const std::string& id) { return top.contains(id); }));
}

// Ids ordered by descending score, ties by ascending id.
inline std::vector<std::string> ranking_from_scores(const Scores& scores) {
  std::vector<std::pair<std::string, double>> v(scores.begin(), scores.end());
  std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> out;
  out.reserve(v.size());
  for (auto& [id, s] : v) out.push_back(std::move(id));
  return out;
}

inline Positions positions_of(std::span<const std::string> ranking) {
  Positions p;
  for (std::size_t i = 0; i < ranking.size(); ++i)
    if (!p.emplace(ranking[i], i + 1).second) throw ValidationError("ranking lists '" + ranking[i] + "' twice");
  return p;
}

inline RankComparison evaluate_ranking(const Scores& predicted, const Scores& truth,
                                       std::span<const std::size_t> n_list) {
  const auto pred_rank = ranking_from_scores(predicted);
  const auto true_rank = ranking_from_scores(truth);
  RankComparison r = kendall_tau(positions_of(pred_rank), positions_of(true_rank));
  for (auto n : n_list) r.top_n_coverage[n] = top_n_coverage(pred_rank, true_rank, n);
  return r;
}

inline nlohmann::json to_json(const RankComparison& r) {
  nlohmann::json cov = nlohmann::json::object();
  for (const auto& [n, c] : r.top_n_coverage) cov[std::to_string(n)] = c;
  return {{"n", r.n}, {"concordant", r.concordant}, {"discordant", r.discordant}, {"tau", r.tau}, {"top_n_coverage", cov}};
}

}  // namespace claimlab
