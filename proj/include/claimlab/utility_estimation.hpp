#pragma once

// Maximum-likelihood multinomial-logit utilities from best-worst picks.
//
// Each task is modelled sequentially: the best item is a softmax draw over
// the utilities of the shown set, and the worst item a softmax draw over the
// negated utilities of the remaining items:
//
//   P(best = b | S)        = exp(U_b)  / sum_{j in S}      exp(U_j)
//   P(worst = w | S, b)    = exp(-U_w) / sum_{j in S\{b}}  exp(-U_j)
//
// The objective is the summed log-probability minus ridge * ||U||^2.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "claimlab/errors.hpp"
#include "claimlab/maxdiff.hpp"

namespace claimlab {

using Utilities = std::map<std::string, double>;

struct ChoiceObservation {
  ChoiceSet set;
  BestWorstResponse response;
};

enum class Identification { SumZero, Pinned };

struct UtilityVector {
  Utilities utilities;
  Identification identification = Identification::SumZero;
  std::string pinned_id;  // set when identification is Pinned
  bool converged = false;
  std::size_t iterations = 0;
  double final_loglik = 0.0;
  // Objective after each accepted step, starting with the initial point.
  std::vector<double> loglik_trace;
  std::string status;
};

struct EstimationSettings {
  std::size_t max_iterations = 20000;
  double gradient_tolerance = 1e-9;
  double armijo = 1e-4;
  double backtrack = 0.5;
  double ridge = 1e-3;
  // |U| beyond this means the data separate the claims and the MLE does not
  // exist; estimation stops and reports non-convergence.
  double divergence_bound = 10.0;
  Identification identification = Identification::SumZero;
  std::string pinned_id;
};

inline void validate(const EstimationSettings& s) {
  if (s.max_iterations == 0) throw ValidationError("max_iterations must be positive");
  if (!(s.gradient_tolerance > 0.0)) throw ValidationError("gradient tolerance must be positive");
  if (!(s.armijo > 0.0 && s.armijo < 1.0)) throw ValidationError("armijo constant must lie in (0,1)");
  if (!(s.backtrack > 0.0 && s.backtrack < 1.0)) throw ValidationError("backtrack factor must lie in (0,1)");
  if (!(s.ridge >= 0.0)) throw ValidationError("ridge penalty must be non-negative");
  if (!(s.divergence_bound > 0.0)) throw ValidationError("divergence bound must be positive");
  if (s.identification == Identification::Pinned && s.pinned_id.empty())
    throw ValidationError("pinned identification needs a claim id");
}

namespace detail {

// Observations re-expressed over dense claim indices.
struct IndexedData {
  std::vector<std::string> ids;  // sorted
  struct Task {
    std::vector<std::size_t> items;
    std::size_t best;
    std::size_t worst;
  };
  std::vector<Task> tasks;
};

inline std::size_t index_of(const std::vector<std::string>& ids, const std::string& id) {
  auto it = std::lower_bound(ids.begin(), ids.end(), id);
  if (it == ids.end() || *it != id) throw NotFoundError("no utility for claim '" + id + "'");
  return static_cast<std::size_t>(it - ids.begin());
}

inline IndexedData index_data(std::vector<std::string> ids, std::span<const ChoiceObservation> data) {
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  IndexedData out{std::move(ids), {}};
  out.tasks.reserve(data.size());
  for (const auto& obs : data) {
    validate_response(obs.set, obs.response);
    IndexedData::Task t;
    for (const auto& id : obs.set.item_ids) t.items.push_back(index_of(out.ids, id));
    t.best = index_of(out.ids, obs.response.best_id);
    t.worst = index_of(out.ids, obs.response.worst_id);
    out.tasks.push_back(std::move(t));
  }
  return out;
}

inline std::vector<std::string> ids_in(std::span<const ChoiceObservation> data) {
  std::vector<std::string> ids;
  for (const auto& obs : data) ids.insert(ids.end(), obs.set.item_ids.begin(), obs.set.item_ids.end());
  return ids;
}

// Objective and (optionally) its gradient over dense utilities. Terms are
// accumulated in observation order so results are bit-reproducible.
inline double objective(const IndexedData& d, std::span<const double> u, double ridge,
                        std::vector<double>* grad) {
  if (grad) grad->assign(u.size(), 0.0);
  double ll = 0.0;
  std::vector<double> w;
  for (const auto& t : d.tasks) {
    // best term: log softmax(U) at best
    double mx = -std::numeric_limits<double>::infinity();
    for (auto i : t.items) mx = std::max(mx, u[i]);
    w.resize(t.items.size());
    double z = 0.0;
    for (std::size_t a = 0; a < t.items.size(); ++a) z += (w[a] = std::exp(u[t.items[a]] - mx));
    ll += u[t.best] - mx - std::log(z);
    if (grad) {
      (*grad)[t.best] += 1.0;
      for (std::size_t a = 0; a < t.items.size(); ++a) (*grad)[t.items[a]] -= w[a] / z;
    }
    // worst term: log softmax(-U) at worst over the remaining items
    double mn = std::numeric_limits<double>::infinity();
    for (auto i : t.items)
      if (i != t.best) mn = std::min(mn, u[i]);
    double zw = 0.0;
    for (std::size_t a = 0; a < t.items.size(); ++a)
      zw += (w[a] = t.items[a] == t.best ? 0.0 : std::exp(mn - u[t.items[a]]));
    ll += mn - u[t.worst] - std::log(zw);
    if (grad) {
      (*grad)[t.worst] -= 1.0;
      for (std::size_t a = 0; a < t.items.size(); ++a) (*grad)[t.items[a]] += w[a] / zw;
    }
  }
  double penalty = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    penalty += u[i] * u[i];
    if (grad) (*grad)[i] -= 2.0 * ridge * u[i];
  }
  return ll - ridge * penalty;
}

inline std::vector<double> dense(const std::vector<std::string>& ids, const Utilities& u) {
  std::vector<double> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = u.find(id);
    if (it == u.end()) throw NotFoundError("no utility for claim '" + id + "'");
    out.push_back(it->second);
  }
  return out;
}

inline void center(std::vector<double>& u) {
  if (u.empty()) return;
  double mean = 0.0;
  for (double x : u) mean += x;
  mean /= static_cast<double>(u.size());
  for (double& x : u) x -= mean;
}

inline double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}


// objective(u + e) - objective(u), evaluated from the displacement so that
// tiny changes near the optimum are not lost to cancellation.
inline double objective_change(const IndexedData& d, std::span<const double> u, std::span<const double> e,
                               double ridge) {
  double delta = 0.0;
  std::vector<double> p;
  for (const auto& t : d.tasks) {
    double mx = -std::numeric_limits<double>::infinity();
    for (auto i : t.items) mx = std::max(mx, u[i]);
    p.resize(t.items.size());
    double z = 0.0;
    for (std::size_t a = 0; a < t.items.size(); ++a) z += (p[a] = std::exp(u[t.items[a]] - mx));
    double s = 0.0;
    for (std::size_t a = 0; a < t.items.size(); ++a) s += p[a] / z * std::expm1(e[t.items[a]]);
    delta += e[t.best] - std::log1p(s);

    double mn = std::numeric_limits<double>::infinity();
    for (auto i : t.items)
      if (i != t.best) mn = std::min(mn, u[i]);
    double zw = 0.0;
    for (std::size_t a = 0; a < t.items.size(); ++a)
      zw += (p[a] = t.items[a] == t.best ? 0.0 : std::exp(mn - u[t.items[a]]));
    double sw = 0.0;
    for (std::size_t a = 0; a < t.items.size(); ++a)
      if (p[a] != 0.0) sw += p[a] / zw * std::expm1(-e[t.items[a]]);
    delta += -e[t.worst] - std::log1p(sw);
  }
  double penalty = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) penalty += e[i] * (2.0 * u[i] + e[i]);
  return delta - ridge * penalty;
}

// Negated Hessian of the objective (positive semi-definite).
inline Eigen::MatrixXd neg_hessian(const IndexedData& d, std::span<const double> u, double ridge) {
  const auto n = static_cast<Eigen::Index>(u.size());
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);
  std::vector<double> p;
  auto add_softmax_block = [&](const std::vector<std::size_t>& items, std::size_t skip, double sign) {
    double ref = -std::numeric_limits<double>::infinity();
    for (auto i : items)
      if (i != skip) ref = std::max(ref, sign * u[i]);
    p.assign(items.size(), 0.0);
    double z = 0.0;
    for (std::size_t a = 0; a < items.size(); ++a)
      if (items[a] != skip) z += (p[a] = std::exp(sign * u[items[a]] - ref));
    for (std::size_t a = 0; a < items.size(); ++a) {
      const auto ia = static_cast<Eigen::Index>(items[a]);
      h(ia, ia) += p[a] / z;
      for (std::size_t b = 0; b < items.size(); ++b) h(ia, static_cast<Eigen::Index>(items[b])) -= p[a] * p[b] / (z * z);
    }
  };
  for (const auto& t : d.tasks) {
    add_softmax_block(t.items, std::numeric_limits<std::size_t>::max(), 1.0);
    add_softmax_block(t.items, t.best, -1.0);
  }
  h.diagonal().array() += 2.0 * ridge;
  return h;
}

// Solves (a + shift I) x = b, raising the shift until a Cholesky factor exists.
inline std::vector<double> damped_solve(const Eigen::MatrixXd& a, std::span<const double> b) {
  const Eigen::Map<const Eigen::VectorXd> rhs(b.data(), static_cast<Eigen::Index>(b.size()));
  const double scale = std::max(1.0, a.diagonal().maxCoeff());
  for (double shift = 1e-10 * scale;; shift *= 100.0) {
    Eigen::MatrixXd shifted = a;
    shifted.diagonal().array() += shift;
    Eigen::LLT<Eigen::MatrixXd> llt(shifted);
    if (llt.info() != Eigen::Success) continue;
    const Eigen::VectorXd x = llt.solve(rhs);
    return {x.data(), x.data() + x.size()};
  }
}

}  // namespace detail

// Penalised log-likelihood of `data` under `utilities`.
inline double log_likelihood(const Utilities& utilities, std::span<const ChoiceObservation> data, double ridge = 0.0) {
  const auto d = detail::index_data(detail::ids_in(data), data);
  const auto u = detail::dense(d.ids, utilities);
  // The ridge term covers every supplied utility, including claims absent from the data.
  double extra = 0.0;
  for (const auto& [id, x] : utilities)
    if (!std::binary_search(d.ids.begin(), d.ids.end(), id)) extra += x * x;
  return detail::objective(d, u, ridge, nullptr) - ridge * extra;
}

// Analytic gradient of log_likelihood with respect to every supplied utility.
inline Utilities gradient(const Utilities& utilities, std::span<const ChoiceObservation> data, double ridge = 0.0) {
  const auto d = detail::index_data(detail::ids_in(data), data);
  const auto u = detail::dense(d.ids, utilities);
  std::vector<double> g;
  detail::objective(d, u, ridge, &g);
  Utilities out;
  for (const auto& [id, x] : utilities) out[id] = -2.0 * ridge * x;
  for (std::size_t i = 0; i < d.ids.size(); ++i) out[d.ids[i]] = g[i];
  return out;
}

// Damped Newton ascent with Armijo backtracking from the all-zero start.
// Iterates are kept centred (sum zero), which leaves the likelihood unchanged
// and never increases the ridge penalty.
inline UtilityVector estimate_mnl(std::span<const ChoiceObservation> data, const EstimationSettings& settings,
                                  std::optional<std::vector<std::string>> claim_ids = std::nullopt) {
  validate(settings);
  if (data.empty()) throw ValidationError("estimation needs at least one observation");
  const auto d = detail::index_data(detail::ids_in(data), data);
  if (claim_ids) {
    for (const auto& id : *claim_ids)
      if (!std::binary_search(d.ids.begin(), d.ids.end(), id))
        throw ValidationError("claim '" + id + "' has no observations");
  }
  if (settings.identification == Identification::Pinned &&
      !std::binary_search(d.ids.begin(), d.ids.end(), settings.pinned_id))
    throw ValidationError("pinned claim '" + settings.pinned_id + "' has no observations");

  UtilityVector result;
  result.identification = settings.identification;
  result.pinned_id = settings.pinned_id;

  std::vector<double> u(d.ids.size(), 0.0), g;
  double f = detail::objective(d, u, settings.ridge, &g);
  result.loglik_trace.push_back(f);
  result.status = "max_iterations";
  for (std::size_t it = 0; it < settings.max_iterations; ++it) {
    if (detail::norm2(g) < settings.gradient_tolerance) {
      result.converged = true;
      result.status = "converged";
      break;
    }
    auto dir = detail::damped_solve(detail::neg_hessian(d, u, settings.ridge), g);
    detail::center(dir);
    double slope = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) slope += g[i] * dir[i];
    if (!(slope > 0.0)) {
      dir = g;
      detail::center(dir);
      slope = 0.0;
      for (std::size_t i = 0; i < u.size(); ++i) slope += g[i] * dir[i];
    }
    bool accepted = false;
    double gain = 0.0;
    for (double step = 1.0; step > 1e-300; step *= settings.backtrack) {
      for (auto& x : dir) x *= step == 1.0 ? 1.0 : settings.backtrack;
      gain = detail::objective_change(d, u, dir, settings.ridge);
      if (!std::isfinite(gain)) throw DomainError("non-finite log-likelihood during estimation");
      if (gain >= settings.armijo * step * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      result.status = "line_search_failed";
      break;
    }
    for (std::size_t i = 0; i < u.size(); ++i) u[i] += dir[i];
    detail::objective(d, u, settings.ridge, &g);
    f += gain;
    result.loglik_trace.push_back(f);
    result.iterations = it + 1;
    const double largest = std::abs(*std::max_element(u.begin(), u.end(), [](double a, double b) {
      return std::abs(a) < std::abs(b);
    }));
    if (largest > settings.divergence_bound) {
      result.status = "diverging";
      break;
    }
  }

  if (settings.identification == Identification::Pinned) {
    const double shift = u[detail::index_of(d.ids, settings.pinned_id)];
    for (double& x : u) x -= shift;
    f = detail::objective(d, u, settings.ridge, nullptr);
  }
  result.final_loglik = f;
  for (std::size_t i = 0; i < d.ids.size(); ++i) result.utilities[d.ids[i]] = u[i];
  return result;
}

// Affine rescaling: shift so the minimum is 0, then scale so the total is 100.
// Identical utilities map to 100/N each.
inline Utilities normalize_utilities(const Utilities& utilities) {
  if (utilities.empty()) return {};
  auto [lo, hi] = std::minmax_element(utilities.begin(), utilities.end(),
                                      [](const auto& a, const auto& b) { return a.second < b.second; });
  const double min = lo->second;
  Utilities out;
  if (hi->second == min) {
    for (const auto& [id, x] : utilities) out[id] = 100.0 / static_cast<double>(utilities.size());
    return out;
  }
  double total = 0.0;
  for (const auto& [id, x] : utilities) total += x - min;
  for (const auto& [id, x] : utilities) out[id] = (x - min) * (100.0 / total);
  return out;
}

inline void write_utilities(std::ostream& out, const UtilityVector& u) {
  const auto norm = normalize_utilities(u.utilities);
  for (const auto& [id, x] : u.utilities)
    out << nlohmann::json{{"claim_id", id}, {"utility", x}, {"normalized", norm.at(id)}}.dump() << '\n';
}

}  // namespace claimlab
