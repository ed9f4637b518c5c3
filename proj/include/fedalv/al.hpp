#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fedalv/assignment.hpp"
#include "fedalv/datagen.hpp"
#include "fedalv/energy.hpp"
#include "fedalv/errors.hpp"
#include "fedalv/fdg.hpp"
#include "fedalv/model.hpp"
#include "fedalv/protocol.hpp"

namespace fedalv {

enum class SelectorKind { Random, Entropy, Coreset, EnergySource, Fedal, Fedalv };

inline constexpr std::string_view selector_name(SelectorKind k) noexcept {
  switch (k) {
    case SelectorKind::Random: return "random";
    case SelectorKind::Entropy: return "entropy";
    case SelectorKind::Coreset: return "coreset";
    case SelectorKind::EnergySource: return "energy";
    case SelectorKind::Fedal: return "fedal";
    case SelectorKind::Fedalv: return "fedalv";
  }
  return "?";
}

inline SelectorKind parse_selector(std::string_view name) {
  for (auto k : {SelectorKind::Random, SelectorKind::Entropy, SelectorKind::Coreset,
                 SelectorKind::EnergySource, SelectorKind::Fedal, SelectorKind::Fedalv}) {
    if (selector_name(k) == name) return k;
  }
  throw ConfigError("unknown selector '" + std::string(name) + "'");
}

// Per-client lists of newly queried sample indices, in selection order.
struct SelectionResult {
  std::vector<std::vector<std::size_t>> per_client;

  std::vector<std::size_t> counts() const {
    std::vector<std::size_t> c;
    for (const auto& s : per_client) c.push_back(s.size());
    return c;
  }

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& s : per_client) n += s.size();
    return n;
  }

  friend bool operator==(const SelectionResult&, const SelectionResult&) = default;
};

// floor(B / K) each, remainder one apiece to the lowest client ids.
inline std::vector<std::size_t> fixed_quotas(std::size_t budget, std::size_t clients) {
  if (clients == 0) throw ArgumentError("fixed_quotas: no clients");
  std::vector<std::size_t> q(clients, budget / clients);
  for (std::size_t k = 0; k < budget % clients; ++k) ++q[k];
  return q;
}

namespace detail {

inline void check_budgets(std::span<const ClientDataset> sources,
                          std::span<const std::size_t> budgets) {
  if (budgets.size() != sources.size()) {
    throw ArgumentError("selection: " + std::to_string(budgets.size()) + " budgets for " +
                        std::to_string(sources.size()) + " clients");
  }
  for (std::size_t k = 0; k < sources.size(); ++k) {
    const auto pool = sources[k].size() - sources[k].labeled_count();
    if (budgets[k] > pool) {
      throw ArgumentError("selection: budget " + std::to_string(budgets[k]) + " exceeds the " +
                          std::to_string(pool) + " unlabeled samples of client " +
                          std::to_string(k));
    }
  }
}

// Indices of the `count` largest scores; ties go to the lower position.
inline std::vector<std::size_t> top_by_score(std::span<const double> scores, std::size_t count) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(std::min(count, order.size()));
  return order;
}

// Scores every unlabeled sample of each client and keeps the top budget.
template <typename ScoreFn>
SelectionResult select_by_score(const ModelParams& params, std::span<const ClientDataset> sources,
                                std::span<const std::size_t> budgets, ScoreFn&& score) {
  check_budgets(sources, budgets);
  SelectionResult r;
  for (std::size_t k = 0; k < sources.size(); ++k) {
    const auto pool = sources[k].unlabeled_indices();
    std::vector<std::size_t> picked;
    if (budgets[k] > 0) {
      const auto t = forward_eval(params, gather_rows(sources[k].features, pool));
      std::vector<double> s(pool.size());
      for (std::size_t i = 0; i < pool.size(); ++i) s[i] = score(t.logits.row(i));
      for (auto pos : top_by_score(s, budgets[k])) picked.push_back(pool[pos]);
    }
    r.per_client.push_back(std::move(picked));
  }
  return r;
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace detail

inline SelectionResult select_random(std::span<const ClientDataset> sources,
                                     std::span<const std::size_t> budgets, Rng& rng) {
  detail::check_budgets(sources, budgets);
  SelectionResult r;
  for (std::size_t k = 0; k < sources.size(); ++k) {
    r.per_client.push_back(rng.sample(sources[k].unlabeled_indices(), budgets[k]));
  }
  return r;
}

inline double predictive_entropy(std::span<const double> logits) {
  const auto p = softmax(logits);
  double h = 0.0;
  for (double q : p) {
    if (q > 0.0) h -= q * std::log(q);
  }
  return h;
}

inline SelectionResult select_entropy(const ModelParams& params,
                                      std::span<const ClientDataset> sources,
                                      std::span<const std::size_t> budgets) {
  return detail::select_by_score(params, sources, budgets, predictive_entropy);
}

// F(x) minus the top-2 probability margin: high energy and low margin rank first.
inline double energy_uncertainty_score(std::span<const double> logits) {
  auto p = softmax(logits);
  std::partial_sort(p.begin(), p.begin() + 2, p.end(), std::greater<>());
  return free_energy(logits) - (p[0] - p[1]);
}

inline SelectionResult select_energy_source(const ModelParams& params,
                                            std::span<const ClientDataset> sources,
                                            std::span<const std::size_t> budgets) {
  return detail::select_by_score(params, sources, budgets, energy_uncertainty_score);
}

// Farthest-first traversal: repeatedly takes the candidate whose distance to the
// nearest centre (initial centres plus picks so far) is largest; ties to the
// earlier candidate.
inline std::vector<std::size_t> k_center_greedy(const Matrix& points,
                                                std::span<const std::size_t> centers,
                                                std::span<const std::size_t> candidates,
                                                std::size_t budget) {
  if (centers.empty()) throw ArgumentError("k_center_greedy: at least one centre is required");
  if (budget > candidates.size()) throw ArgumentError("k_center_greedy: budget exceeds pool");
  std::vector<double> nearest(candidates.size(), std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    for (auto c : centers) {
      nearest[i] = std::min(nearest[i], detail::squared_distance(points.row(candidates[i]),
                                                                 points.row(c)));
    }
  }
  std::vector<bool> taken(candidates.size(), false);
  std::vector<std::size_t> picked;
  for (std::size_t b = 0; b < budget; ++b) {
    std::size_t best = candidates.size();
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (!taken[i] && (best == candidates.size() || nearest[i] > nearest[best])) best = i;
    }
    taken[best] = true;
    picked.push_back(candidates[best]);
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (taken[i]) continue;
      nearest[i] = std::min(nearest[i], detail::squared_distance(points.row(candidates[i]),
                                                                 points.row(candidates[best])));
    }
  }
  return picked;
}

// Eval-mode latent z = mu for the given rows.
inline Matrix latents(const ModelParams& params, const Matrix& x) {
  return forward_eval(params, x).z;
}

inline SelectionResult select_coreset(const ModelParams& params,
                                      std::span<const ClientDataset> sources,
                                      std::span<const std::size_t> budgets) {
  detail::check_budgets(sources, budgets);
  SelectionResult r;
  for (std::size_t k = 0; k < sources.size(); ++k) {
    const auto labeled = sources[k].labeled_indices();
    if (labeled.empty()) {
      throw ArgumentError("select_coreset: client " + std::to_string(k) + " has no labeled samples");
    }
    if (budgets[k] == 0) {
      r.per_client.emplace_back();
      continue;
    }
    const Matrix z = latents(params, sources[k].features);
    r.per_client.push_back(k_center_greedy(z, labeled, sources[k].unlabeled_indices(), budgets[k]));
  }
  return r;
}

// Candidate pool for the nearest-source assignment: one latent matrix per
// client with the client-local index of every row.
struct SourceLatents {
  std::vector<Matrix> latents;
  std::vector<std::vector<std::size_t>> indices;
};

// For each target row in order, takes the nearest unused source candidate
// (ties: lower client id, then lower row). With `quotas`, clients whose quota is
// exhausted are skipped.
inline SelectionResult nearest_source_assignment(
    const Matrix& target_latents, const SourceLatents& pool,
    const std::optional<std::vector<std::size_t>>& quotas = std::nullopt) {
  const std::size_t k_clients = pool.latents.size();
  if (quotas && quotas->size() != k_clients) throw ArgumentError("assignment: quota count mismatch");
  std::vector<std::vector<bool>> used(k_clients);
  for (std::size_t k = 0; k < k_clients; ++k) used[k].assign(pool.latents[k].rows(), false);
  SelectionResult r;
  r.per_client.resize(k_clients);
  for (std::size_t t = 0; t < target_latents.rows(); ++t) {
    std::size_t best_k = k_clients;
    std::size_t best_i = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < k_clients; ++k) {
      if (quotas && r.per_client[k].size() >= (*quotas)[k]) continue;
      for (std::size_t i = 0; i < pool.latents[k].rows(); ++i) {
        if (used[k][i]) continue;
        const double d = detail::squared_distance(target_latents.row(t), pool.latents[k].row(i));
        if (best_k == k_clients || d < best_d) {
          best_d = d;
          best_k = k;
          best_i = i;
        }
      }
    }
    if (best_k == k_clients) throw ArgumentError("assignment: source pool exhausted");
    used[best_k][best_i] = true;
    r.per_client[best_k].push_back(pool.indices[best_k][best_i]);
  }
  return r;
}

// Unlabeled target rows ranked by descending free energy (ties: lower index).
inline std::vector<std::size_t> top_energy_targets(const ModelParams& params,
                                                   const ClientDataset& target,
                                                   std::size_t count) {
  const auto pool = target.unlabeled_indices();
  if (pool.size() < count) {
    throw ArgumentError("top_energy_targets: target pool of " + std::to_string(pool.size()) +
                        " is smaller than budget " + std::to_string(count));
  }
  const auto f = free_energies(params, gather_rows(target.features, pool)).energies;
  std::vector<std::size_t> out;
  for (auto pos : detail::top_by_score(f, count)) out.push_back(pool[pos]);
  return out;
}

inline SourceLatents unlabeled_source_latents(const ModelParams& params,
                                              std::span<const ClientDataset> sources) {
  SourceLatents pool;
  for (const auto& s : sources) {
    auto idx = s.unlabeled_indices();
    pool.latents.push_back(idx.empty() ? Matrix(0, params.config.latent_dim)
                                       : latents(params, gather_rows(s.features, idx)));
    pool.indices.push_back(std::move(idx));
  }
  return pool;
}

namespace detail {

inline SelectionResult select_nearest(const ModelParams& params,
                                      std::span<const ClientDataset> sources,
                                      const ClientDataset& target, std::size_t budget,
                                      const std::optional<std::vector<std::size_t>>& quotas) {
  std::size_t available = 0;
  for (const auto& s : sources) available += s.size() - s.labeled_count();
  if (available < budget) {
    throw ArgumentError("selection: budget " + std::to_string(budget) + " exceeds the " +
                        std::to_string(available) + " unlabeled source samples");
  }
  if (budget == 0) return SelectionResult{std::vector<std::vector<std::size_t>>(sources.size())};
  const auto top = top_energy_targets(params, target, budget);
  const Matrix zt = latents(params, gather_rows(target.features, top));
  return nearest_source_assignment(zt, unlabeled_source_latents(params, sources), quotas);
}

}  // namespace detail

// Variable per-client budgets: the B highest-energy target samples each claim
// their nearest unused unlabeled source sample in latent space.
inline SelectionResult select_fedalv(const ModelParams& params,
                                     std::span<const ClientDataset> sources,
                                     const ClientDataset& target, std::size_t budget) {
  return detail::select_nearest(params, sources, target, budget, std::nullopt);
}

// Same assignment under fixed per-client quotas.
inline SelectionResult select_fedal(const ModelParams& params,
                                    std::span<const ClientDataset> sources,
                                    const ClientDataset& target, std::size_t budget) {
  const auto quotas = fixed_quotas(budget, sources.size());
  detail::check_budgets(sources, quotas);
  return detail::select_nearest(params, sources, target, budget, quotas);
}

}  // namespace fedalv
