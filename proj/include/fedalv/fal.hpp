#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "fedalv/al.hpp"
#include "fedalv/assignment.hpp"
#include "fedalv/fdg.hpp"

namespace fedalv {

struct FalConfig {
  FedConfig fed;  // per-cycle training schedule (rounds, comm_every, ...)
  std::size_t cycles = 5;
  double initial_fraction = 0.02;
  // Budget per cycle: `budget` if set, otherwise round(budget_fraction · source pool).
  std::optional<std::size_t> budget;
  double budget_fraction = 0.02;
  SelectorKind selector = SelectorKind::Fedalv;

  void validate() const {
    fed.validate();
    if (cycles < 1) throw ConfigError("FalConfig: cycles must be >= 1");
    if (!(initial_fraction >= 0.0 && initial_fraction <= 1.0)) {
      throw ConfigError("FalConfig: initial_fraction must be in [0, 1]");
    }
    if (!(budget_fraction >= 0.0 && budget_fraction <= 1.0)) {
      throw ConfigError("FalConfig: budget_fraction must be in [0, 1]");
    }
  }
};

struct CycleRecord {
  std::size_t cycle = 0;
  std::size_t labeled_total = 0;  // after this cycle's queries are labeled
  std::vector<std::size_t> budgets;
  double target_accuracy = 0.0;
  double source_accuracy_mean = 0.0;
  double emd = std::numeric_limits<double>::quiet_NaN();
  SelectionResult selection;
  ModelParams global_params;
  std::vector<ClientDataset> pools_before;  // source pools as seen by the selector
};

struct FalResult {
  std::size_t budget = 0;
  std::vector<CycleRecord> cycles;
  std::vector<ClientDataset> validation;
  ClientDataset target;
  Ledger ledger;
};

// Source latents of a selection, stacked in client order.
inline Matrix selected_latents(const ModelParams& params, std::span<const ClientDataset> sources,
                               const SelectionResult& sel) {
  Matrix out(sel.total(), params.config.latent_dim);
  std::size_t row = 0;
  for (std::size_t k = 0; k < sources.size(); ++k) {
    if (sel.per_client[k].empty()) continue;
    const Matrix z = latents(params, gather_rows(sources[k].features, sel.per_client[k]));
    for (std::size_t i = 0; i < z.rows(); ++i, ++row) {
      std::copy(z.row(i).begin(), z.row(i).end(), out.row(row).begin());
    }
  }
  return out;
}

// EMD between the selected source latents and the latents of the equally many
// highest-energy target samples.
inline double selection_emd(const ModelParams& params, std::span<const ClientDataset> sources,
                            const ClientDataset& target, const SelectionResult& sel) {
  const std::size_t b = sel.total();
  if (b == 0) return std::numeric_limits<double>::quiet_NaN();
  const auto top = top_energy_targets(params, target, b);
  return emd(selected_latents(params, sources, sel), latents(params, gather_rows(target.features, top)));
}

inline SelectionResult run_selector(SelectorKind kind, const ModelParams& params,
                                    std::span<const ClientDataset> sources,
                                    const ClientDataset& target, std::size_t budget, Rng& rng) {
  const auto quotas = fixed_quotas(budget, sources.size());
  switch (kind) {
    case SelectorKind::Random: return select_random(sources, quotas, rng);
    case SelectorKind::Entropy: return select_entropy(params, sources, quotas);
    case SelectorKind::Coreset: return select_coreset(params, sources, quotas);
    case SelectorKind::EnergySource: return select_energy_source(params, sources, quotas);
    case SelectorKind::Fedal: return select_fedal(params, sources, target, budget);
    case SelectorKind::Fedalv: return select_fedalv(params, sources, target, budget);
  }
  throw ArgumentError("run_selector: unknown selector");
}

namespace detail {

// Boundary traffic of one selection round.
inline void log_selection_traffic(SelectorKind kind, Channel& ch, std::span<const ClientDataset> sources,
                                  const ClientDataset& target, const SelectionResult& sel,
                                  std::size_t param_count, std::size_t latent_dim) {
  const bool server_side = kind == SelectorKind::Fedal || kind == SelectorKind::Fedalv;
  if (server_side && sel.total() > 0) {
    ch.download(kTargetClient, ParamPayload{ParamVector(param_count)});
    const std::size_t nt = target.size() - target.labeled_count();
    ch.upload(kTargetClient, EnergyPayload{std::vector<double>(nt)});
    ch.upload(kTargetClient, LatentPayload{Matrix(sel.total(), latent_dim), {}});
  }
  for (std::size_t k = 0; k < sources.size(); ++k) {
    ch.download(k, ParamPayload{ParamVector(param_count)});
    if (server_side && sel.total() > 0) {
      const std::size_t nu = sources[k].size() - sources[k].labeled_count();
      ch.upload(k, LatentPayload{Matrix(nu, latent_dim), {}});
      ch.download(k, IndexPayload{sel.per_client[k]});
    }
  }
}

}  // namespace detail

inline std::uint64_t cycle_seed(std::uint64_t seed, std::size_t cycle) {
  return detail::mix64(seed ^ detail::mix64(0xA11CE + cycle));
}

// C cycles of: fresh model, federated training on the current labeled pools,
// selection under budget B, oracle labeling of the queried samples.
inline FalResult run_fal(const FalConfig& cfg, const FederationSplit& fed) {
  cfg.validate();
  const Rng root(cfg.fed.seed);
  std::vector<ClientDataset> train;
  FalResult res;
  std::size_t pool_total = 0;
  for (std::size_t k = 0; k < fed.sources.size(); ++k) {
    Rng vr = root.split(streams::kValidationBase + k);
    auto s = split_validation(fed.sources[k], cfg.fed.validation_fraction, vr);
    Rng lr = root.split(streams::kLabeledPoolBase + k);
    init_labeled_pool(s.train, cfg.initial_fraction, lr);
    if (s.train.labeled_count() == 0) {
      throw ConfigError("run_fal: client " + std::to_string(k) + " starts with no labeled samples");
    }
    pool_total += s.train.size();
    train.push_back(std::move(s.train));
    res.validation.push_back(std::move(s.validation));
  }
  res.target = fed.target;
  res.target.labeled_mask.assign(res.target.size(), false);
  res.budget = cfg.budget.value_or(static_cast<std::size_t>(
      std::llround(cfg.budget_fraction * static_cast<double>(pool_total))));

  std::size_t labeled_total = 0;
  for (const auto& t : train) labeled_total += t.labeled_count();

  Channel channel(res.ledger);
  for (std::size_t c = 1; c <= cfg.cycles; ++c) {
    auto fdg = run_fdg_on(cfg.fed, train, res.validation, res.target, cycle_seed(cfg.fed.seed, c));
    res.ledger.append(fdg.ledger);
    const ModelParams& theta = fdg.server.global_params;

    Rng sel_rng = root.split(streams::kSelection + c);
    CycleRecord rec;
    rec.cycle = c;
    rec.pools_before = train;
    rec.selection = run_selector(cfg.selector, theta, train, res.target, res.budget, sel_rng);
    channel.set_round(c);
    detail::log_selection_traffic(cfg.selector, channel, train, res.target, rec.selection,
                                  cfg.fed.model.param_count(), cfg.fed.model.latent_dim);
    rec.budgets = rec.selection.counts();
    rec.emd = selection_emd(theta, train, res.target, rec.selection);
    for (std::size_t k = 0; k < train.size(); ++k) {
      for (auto i : rec.selection.per_client[k]) train[k].labeled_mask[i] = true;
    }
    labeled_total += rec.selection.total();
    rec.labeled_total = labeled_total;
    rec.target_accuracy = fdg.final_target_accuracy();
    rec.source_accuracy_mean = fdg.final_source_accuracy_mean();
    rec.global_params = theta;
    res.cycles.push_back(std::move(rec));
  }
  return res;
}

inline std::string fal_metrics_csv(const FalResult& r, SelectorKind kind) {
  std::string out = "cycle,selector,labeled_total";
  const std::size_t k = r.cycles.empty() ? 0 : r.cycles.front().budgets.size();
  for (std::size_t i = 0; i < k; ++i) out += ",budget_client_" + std::to_string(i);
  out += ",target_acc,source_acc_mean,emd\n";
  char buf[128];
  for (const auto& c : r.cycles) {
    out += std::to_string(c.cycle) + "," + std::string(selector_name(kind)) + "," +
           std::to_string(c.labeled_total);
    for (auto b : c.budgets) out += "," + std::to_string(b);
    if (std::isnan(c.emd)) {
      std::snprintf(buf, sizeof(buf), ",%.6f,%.6f,nan\n", c.target_accuracy, c.source_accuracy_mean);
    } else {
      std::snprintf(buf, sizeof(buf), ",%.6f,%.6f,%.6f\n", c.target_accuracy,
                    c.source_accuracy_mean, c.emd);
    }
    out += buf;
  }
  return out;
}

}  // namespace fedalv
