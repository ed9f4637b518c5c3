#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "fedalv/fed.hpp"
#include "fedalv/global_step.hpp"
#include "fedalv/protocol.hpp"

namespace fedalv {

struct HistoryRow {
  std::size_t round = 0;
  std::string who;    // "client_<k>" or "target"
  std::string split;  // "val" or "target"
  double accuracy = 0.0;
};

// Mean free energies right after aggregation, before the alignment step.
struct EnergyProbe {
  std::size_t round = 0;
  double target_mean = 0.0;
  double source_mean = 0.0;
};

struct FdgResult {
  ServerState server;
  std::vector<HistoryRow> history;
  std::vector<EnergyProbe> energy;
  Ledger ledger;
  std::size_t aggregations = 0;

  double final_target_accuracy() const {
    for (auto it = history.rbegin(); it != history.rend(); ++it) {
      if (it->who == "target") return it->accuracy;
    }
    return 0.0;
  }

  double final_source_accuracy_mean() const {
    if (history.empty()) return 0.0;
    const std::size_t last = history.back().round;
    double acc = 0.0;
    std::size_t n = 0;
    for (const auto& row : history) {
      if (row.round == last && row.who != "target") {
        acc += row.accuracy;
        ++n;
      }
    }
    return n == 0 ? 0.0 : acc / static_cast<double>(n);
  }
};

inline std::string history_csv(const std::vector<HistoryRow>& rows) {
  std::string out = "round,client_or_target,split,accuracy\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.6f", r.accuracy);
    out += std::to_string(r.round) + "," + r.who + "," + r.split + "," + buf + "\n";
  }
  return out;
}

struct SourceSplit {
  ClientDataset train;
  ClientDataset validation;
};

// Shuffles, then holds out the last `fraction` of the samples for validation.
inline SourceSplit split_validation(const ClientDataset& ds, double fraction, Rng& rng) {
  const auto order = rng.permutation(ds.size());
  const auto n_val =
      static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ds.size())));
  const std::size_t n_train = ds.size() - n_val;
  const std::span<const std::size_t> all(order);
  return {ds.subset(all.first(n_train)), ds.subset(all.subspan(n_train))};
}

// Stream ids under the run seed.
namespace streams {
inline constexpr std::uint64_t kInit = 0x1000;
inline constexpr std::uint64_t kTarget = 0x2000;
inline constexpr std::uint64_t kClientBase = 0x3000;
inline constexpr std::uint64_t kValidationBase = 0x4000;
inline constexpr std::uint64_t kLabeledPoolBase = 0x5000;
inline constexpr std::uint64_t kSelection = 0x6000;
}  // namespace streams

// Federated training on prepared pools. `train` carries each source's labeled
// mask; `validation` is labeled held-out source data; `target` is unlabeled.
inline FdgResult run_fdg_on(const FedConfig& cfg, const std::vector<ClientDataset>& train,
                            const std::vector<ClientDataset>& validation,
                            const ClientDataset& target, std::uint64_t run_seed) {
  cfg.validate();
  if (train.empty()) throw ConfigError("run_fdg: no source clients");
  if (validation.size() != train.size()) throw ConfigError("run_fdg: validation sets mismatch");
  const Rng root(run_seed);
  Rng init_rng = root.split(streams::kInit);

  FdgResult res;
  res.server.global_params = init_params(cfg.model, init_rng);
  res.server.source_emas.assign(train.size(), EmaTracker{0.0, cfg.ema_alpha, false});

  std::vector<ClientState> clients;
  for (std::size_t k = 0; k < train.size(); ++k) {
    if (train[k].features.cols() != cfg.model.input_dim) {
      throw ConfigError("run_fdg: client feature width does not match model input_dim");
    }
    clients.push_back({k, train[k], res.server.global_params,
                       OptimizerState(cfg.optimizer, cfg.model.param_count()),
                       root.split(streams::kClientBase + k)});
  }
  ClientState target_client{kTargetClient, target, res.server.global_params,
                            OptimizerState(cfg.optimizer, cfg.model.param_count()),
                            root.split(streams::kTarget)};

  Channel channel(res.ledger);
  std::size_t last_comm = 0;
  for (std::size_t round = 1; round <= cfg.rounds; ++round) {
    if (!cfg.is_comm_round(round)) continue;
    const std::size_t epochs = round - last_comm;
    last_comm = round;
    channel.set_round(round);

    const ModelParams broadcast = res.server.global_params;
    parallel_for(clients.size(), cfg.threads, [&](std::size_t k) {
      clients[k] = local_train(std::move(clients[k]), broadcast, epochs, cfg);
    });

    std::vector<ParamVector> uploads;
    std::vector<std::size_t> sizes;
    for (auto& c : clients) {
      uploads.push_back(channel.upload(c.id, ParamPayload{flatten(c.params)}).params);
      sizes.push_back(channel.upload(c.id, SizePayload{c.data.labeled_count()}).count);
    }
    res.server.global_params = unflatten(cfg.model, aggregate(uploads, sizes));
    res.server.round = round;
    ++res.aggregations;

    EnergyProbe probe{round, free_energies(res.server.global_params, target.features).mean, 0.0};
    double src = 0.0;
    std::size_t n_src = 0;
    for (const auto& v : validation) {
      if (v.size() == 0) continue;
      const auto rep = free_energies(res.server.global_params, v.features);
      src += rep.mean * static_cast<double>(v.size());
      n_src += v.size();
    }
    probe.source_mean = n_src ? src / static_cast<double>(n_src) : 0.0;
    res.energy.push_back(probe);

    if (cfg.global_step) {
      global_optimize(res.server, clients, target_client, cfg, channel);
    }
    for (auto& c : clients) {
      c.params = unflatten(
          cfg.model, channel.download(c.id, ParamPayload{flatten(res.server.global_params)}).params);
    }

    for (std::size_t k = 0; k < clients.size(); ++k) {
      if (validation[k].size() == 0) continue;
      res.history.push_back({round, "client_" + std::to_string(k), "val",
                             evaluate(res.server.global_params, validation[k])});
    }
    res.history.push_back({round, "target", "target", evaluate(res.server.global_params, target)});
  }
  return res;
}

// Leave-one-domain-out training: validation split per source, then run_fdg_on.
inline FdgResult run_fdg(const FedConfig& cfg, const FederationSplit& fed) {
  const Rng root(cfg.seed);
  std::vector<ClientDataset> train;
  std::vector<ClientDataset> val;
  for (std::size_t k = 0; k < fed.sources.size(); ++k) {
    Rng r = root.split(streams::kValidationBase + k);
    auto s = split_validation(fed.sources[k], cfg.validation_fraction, r);
    s.train.labeled_mask.assign(s.train.size(), true);
    train.push_back(std::move(s.train));
    val.push_back(std::move(s.validation));
  }
  ClientDataset target = fed.target;
  target.labeled_mask.assign(target.size(), false);
  return run_fdg_on(cfg, train, val, target, cfg.seed);
}

}  // namespace fedalv
