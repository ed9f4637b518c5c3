#pragma once

#include <algorithm>
#include <vector>

#include "fedalv/energy.hpp"
#include "fedalv/errors.hpp"
#include "fedalv/fed.hpp"
#include "fedalv/protocol.hpp"

namespace fedalv {

struct GlobalStepReport {
  double fea = 0.0;
  double target_mean_energy = 0.0;
  std::vector<double> source_mean_energy;
  bool gradient_available = false;  // false until a source EMA exists
  bool applied = false;
};

namespace detail {

inline Matrix draw_batch(const ClientDataset& ds, std::vector<std::size_t> pool, std::size_t batch,
                         Rng& rng) {
  const std::size_t count = std::min(batch, pool.size());
  const auto picked = rng.sample(std::move(pool), count);
  return gather_rows(ds.features, picked);
}

}  // namespace detail

// Server-side free-energy alignment under the privacy policy:
//   1. the target receives θ_g, evaluates F on an unlabeled batch and returns
//      its energies plus the hinge gradient against the current source EMAs;
//   2. every source receives θ_g and returns the mean F of one local batch,
//      which the server folds into that source's EMA;
//   3. the server takes one SGD step on θ_g with λ_fea times the target gradient.
// Only parameters, gradients and energy scalars cross the boundary.
inline GlobalStepReport global_optimize(ServerState& server, std::vector<ClientState>& sources,
                                        ClientState& target, const FedConfig& cfg,
                                        Channel& channel) {
  const auto target_pool = target.data.unlabeled_indices();
  if (target_pool.empty()) throw ConfigError("global_optimize: target has no unlabeled data");
  if (server.source_emas.size() != sources.size()) {
    throw StateError("global_optimize: one EMA tracker per source is required");
  }
  GlobalStepReport rep;
  const std::size_t n_params = cfg.model.param_count();
  const ModelParams theta_g = server.global_params;

  channel.download(kTargetClient, ParamPayload{flatten(theta_g)});
  const Matrix xt = detail::draw_batch(target.data, target_pool, cfg.target_batch, target.rng);
  const bool have_ref = std::any_of(server.source_emas.begin(), server.source_emas.end(),
                                    [](const EmaTracker& e) { return e.initialized; });
  ParamVector hinge_grad(n_params);
  std::vector<double> target_energies;
  if (have_ref) {
    auto fg = fea_gradient(theta_g, xt, server.source_emas);
    rep.fea = fg.loss.loss;
    target_energies = std::move(fg.energies);
    hinge_grad = channel.upload(kTargetClient, GradPayload{std::move(fg.grad)}).grad;
    rep.gradient_available = true;
  } else {
    target_energies = free_energies(theta_g, xt).energies;
  }
  target_energies = channel.upload(kTargetClient, EnergyPayload{target_energies}).energies;
  rep.target_mean_energy = energy_report(target_energies).mean;

  for (std::size_t k = 0; k < sources.size(); ++k) {
    auto& src = sources[k];
    channel.download(k, ParamPayload{flatten(theta_g)});
    std::vector<std::size_t> pool(src.data.size());
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
    const Matrix xs = detail::draw_batch(src.data, std::move(pool), cfg.target_batch, src.rng);
    const double mean_f = free_energies(theta_g, xs).mean;
    const auto sent = channel.upload(k, EnergyPayload{{mean_f}});
    server.source_emas[k] = ema_update(server.source_emas[k], sent.energies.front());
    rep.source_mean_energy.push_back(mean_f);
  }

  bool nonzero = false;
  for (double g : hinge_grad.values) nonzero = nonzero || g != 0.0;
  if (rep.gradient_available && nonzero && cfg.lambda_fea > 0.0) {
    ParamVector scaled = hinge_grad;
    for (double& g : scaled.values) g *= cfg.lambda_fea;
    // Fresh optimizer; decay is left to the clients so a zero gradient is a no-op.
    SgdHyper h = cfg.optimizer;
    h.weight_decay = 0.0;
    OptimizerState opt(h, n_params);
    server.global_params = unflatten(cfg.model, sgd_step(flatten(theta_g), scaled, opt));
    rep.applied = true;
  }
  return rep;
}

}  // namespace fedalv
