#pragma once

#include <cstddef>
#include <cstdint>
#include <exception>
#include <span>
#include <thread>
#include <vector>

#include "fedalv/datagen.hpp"
#include "fedalv/energy.hpp"
#include "fedalv/errors.hpp"
#include "fedalv/model.hpp"
#include "fedalv/numcore.hpp"
#include "fedalv/rng.hpp"

namespace fedalv {

struct FedConfig {
  ModelConfig model;
  std::size_t rounds = 100;      // one round = one local epoch
  std::size_t comm_every = 5;    // local epochs between communication rounds
  std::size_t local_batch = 64;
  LossLambdas lambdas;           // λ_L2 = 0.01, λ_CMI = 0.001
  double lambda_fea = 0.1;
  std::size_t target_batch = 256;
  SgdHyper optimizer;            // lr 0.01, momentum 0.9, weight decay 1e-5
  double ema_alpha = 0.9;
  double validation_fraction = 0.1;
  bool global_step = true;       // false = plain FedAvg server
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  void validate() const {
    model.validate();
    if (rounds < 1) throw ConfigError("FedConfig: rounds must be >= 1");
    if (comm_every < 1) throw ConfigError("FedConfig: comm_every must be >= 1");
    if (local_batch < 1) throw ConfigError("FedConfig: local_batch must be >= 1");
    if (target_batch < 1) throw ConfigError("FedConfig: target_batch must be >= 1");
    if (lambdas.l2 < 0.0 || lambdas.cmi < 0.0 || lambda_fea < 0.0) {
      throw ConfigError("FedConfig: loss scalers must be >= 0");
    }
    if (!(ema_alpha >= 0.0 && ema_alpha < 1.0)) throw ConfigError("FedConfig: ema_alpha in [0,1)");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
      throw ConfigError("FedConfig: validation_fraction in [0,1)");
    }
    if (threads < 1) throw ConfigError("FedConfig: threads must be >= 1");
  }

  // FedAvg baseline: no local regularisers, no server-side alignment step.
  FedConfig as_fedavg() const {
    FedConfig c = *this;
    c.lambdas = {0.0, 0.0};
    c.lambda_fea = 0.0;
    c.global_step = false;
    return c;
  }

  // Communication happens every comm_every rounds and after the final round.
  bool is_comm_round(std::size_t round) const {
    return round % comm_every == 0 || round == rounds;
  }
};

struct ClientState {
  std::size_t id = 0;
  ClientDataset data;
  ModelParams params;
  OptimizerState optimizer;
  Rng rng;
};

struct ServerState {
  ModelParams global_params;
  std::size_t round = 0;
  std::vector<EmaTracker> source_emas;
};

// Restarts from the global model with zero velocity, then runs `epochs` passes
// of mini-batch SGD over the labeled pool.
inline ClientState local_train(ClientState client, const ModelParams& global_params,
                               std::size_t epochs, const FedConfig& cfg) {
  const auto labeled = client.data.labeled_indices();
  if (labeled.empty()) {
    throw ConfigError("local_train: client " + std::to_string(client.id) +
                      " has no labeled samples");
  }
  client.params = global_params;
  client.optimizer = OptimizerState(cfg.optimizer, cfg.model.param_count());
  ParamVector theta = flatten(client.params);
  for (std::size_t e = 0; e < epochs; ++e) {
    std::vector<std::size_t> order = labeled;
    client.rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += cfg.local_batch) {
      const std::size_t stop = std::min(order.size(), start + cfg.local_batch);
      const std::span<const std::size_t> batch(order.data() + start, stop - start);
      const Matrix x = gather_rows(client.data.features, batch);
      std::vector<std::size_t> y(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) y[i] = client.data.labels[batch[i]];
      const auto trace = forward(client.params, x, client.rng, Mode::Train);
      const auto loss = client_loss(client.params, trace, y, cfg.lambdas);
      theta = sgd_step(std::move(theta), loss.grads, client.optimizer);
      client.params = unflatten(cfg.model, theta);
    }
  }
  return client;
}

inline std::vector<double> aggregation_weights(std::span<const std::size_t> sizes) {
  if (sizes.empty()) throw ArgumentError("aggregate: no clients");
  double total = 0.0;
  for (auto s : sizes) {
    if (s == 0) throw ArgumentError("aggregate: client size must be > 0");
    total += static_cast<double>(s);
  }
  std::vector<double> w(sizes.size());
  for (std::size_t k = 0; k < sizes.size(); ++k) w[k] = static_cast<double>(sizes[k]) / total;
  return w;
}

// Σ_k (N_k / Σ N) · θ_k, accumulated in client order.
inline ParamVector aggregate(std::span<const ParamVector> params, std::span<const std::size_t> sizes) {
  if (params.empty()) throw ArgumentError("aggregate: empty parameter list");
  if (params.size() != sizes.size()) {
    throw ArgumentError("aggregate: " + std::to_string(params.size()) + " vectors but " +
                        std::to_string(sizes.size()) + " sizes");
  }
  const auto w = aggregation_weights(sizes);
  ParamVector out(params.front().size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].size() != out.size()) throw ArgumentError("aggregate: length mismatch");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += w[k] * params[k][i];
  }
  return out;
}

inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

// Fraction of samples whose eval-mode argmax matches the label.
inline double evaluate(const ModelParams& params, const ClientDataset& ds) {
  if (ds.size() == 0) throw ArgumentError("evaluate: empty dataset");
  const auto t = forward_eval(params, ds.features);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) hits += argmax(t.logits.row(i)) == ds.labels[i];
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

// Runs fn(0..n-1) on up to `threads` workers; the first exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min(threads, n);
  std::vector<std::exception_ptr> errors(n);
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += workers) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace fedalv
