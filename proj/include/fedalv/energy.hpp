#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "fedalv/errors.hpp"
#include "fedalv/model.hpp"
#include "fedalv/numcore.hpp"

namespace fedalv {

// Energy of (x, y) is -logit_y, so F(x) = -log Σ_y exp(logit_y).
inline double free_energy(std::span<const double> logits) {
  if (logits.empty()) throw ArgumentError("free_energy: empty logits");
  return -logsumexp(logits);
}

struct EnergyDecomposition {
  double e_term = 0.0;  // E(x, y) = -logit_y
  double f_term = 0.0;  // F(x)
  double loss = 0.0;    // E - F, equal to softmax cross-entropy
};

inline EnergyDecomposition nll_energy_identity(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) {
    throw ArgumentError("nll_energy_identity: label " + std::to_string(label) + " out of range");
  }
  EnergyDecomposition r;
  r.e_term = -logits[label];
  r.f_term = free_energy(logits);
  r.loss = r.e_term - r.f_term;
  return r;
}

struct EmaTracker {
  double value = 0.0;
  double alpha = 0.9;
  bool initialized = false;
};

inline EmaTracker ema_update(EmaTracker t, double observation) {
  if (!std::isfinite(observation)) throw ArgumentError("ema_update: non-finite observation");
  if (!t.initialized) {
    t.value = observation;
    t.initialized = true;
  } else {
    t.value = t.alpha * t.value + (1.0 - t.alpha) * observation;
  }
  return t;
}

struct EnergyReport {
  std::vector<double> energies;
  double mean = 0.0;
};

inline EnergyReport energy_report(std::vector<double> energies) {
  EnergyReport r;
  r.energies = std::move(energies);
  double acc = 0.0;
  for (double e : r.energies) acc += e;
  r.mean = r.energies.empty() ? 0.0 : acc / static_cast<double>(r.energies.size());
  return r;
}

// Per-sample free energies of the eval-mode model on `x`.
inline EnergyReport free_energies(const ModelParams& params, const Matrix& x) {
  const auto t = forward_eval(params, x);
  std::vector<double> f(t.batch());
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = free_energy(t.logits.row(i));
  return energy_report(std::move(f));
}

struct FeaLoss {
  double loss = 0.0;
  std::vector<double> d_energy;  // d loss / d F_t
};

// mean over (t, k) of max(0, F_t - ema_k); EMAs are constants.
inline FeaLoss fea_loss(std::span<const double> target_energies, std::span<const EmaTracker> emas) {
  if (target_energies.empty()) throw ArgumentError("fea_loss: empty target batch");
  std::vector<double> refs;
  for (const auto& e : emas) {
    if (e.initialized) refs.push_back(e.value);
  }
  if (refs.empty()) throw StateError("fea_loss: no initialized source EMA");
  const double scale =
      1.0 / (static_cast<double>(target_energies.size()) * static_cast<double>(refs.size()));
  FeaLoss r;
  r.d_energy.assign(target_energies.size(), 0.0);
  for (std::size_t t = 0; t < target_energies.size(); ++t) {
    for (double ref : refs) {
      const double gap = target_energies[t] - ref;
      if (gap > 0.0) {
        r.loss += gap * scale;
        r.d_energy[t] += scale;
      }
    }
  }
  return r;
}

inline FeaLoss fea_loss(std::span<const double> target_energies, std::span<const double> emas) {
  std::vector<EmaTracker> trackers;
  for (double v : emas) trackers.push_back({v, 0.9, true});
  return fea_loss(target_energies, std::span<const EmaTracker>(trackers));
}

struct FeaGradient {
  FeaLoss loss;
  std::vector<double> energies;
  ParamVector grad;  // d fea / d params
};

// Alignment loss on a target batch and its exact parameter gradient
// (eval-mode forward; dF/dlogits = -softmax).
inline FeaGradient fea_gradient(const ModelParams& params, const Matrix& x_target,
                                std::span<const EmaTracker> emas) {
  const auto t = forward_eval(params, x_target);
  FeaGradient out;
  out.energies.resize(t.batch());
  for (std::size_t i = 0; i < t.batch(); ++i) out.energies[i] = free_energy(t.logits.row(i));
  out.loss = fea_loss(out.energies, emas);

  OutputGrads up;
  up.dlogits = Matrix(t.batch(), params.config.num_classes);
  bool any = false;
  for (std::size_t i = 0; i < t.batch(); ++i) {
    const double w = out.loss.d_energy[i];
    if (w == 0.0) continue;
    any = true;
    const auto p = softmax(t.logits.row(i));
    for (std::size_t c = 0; c < p.size(); ++c) up.dlogits(i, c) = -w * p[c];
  }
  out.grad = any ? flatten(backward(params, t, up)) : ParamVector(params.config.param_count());
  return out;
}

}  // namespace fedalv
