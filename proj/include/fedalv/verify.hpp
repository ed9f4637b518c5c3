#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fedalv/assignment.hpp"
#include "fedalv/energy.hpp"
#include "fedalv/fed.hpp"
#include "fedalv/model.hpp"

namespace fedalv {

struct CheckResult {
  std::string name;
  bool passed = false;
  double max_rel_error = std::numeric_limits<double>::quiet_NaN();  // gradient checks only
  std::string detail;
  double max_abs_error = std::numeric_limits<double>::quiet_NaN();
};

struct VerifyOptions {
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  double tolerance = 1e-4;
  // Name of a gradient check whose analytic gradient gets corrupted (negative control).
  std::optional<std::string> fault;
};

inline const std::vector<std::string>& gradient_check_names() {
  static const std::vector<std::string> names{"grad.nll",      "grad.l2",         "grad.cmi",
                                              "grad.client_total", "grad.energy_nll", "grad.fea_hinge"};
  return names;
}

namespace detail {

inline std::string fmt(const char* f, double a, double b = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), f, a, b);
  return buf;
}

struct GradFixture {
  ModelParams params;
  Matrix x;
  std::vector<std::size_t> labels;
  std::uint64_t noise_seed;
};

inline GradFixture grad_fixture(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.input_dim = 3;
  cfg.hidden_dims = {6, 5};
  cfg.latent_dim = 3;
  cfg.num_classes = 3;
  Rng rng(seed);
  GradFixture f{init_params(cfg, rng), Matrix(7, 3), {}, rng.next_u64()};
  // Nonzero biases keep pre-activations off the ReLU kink.
  for (auto& layer : f.params.encoder)
    for (double& b : layer.bias) b = rng.uniform(0.05, 0.2);
  for (double& v : f.params.proto_logvar.data()) v = rng.uniform(-0.5, 0.5);
  for (double& v : f.x.data()) v = rng.normal();
  for (std::size_t i = 0; i < f.x.rows(); ++i) f.labels.push_back(rng.below(cfg.num_classes));
  return f;
}

// Train-mode client loss at fixed reparameterisation noise.
inline ValueAndGrad train_loss(const GradFixture& f, const ParamVector& p, LossLambdas l) {
  const auto params = unflatten(f.params.config, p);
  Rng noise(f.noise_seed);
  const auto t = forward(params, f.x, noise, Mode::Train);
  auto loss = client_loss(params, t, f.labels, l);
  return {loss.total, std::move(loss.grads)};
}

inline ValueAndGrad difference(ValueAndGrad a, const ValueAndGrad& b) {
  a.value -= b.value;
  for (std::size_t i = 0; i < a.grad.size(); ++i) a.grad.values[i] -= b.grad.values[i];
  return a;
}

// NLL through the energy decomposition E(x,y) - F(x), eval mode.
inline ValueAndGrad energy_nll(const GradFixture& f, const ParamVector& p) {
  const auto params = unflatten(f.params.config, p);
  const auto t = forward_eval(params, f.x);
  const double inv_n = 1.0 / static_cast<double>(t.batch());
  OutputGrads up;
  up.dlogits = Matrix(t.batch(), params.config.num_classes);
  double value = 0.0;
  for (std::size_t i = 0; i < t.batch(); ++i) {
    value += nll_energy_identity(t.logits.row(i), f.labels[i]).loss * inv_n;
    const auto prob = softmax(t.logits.row(i));
    for (std::size_t c = 0; c < prob.size(); ++c) {
      // dE/dlogit = -onehot, dF/dlogit = -softmax
      up.dlogits(i, c) = (prob[c] - (c == f.labels[i] ? 1.0 : 0.0)) * inv_n;
    }
  }
  return {value, flatten(backward(params, t, up))};
}

// EMA references placed between sorted target energies, so the hinge is active
// for part of the batch and no energy sits on a kink.
inline std::vector<EmaTracker> hinge_references(const GradFixture& f) {
  auto e = free_energies(f.params, f.x).energies;
  std::sort(e.begin(), e.end());
  const std::size_t a = e.size() / 3;
  const std::size_t b = (2 * e.size()) / 3;
  return {{0.5 * (e[a - 1] + e[a]), 0.9, true}, {0.5 * (e[b - 1] + e[b]), 0.9, true}};
}

inline ValueAndGrad hinge(const GradFixture& f, const std::vector<EmaTracker>& refs,
                          const ParamVector& p) {
  auto g = fea_gradient(unflatten(f.params.config, p), f.x, refs);
  return {g.loss.loss, std::move(g.grad)};
}

inline Objective gradient_objective(const std::string& name, const GradFixture& f) {
  const LossLambdas none{0.0, 0.0};
  if (name == "grad.nll") return [f, none](const ParamVector& p) { return train_loss(f, p, none); };
  if (name == "grad.l2") {
    return [f, none](const ParamVector& p) {
      return difference(train_loss(f, p, {1.0, 0.0}), train_loss(f, p, none));
    };
  }
  if (name == "grad.cmi") {
    return [f, none](const ParamVector& p) {
      return difference(train_loss(f, p, {0.0, 1.0}), train_loss(f, p, none));
    };
  }
  if (name == "grad.client_total") {
    return [f](const ParamVector& p) { return train_loss(f, p, {0.3, 0.2}); };
  }
  if (name == "grad.energy_nll") return [f](const ParamVector& p) { return energy_nll(f, p); };
  if (name == "grad.fea_hinge") {
    return [f, refs = hinge_references(f)](const ParamVector& p) { return hinge(f, refs, p); };
  }
  throw ArgumentError("unknown gradient check '" + name + "'");
}

}  // namespace detail

inline CheckResult run_gradient_check(const std::string& name, const VerifyOptions& opt) {
  CheckResult r{name, true, 0.0, "", 0.0};
  const bool faulty = opt.fault && *opt.fault == name;
  for (auto seed : opt.seeds) {
    const auto f = detail::grad_fixture(seed);
    Objective obj = detail::gradient_objective(name, f);
    if (faulty) {
      obj = [inner = std::move(obj)](const ParamVector& p) {
        auto vg = inner(p);
        for (double& g : vg.grad.values) g *= 1.01;
        return vg;
      };
    }
    GradCheckOptions gopt;
    gopt.tolerance = opt.tolerance;
    const auto rep = grad_check(obj, flatten(f.params), gopt);
    r.max_rel_error = std::max(r.max_rel_error, rep.max_rel_error);
    r.max_abs_error = std::max(r.max_abs_error, rep.max_abs_error);
    if (!rep.passed && r.passed) {
      r.passed = false;
      r.detail = "seed " + std::to_string(seed) + ": " + rep.summary();
    }
  }
  if (r.passed) {
    r.detail = std::to_string(opt.seeds.size()) + " seeds, " +
               detail::fmt("max abs difference %.3g", r.max_abs_error);
  }
  return r;
}

inline CheckResult check_energy_identity(std::size_t pairs = 10000) {
  Rng rng(0xE3);
  double worst = 0.0;
  double worst_shift = 0.0;
  for (std::size_t i = 0; i < pairs; ++i) {
    const std::size_t c = 2 + rng.below(9);
    std::vector<double> logits(c);
    for (double& v : logits) v = rng.uniform(-20.0, 20.0);
    const std::size_t y = rng.below(c);
    const double e = nll_energy_identity(logits, y).loss;
    worst = std::max(worst, std::abs(e - softmax_nll(logits, y).loss));
    const double shift = rng.uniform(-5.0, 5.0);
    auto moved = logits;
    for (double& v : moved) v += shift;
    worst_shift = std::max(worst_shift, std::abs(free_energy(moved) - (free_energy(logits) - shift)));
  }
  const bool ok = worst <= 1e-12 && worst_shift <= 1e-12;
  return {"energy.identity", ok, std::numeric_limits<double>::quiet_NaN(),
          detail::fmt("max |E-F - ce| %.3g, max shift-law error %.3g", worst, worst_shift)};
}

inline CheckResult check_aggregation() {
  std::string why;
  const std::vector<ParamVector> two{ParamVector{{1.0, 3.0}}, ParamVector{{5.0, 7.0}}};
  const std::vector<std::size_t> sizes{1, 3};
  const auto got = aggregate(two, sizes);
  if (got.values != std::vector<double>{4.0, 6.0}) why += "two-client example is not [4,6]; ";

  Rng rng(0xA66);
  double worst = 0.0;
  double weight_err = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 1 + rng.below(6);
    const std::size_t n = 1 + rng.below(20);
    std::vector<ParamVector> ps;
    std::vector<std::size_t> ns;
    for (std::size_t i = 0; i < k; ++i) {
      ParamVector p(n);
      for (double& v : p.values) v = rng.normal();
      ps.push_back(std::move(p));
      ns.push_back(1 + rng.below(500));
    }
    const auto agg = aggregate(ps, ns);
    double total = 0.0;
    for (auto s : ns) total += static_cast<double>(s);
    for (std::size_t j = 0; j < n; ++j) {
      double ref = 0.0;
      for (std::size_t i = 0; i < k; ++i) ref += static_cast<double>(ns[i]) * ps[i].values[j];
      worst = std::max(worst, std::abs(agg.values[j] - ref / total));
    }
    double wsum = 0.0;
    for (double w : aggregation_weights(ns)) wsum += w;
    weight_err = std::max(weight_err, std::abs(wsum - 1.0));
  }
  if (worst > 1e-12) why += "weighted mean off by " + detail::fmt("%.3g", worst) + "; ";
  if (weight_err > 1e-12) why += "weights do not sum to 1; ";
  return {"aggregation.exact", why.empty(), std::numeric_limits<double>::quiet_NaN(),
          why.empty() ? detail::fmt("max error %.3g, weight-sum error %.3g", worst, weight_err) : why};
}

inline CheckResult check_hinge_and_ema() {
  Rng rng(0x41);
  std::string why;
  for (int trial = 0; trial < 200 && why.empty(); ++trial) {
    std::vector<double> energies(1 + rng.below(12));
    for (double& e : energies) e = rng.uniform(-5.0, 5.0);
    std::vector<double> refs(1 + rng.below(4));
    for (double& r : refs) r = rng.uniform(-5.0, 5.0);
    const double loss = fea_loss(energies, refs).loss;
    bool all_below = true;
    for (double e : energies) {
      for (double r : refs) all_below = all_below && e <= r;
    }
    if (loss < 0.0) why = "negative hinge loss";
    if (all_below != (loss == 0.0)) why = "hinge zero-set mismatch";

    EmaTracker t{rng.uniform(-5.0, 5.0), rng.uniform(0.0, 1.0), true};
    const double obs = rng.uniform(-5.0, 5.0);
    const double v = ema_update(t, obs).value;
    if (v < std::min(t.value, obs) - 1e-15 || v > std::max(t.value, obs) + 1e-15) {
      why = "EMA left the convex hull of old value and observation";
    }
  }
  return {"energy.hinge_ema_laws", why.empty(), std::numeric_limits<double>::quiet_NaN(),
          why.empty() ? "200 random cases" : why};
}

inline CheckResult check_emd_metric() {
  Rng rng(0xED);
  std::string why;
  const auto cloud = [&rng](std::size_t n, std::size_t d) {
    Matrix m(n, d);
    for (double& v : m.data()) v = rng.normal();
    return m;
  };
  for (int trial = 0; trial < 50 && why.empty(); ++trial) {
    const std::size_t n = 1 + rng.below(6);
    const std::size_t d = 1 + rng.below(4);
    const Matrix a = cloud(n, d);
    const Matrix b = cloud(n, d);
    const Matrix c = cloud(n, d);
    const double ab = emd(a, b);
    if (std::abs(ab - emd(b, a)) > 1e-12) why = "not symmetric";
    if (emd(a, a) > 1e-12) why = "emd(a, a) != 0";
    if (emd(a, c) > ab + emd(b, c) + 1e-12) why = "triangle inequality violated";
    // exhaustive minimum over permutations
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    double best = std::numeric_limits<double>::infinity();
    do {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += euclidean(a.row(i), b.row(perm[i]));
      best = std::min(best, s / static_cast<double>(n));
    } while (std::next_permutation(perm.begin(), perm.end()));
    if (std::abs(best - ab) > 1e-12) why = "differs from exhaustive matching";
  }
  return {"emd.metric", why.empty(), std::numeric_limits<double>::quiet_NaN(),
          why.empty() ? "50 random triples" : why};
}

inline std::vector<CheckResult> run_verify(const VerifyOptions& opt = {}) {
  if (opt.fault) {
    const auto& names = gradient_check_names();
    if (std::find(names.begin(), names.end(), *opt.fault) == names.end()) {
      throw ConfigError("unknown fault target '" + *opt.fault + "'");
    }
  }
  std::vector<CheckResult> out;
  for (const auto& name : gradient_check_names()) out.push_back(run_gradient_check(name, opt));
  out.push_back(check_energy_identity());
  out.push_back(check_aggregation());
  out.push_back(check_hinge_and_ema());
  out.push_back(check_emd_metric());
  return out;
}

}  // namespace fedalv
