#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "fedalv/errors.hpp"
#include "fedalv/numcore.hpp"
#include "fedalv/rng.hpp"

namespace fedalv {

struct ModelConfig {
  std::size_t input_dim = 2;
  std::vector<std::size_t> hidden_dims{32, 32};
  std::size_t latent_dim = 8;
  std::size_t num_classes = 2;

  void validate() const {
    if (input_dim < 1 || latent_dim < 1) throw ConfigError("ModelConfig: dims must be >= 1");
    for (auto h : hidden_dims) {
      if (h < 1) throw ConfigError("ModelConfig: hidden dims must be >= 1");
    }
    if (num_classes < 2) throw ConfigError("ModelConfig: num_classes must be >= 2");
  }

  // Σ over dense layers of (fan_in + 1) * fan_out, plus two prototype tables.
  std::size_t param_count() const {
    std::size_t n = 0;
    std::size_t in = input_dim;
    for (auto h : hidden_dims) {
      n += (in + 1) * h;
      in = h;
    }
    n += (in + 1) * 2 * latent_dim;
    n += (latent_dim + 1) * num_classes;
    n += 2 * num_classes * latent_dim;
    return n;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct DenseLayer {
  Matrix weight;  // fan_in x fan_out
  std::vector<double> bias;

  DenseLayer() = default;
  DenseLayer(std::size_t in, std::size_t out) : weight(in, out), bias(out, 0.0) {}

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

// Encoder MLP, latent head emitting (mu, logvar), linear classifier on z, and
// per-class reference Gaussians r(z|y) stored as lookup tables.
struct ModelParams {
  ModelConfig config;
  std::vector<DenseLayer> encoder;
  DenseLayer head;        // -> [mu | logvar], width 2 * latent_dim
  DenseLayer classifier;  // latent_dim -> num_classes
  Matrix proto_mu;        // num_classes x latent_dim
  Matrix proto_logvar;    // num_classes x latent_dim

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

inline ModelParams zero_params(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams p;
  p.config = cfg;
  std::size_t in = cfg.input_dim;
  for (auto h : cfg.hidden_dims) {
    p.encoder.emplace_back(in, h);
    in = h;
  }
  p.head = DenseLayer(in, 2 * cfg.latent_dim);
  p.classifier = DenseLayer(cfg.latent_dim, cfg.num_classes);
  p.proto_mu = Matrix(cfg.num_classes, cfg.latent_dim);
  p.proto_logvar = Matrix(cfg.num_classes, cfg.latent_dim);
  return p;
}

// He-uniform weights, zero biases, prototype means ~ N(0, 1), prototype logvar 0.
// The logvar half of the head starts at zero so the posterior begins at unit
// variance like the prior; He-scaled logvar rows give exp(logvar) up to e^10
// on inputs of radius 3, and sampled z then drives SGD to diverge.
inline ModelParams init_params(const ModelConfig& cfg, Rng& rng) {
  ModelParams p = zero_params(cfg);
  const auto he = [&rng](DenseLayer& layer) {
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.weight.rows()));
    for (double& w : layer.weight.data()) w = rng.uniform(-limit, limit);
  };
  for (auto& layer : p.encoder) he(layer);
  he(p.head);
  for (std::size_t i = 0; i < p.head.weight.rows(); ++i) {
    for (std::size_t j = cfg.latent_dim; j < 2 * cfg.latent_dim; ++j) p.head.weight(i, j) = 0.0;
  }
  he(p.classifier);
  for (double& m : p.proto_mu.data()) m = rng.normal();
  return p;
}

namespace detail {

template <typename Params, typename Fn>
void for_each_block(Params& p, Fn&& fn) {
  for (auto& layer : p.encoder) {
    fn(layer.weight.data());
    fn(std::span(layer.bias));
  }
  fn(p.head.weight.data());
  fn(std::span(p.head.bias));
  fn(p.classifier.weight.data());
  fn(std::span(p.classifier.bias));
  fn(p.proto_mu.data());
  fn(p.proto_logvar.data());
}

}  // namespace detail

inline ParamVector flatten(const ModelParams& p) {
  ParamVector v;
  v.values.reserve(p.config.param_count());
  detail::for_each_block(p, [&v](std::span<const double> block) {
    v.values.insert(v.values.end(), block.begin(), block.end());
  });
  return v;
}

inline ModelParams unflatten(const ModelConfig& cfg, const ParamVector& v) {
  if (v.size() != cfg.param_count()) {
    throw ArgumentError("unflatten: vector length " + std::to_string(v.size()) +
                        " does not match parameter count " + std::to_string(cfg.param_count()));
  }
  ModelParams p = zero_params(cfg);
  std::size_t offset = 0;
  detail::for_each_block(p, [&](std::span<double> block) {
    std::copy_n(v.values.begin() + static_cast<std::ptrdiff_t>(offset), block.size(),
                block.begin());
    offset += block.size();
  });
  return p;
}

enum class Mode { Train, Eval };

struct ForwardTrace {
  Mode mode = Mode::Eval;
  Matrix input;
  std::vector<Matrix> pre;   // encoder pre-activations
  std::vector<Matrix> post;  // encoder ReLU outputs
  Matrix mu;
  Matrix logvar_raw;  // unclamped head output
  Matrix logvar;      // clamped
  Matrix z;           // sampled (train) or mu (eval)
  Matrix logits;

  std::size_t batch() const noexcept { return input.rows(); }
};

namespace detail {

inline Matrix dense_forward(const DenseLayer& layer, const Matrix& x) {
  Matrix y = matmul(x, layer.weight);
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto r = y.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += layer.bias[j];
  }
  return y;
}

// Accumulates weight/bias gradients into `grad` and returns d input.
inline Matrix dense_backward(const DenseLayer& layer, const Matrix& x, const Matrix& dy,
                             DenseLayer& grad) {
  const Matrix dw = matmul_tn(x, dy);
  auto gw = grad.weight.data();
  const auto dwd = dw.data();
  for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += dwd[i];
  for (std::size_t i = 0; i < dy.rows(); ++i) {
    const auto r = dy.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) grad.bias[j] += r[j];
  }
  return matmul_nt(dy, layer.weight);
}

}  // namespace detail

// Encoder -> (mu, logvar) -> z -> logits. `rng` is only consumed in train mode.
inline ForwardTrace forward(const ModelParams& params, const Matrix& x, Rng& rng, Mode mode) {
  const auto& cfg = params.config;
  if (x.cols() != cfg.input_dim) {
    throw ShapeError("forward: batch has " + std::to_string(x.cols()) +
                     " features, model expects " + std::to_string(cfg.input_dim));
  }
  ForwardTrace t;
  t.mode = mode;
  t.input = x;
  const Matrix* h = &t.input;
  for (const auto& layer : params.encoder) {
    t.pre.push_back(detail::dense_forward(layer, *h));
    Matrix act = t.pre.back();
    for (double& v : act.data()) v = v > 0.0 ? v : 0.0;
    t.post.push_back(std::move(act));
    h = &t.post.back();
  }
  const Matrix head = detail::dense_forward(params.head, *h);
  const std::size_t n = x.rows();
  const std::size_t d = cfg.latent_dim;
  t.mu = Matrix(n, d);
  t.logvar_raw = Matrix(n, d);
  t.logvar = Matrix(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      t.mu(i, j) = head(i, j);
      t.logvar_raw(i, j) = head(i, d + j);
      t.logvar(i, j) = clamp_logvar(head(i, d + j));
    }
  }
  if (mode == Mode::Train) {
    t.z = Matrix(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      const auto z = reparam_sample(t.mu.row(i), t.logvar.row(i), rng);
      std::copy(z.begin(), z.end(), t.z.row(i).begin());
    }
  } else {
    t.z = t.mu;
  }
  t.logits = detail::dense_forward(params.classifier, t.z);
  return t;
}

inline ForwardTrace forward_eval(const ModelParams& params, const Matrix& x) {
  Rng unused;
  return forward(params, x, unused, Mode::Eval);
}

// Upstream gradients entering the network at its outputs. Empty matrices mean zero.
struct OutputGrads {
  Matrix dlogits;
  Matrix dz;
  Matrix dmu;
  Matrix dlogvar;  // w.r.t. the clamped logvar
};

// Backpropagates `up` through the trace; prototype gradients are left at zero.
inline ModelParams backward(const ModelParams& params, const ForwardTrace& t,
                            const OutputGrads& up) {
  const auto& cfg = params.config;
  const std::size_t n = t.batch();
  const std::size_t d = cfg.latent_dim;
  ModelParams g = zero_params(cfg);

  Matrix dz = up.dz.empty() ? Matrix(n, d) : up.dz;
  if (!up.dlogits.empty()) {
    const Matrix dz_cls = detail::dense_backward(params.classifier, t.z, up.dlogits, g.classifier);
    for (std::size_t i = 0; i < dz.size(); ++i) dz.data()[i] += dz_cls.data()[i];
  }

  Matrix dhead(n, 2 * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double dmu = dz(i, j);
      double dlv = 0.0;
      if (t.mode == Mode::Train) dlv = dz(i, j) * 0.5 * (t.z(i, j) - t.mu(i, j));
      if (!up.dmu.empty()) dmu += up.dmu(i, j);
      if (!up.dlogvar.empty()) dlv += up.dlogvar(i, j);
      if (!logvar_in_range(t.logvar_raw(i, j))) dlv = 0.0;
      dhead(i, j) = dmu;
      dhead(i, d + j) = dlv;
    }
  }

  const Matrix& head_in = t.post.empty() ? t.input : t.post.back();
  Matrix dh = detail::dense_backward(params.head, head_in, dhead, g.head);
  for (std::size_t l = params.encoder.size(); l-- > 0;) {
    const Matrix& pre = t.pre[l];
    for (std::size_t i = 0; i < dh.size(); ++i) {
      if (pre.data()[i] <= 0.0) dh.data()[i] = 0.0;
    }
    const Matrix& in = l == 0 ? t.input : t.post[l - 1];
    dh = detail::dense_backward(params.encoder[l], in, dh, g.encoder[l]);
  }
  return g;
}

struct LossLambdas {
  double l2 = 0.01;
  double cmi = 0.001;
};

struct LossComponents {
  double nll = 0.0;
  double l2 = 0.0;
  double cmi = 0.0;
};

struct ClientLoss {
  double total = 0.0;
  LossComponents components;
  ParamVector grads;
};

// nll + λ_L2 · mean‖z‖² + λ_CMI · mean KL[p(z|x) || r(z|y)], with exact gradients.
inline ClientLoss client_loss(const ModelParams& params, const ForwardTrace& t,
                              std::span<const std::size_t> labels, const LossLambdas& lambdas) {
  const auto& cfg = params.config;
  const std::size_t n = t.batch();
  if (labels.size() != n) {
    throw ShapeError("client_loss: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(n));
  }
  if (n == 0) throw ArgumentError("client_loss: empty batch");
  if (lambdas.l2 < 0.0 || lambdas.cmi < 0.0) throw ArgumentError("client_loss: negative lambda");
  const double inv_n = 1.0 / static_cast<double>(n);
  const std::size_t d = cfg.latent_dim;

  ClientLoss out;
  OutputGrads up;
  up.dlogits = Matrix(n, cfg.num_classes);
  up.dz = Matrix(n, d);
  up.dmu = Matrix(n, d);
  up.dlogvar = Matrix(n, d);
  Matrix d_proto_mu(cfg.num_classes, d);
  Matrix d_proto_lv(cfg.num_classes, d);

  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = labels[i];
    if (y >= cfg.num_classes) {
      throw ArgumentError("client_loss: label " + std::to_string(y) + " out of range");
    }
    const auto nll = softmax_nll(t.logits.row(i), y);
    out.components.nll += nll.loss * inv_n;
    for (std::size_t c = 0; c < cfg.num_classes; ++c) up.dlogits(i, c) = nll.dlogits[c] * inv_n;

    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      sq += t.z(i, j) * t.z(i, j);
      up.dz(i, j) = lambdas.l2 * 2.0 * t.z(i, j) * inv_n;
    }
    out.components.l2 += sq * inv_n;

    const auto kl = gaussian_kl_diag(t.mu.row(i), t.logvar.row(i), params.proto_mu.row(y),
                                     params.proto_logvar.row(y));
    out.components.cmi += kl.kl * inv_n;
    const double s = lambdas.cmi * inv_n;
    for (std::size_t j = 0; j < d; ++j) {
      up.dmu(i, j) = s * kl.d_mu_p[j];
      up.dlogvar(i, j) = s * kl.d_logvar_p[j];
      d_proto_mu(y, j) += s * kl.d_mu_r[j];
      d_proto_lv(y, j) += s * kl.d_logvar_r[j];
    }
  }
  out.total = out.components.nll + lambdas.l2 * out.components.l2 +
              lambdas.cmi * out.components.cmi;

  ModelParams g = backward(params, t, up);
  g.proto_mu = std::move(d_proto_mu);
  g.proto_logvar = std::move(d_proto_lv);
  out.grads = flatten(g);
  return out;
}

// Row subset of `x` in the given order.
inline Matrix gather_rows(const Matrix& x, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= x.rows()) throw ArgumentError("gather_rows: index out of range");
    std::copy(x.row(idx[i]).begin(), x.row(idx[i]).end(), out.row(i).begin());
  }
  return out;
}

}  // namespace fedalv
