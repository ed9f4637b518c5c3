#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fedalv/errors.hpp"
#include "fedalv/rng.hpp"

namespace fedalv {

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("Matrix: data length " + std::to_string(data_.size()) + " != " +
                       std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }

  static Matrix from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) return {};
    Matrix m(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != m.cols_) throw ShapeError("Matrix::from_rows: ragged rows");
      std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
    }
    return m;
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  std::string shape() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: cannot multiply " + a.shape() + " by " + b.shape());
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out_row = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const auto b_row = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
    }
  }
  return out;
}

// aᵀ · b without materialising the transpose.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: cannot multiply transpose(" + a.shape() + ") by " + b.shape());
  }
  Matrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const auto a_row = a.row(k);
    const auto b_row = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a_row[i];
      if (aki == 0.0) continue;
      auto out_row = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aki * b_row[j];
    }
  }
  return out;
}

// a · bᵀ
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: cannot multiply " + a.shape() + " by transpose(" + b.shape() +
                     ")");
  }
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto a_row = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto b_row = b.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a_row[k] * b_row[k];
      out(i, j) = acc;
    }
  }
  return out;
}

// Flat model parameters; the unit of aggregation and transfer.
struct ParamVector {
  std::vector<double> values;

  ParamVector() = default;
  explicit ParamVector(std::size_t n, double fill = 0.0) : values(n, fill) {}
  explicit ParamVector(std::vector<double> v) : values(std::move(v)) {}

  std::size_t size() const noexcept { return values.size(); }
  double& operator[](std::size_t i) noexcept { return values[i]; }
  double operator[](std::size_t i) const noexcept { return values[i]; }

  friend bool operator==(const ParamVector&, const ParamVector&) = default;
};

inline double logsumexp(std::span<const double> v) {
  if (v.empty()) throw ArgumentError("logsumexp: empty vector");
  if (!std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); })) {
    throw ArgumentError("logsumexp: non-finite input");
  }
  const double m = *std::max_element(v.begin(), v.end());
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - m);
  return m + std::log(acc);
}

inline std::vector<double> softmax(std::span<const double> logits) {
  const double lse = logsumexp(logits);
  std::vector<double> p(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) p[i] = std::exp(logits[i] - lse);
  return p;
}

struct NllResult {
  double loss = 0.0;
  std::vector<double> dlogits;
};

inline NllResult softmax_nll(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) {
    throw ArgumentError("softmax_nll: label " + std::to_string(label) + " out of range for " +
                        std::to_string(logits.size()) + " classes");
  }
  // (max - logit_y) + log1p(sum over non-max entries) keeps confident losses accurate.
  if (!std::all_of(logits.begin(), logits.end(), [](double x) { return std::isfinite(x); })) {
    throw ArgumentError("softmax_nll: non-finite logit");
  }
  const auto top = std::max_element(logits.begin(), logits.end());
  const double m = *top;
  double rest = 0.0;
  for (auto it = logits.begin(); it != logits.end(); ++it) {
    if (it != top) rest += std::exp(*it - m);
  }
  const double log_norm = std::log1p(rest);
  NllResult r;
  r.loss = (m - logits[label]) + log_norm;
  r.dlogits.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) r.dlogits[i] = std::exp(logits[i] - m - log_norm);
  r.dlogits[label] -= 1.0;
  return r;
}

// Log-variances are clamped to this range before exponentiation.
inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

inline double clamp_logvar(double lv) noexcept { return std::clamp(lv, kLogVarMin, kLogVarMax); }
inline bool logvar_in_range(double lv) noexcept { return lv >= kLogVarMin && lv <= kLogVarMax; }

struct KlResult {
  double kl = 0.0;
  std::vector<double> d_mu_p, d_logvar_p, d_mu_r, d_logvar_r;
};

// KL[N(mu_p, exp(logvar_p)) || N(mu_r, exp(logvar_r))] for diagonal Gaussians.
// Gradients through a clamped log-variance are zero.
inline KlResult gaussian_kl_diag(std::span<const double> mu_p, std::span<const double> logvar_p,
                                 std::span<const double> mu_r, std::span<const double> logvar_r) {
  const std::size_t n = mu_p.size();
  if (logvar_p.size() != n || mu_r.size() != n || logvar_r.size() != n) {
    throw ArgumentError("gaussian_kl_diag: length mismatch");
  }
  KlResult r;
  r.d_mu_p.resize(n);
  r.d_logvar_p.resize(n);
  r.d_mu_r.resize(n);
  r.d_logvar_r.resize(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double lp = clamp_logvar(logvar_p[i]);
    const double lr = clamp_logvar(logvar_r[i]);
    const double ratio = std::exp(lp - lr);
    const double inv_var_r = std::exp(-lr);
    const double diff = mu_r[i] - mu_p[i];
    acc += ratio + diff * diff * inv_var_r - 1.0 + lr - lp;
    r.d_mu_p[i] = -diff * inv_var_r;
    r.d_mu_r[i] = diff * inv_var_r;
    r.d_logvar_p[i] = logvar_in_range(logvar_p[i]) ? 0.5 * (ratio - 1.0) : 0.0;
    r.d_logvar_r[i] =
        logvar_in_range(logvar_r[i]) ? 0.5 * (1.0 - ratio - diff * diff * inv_var_r) : 0.0;
  }
  // Rounding can leave a tiny negative residue for identical inputs.
  r.kl = std::max(0.0, 0.5 * acc);
  return r;
}

// z = mu + exp(logvar / 2) * eps, eps ~ N(0, I). dz/dmu = 1, dz/dlogvar = (z - mu) / 2.
inline std::vector<double> reparam_sample(std::span<const double> mu,
                                          std::span<const double> logvar, Rng& rng) {
  if (mu.size() != logvar.size()) throw ArgumentError("reparam_sample: length mismatch");
  std::vector<double> z(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) {
    z[i] = mu[i] + std::exp(0.5 * clamp_logvar(logvar[i])) * rng.normal();
  }
  return z;
}

struct SgdHyper {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-5;
};

struct OptimizerState {
  SgdHyper hyper;
  std::vector<double> velocity;

  OptimizerState() = default;
  OptimizerState(SgdHyper h, std::size_t n) : hyper(h), velocity(n, 0.0) {
    if (!(h.learning_rate > 0.0)) throw ArgumentError("OptimizerState: learning_rate must be > 0");
    if (!(h.momentum >= 0.0 && h.momentum < 1.0)) {
      throw ArgumentError("OptimizerState: momentum must be in [0, 1)");
    }
    if (!(h.weight_decay >= 0.0)) throw ArgumentError("OptimizerState: weight_decay must be >= 0");
  }

  void reset() { std::fill(velocity.begin(), velocity.end(), 0.0); }
};

// Classic SGD with momentum and coupled L2 weight decay.
inline ParamVector sgd_step(ParamVector params, const ParamVector& grads, OptimizerState& state) {
  if (grads.size() != params.size() || state.velocity.size() != params.size()) {
    throw ArgumentError("sgd_step: length mismatch (params " + std::to_string(params.size()) +
                        ", grads " + std::to_string(grads.size()) + ", velocity " +
                        std::to_string(state.velocity.size()) + ")");
  }
  const auto& h = state.hyper;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i] + h.weight_decay * params[i];
    state.velocity[i] = h.momentum * state.velocity[i] + g;
    params[i] -= h.learning_rate * state.velocity[i];
  }
  return params;
}

struct ValueAndGrad {
  double value = 0.0;
  ParamVector grad;
};

using Objective = std::function<ValueAndGrad(const ParamVector&)>;

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-6;
  // Denominator floor so that near-zero gradients are compared absolutely.
  double scale_floor = 1e-6;
  // Differences below roundoff_factor · eps · max(1, |f|) / step are floating-point
  // noise of the central difference and are not counted as error.
  double roundoff_factor = 16.0;
};

struct GradCheckReport {
  std::vector<double> analytic;
  std::vector<double> numeric;
  std::vector<double> rel_errors;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;  // raw |analytic - numeric|, before the roundoff allowance
  std::size_t worst_index = 0;
  bool passed = false;

  std::string summary() const {
    std::ostringstream os;
    os << (passed ? "pass" : "FAIL") << " max_rel_error=" << max_rel_error << " at coordinate "
       << worst_index << " (" << rel_errors.size() << " coordinates, max_abs_error="
       << max_abs_error << ")";
    return os.str();
  }
};

// Central finite differences against the analytic gradient of `f`.
inline GradCheckReport grad_check(const Objective& f, const ParamVector& point,
                                  GradCheckOptions opt = {}) {
  if (!(opt.step > 0.0)) throw ArgumentError("grad_check: step must be > 0");
  const auto finite_or_throw = [](double v, const char* what) {
    if (!std::isfinite(v)) throw EvaluationError(std::string("grad_check: non-finite ") + what);
    return v;
  };
  const ValueAndGrad base = f(point);
  finite_or_throw(base.value, "objective value");
  if (base.grad.size() != point.size()) {
    throw ArgumentError("grad_check: gradient length differs from point length");
  }
  GradCheckReport rep;
  rep.analytic = base.grad.values;
  rep.numeric.resize(point.size());
  rep.rel_errors.resize(point.size());
  const double noise = opt.roundoff_factor * std::numeric_limits<double>::epsilon() *
                      std::max(1.0, std::abs(base.value)) / opt.step;
  ParamVector probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    probe[i] = point[i] + opt.step;
    const double fp = finite_or_throw(f(probe).value, "objective value");
    probe[i] = point[i] - opt.step;
    const double fm = finite_or_throw(f(probe).value, "objective value");
    probe[i] = point[i];
    const double num = (fp - fm) / (2.0 * opt.step);
    const double ana = finite_or_throw(rep.analytic[i], "analytic gradient");
    const double denom = std::max({std::abs(ana), std::abs(num), opt.scale_floor});
    rep.numeric[i] = num;
    rep.max_abs_error = std::max(rep.max_abs_error, std::abs(ana - num));
    rep.rel_errors[i] = std::max(0.0, std::abs(ana - num) - noise) / denom;
    if (rep.rel_errors[i] > rep.max_rel_error) {
      rep.max_rel_error = rep.rel_errors[i];
      rep.worst_index = i;
    }
  }
  rep.passed = rep.max_rel_error < opt.tolerance;
  return rep;
}

}  // namespace fedalv
