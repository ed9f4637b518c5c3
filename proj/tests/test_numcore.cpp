#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "fedalv/numcore.hpp"

using namespace fedalv;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.uniform(-2.0, 2.0);
  return m;
}

// Plain triple loop, indices in textbook order.
Matrix naive_product(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const auto a = Matrix::from_rows({{1, 2}, {3, 4}});
  EXPECT_EQ(matmul(Matrix::identity(2), a), a);
}

TEST(Matmul, RowTimesColumn) {
  const auto c = matmul(Matrix::from_rows({{1, 2}}), Matrix::from_rows({{3}, {4}}));
  ASSERT_EQ(c.rows(), 1u);
  ASSERT_EQ(c.cols(), 1u);
  EXPECT_EQ(c(0, 0), 11.0);
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_matrix(3, 4, rng);
    const auto b = random_matrix(4, 2, rng);
    const auto got = matmul(a, b);
    const auto want = naive_product(a, b);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(got(i, j), want(i, j), 1e-12);
  }
}

TEST(Matmul, TransposedVariantsMatchExplicitTranspose) {
  Rng rng(12);
  const auto a = random_matrix(5, 3, rng);
  const auto b = random_matrix(5, 4, rng);
  const auto c = random_matrix(6, 3, rng);
  const auto tn = matmul_tn(a, b);
  const auto tn_ref = naive_product(transpose(a), b);
  for (std::size_t i = 0; i < tn.size(); ++i) EXPECT_NEAR(tn.data()[i], tn_ref.data()[i], 1e-12);
  const auto nt = matmul_nt(a, c);
  const auto nt_ref = naive_product(a, transpose(c));
  for (std::size_t i = 0; i < nt.size(); ++i) EXPECT_NEAR(nt.data()[i], nt_ref.data()[i], 1e-12);
}

TEST(Matmul, ShapeErrorNamesBothShapes) {
  try {
    matmul(Matrix(2, 3), Matrix(2, 3));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos);
  }
  EXPECT_THROW(matmul_tn(Matrix(2, 3), Matrix(3, 3)), ShapeError);
  EXPECT_THROW(matmul_nt(Matrix(2, 3), Matrix(3, 2)), ShapeError);
}

TEST(Matrix, RaggedRowsAndBadDataLengthRejected) {
  EXPECT_THROW(Matrix::from_rows({{1, 2}, {3}}), ShapeError);
  EXPECT_THROW(Matrix(2, 2, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(LogSumExp, Examples) {
  EXPECT_NEAR(logsumexp(std::vector<double>{0, 0}), std::numbers::ln2, 1e-15);
  EXPECT_NEAR(logsumexp(std::vector<double>{1000, 1000}), 1000 + std::numbers::ln2, 1e-12);
  EXPECT_EQ(logsumexp(std::vector<double>{3}), 3.0);
}

TEST(LogSumExp, RejectsEmptyAndNonFinite) {
  EXPECT_THROW(logsumexp(std::vector<double>{}), ArgumentError);
  EXPECT_THROW(logsumexp(std::vector<double>{1.0, NAN}), ArgumentError);
  EXPECT_THROW(logsumexp(std::vector<double>{INFINITY}), ArgumentError);
}

TEST(LogSumExp, ShiftEquivariance) {
  Rng rng(5);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> v(1 + rng.below(8));
    for (double& x : v) x = rng.uniform(-30, 30);
    const double c = rng.uniform(-100, 100);
    auto w = v;
    for (double& x : w) x += c;
    EXPECT_NEAR(logsumexp(w), logsumexp(v) + c, 1e-12);
  }
}

TEST(SoftmaxNll, UniformLogits) {
  EXPECT_NEAR(softmax_nll(std::vector<double>{0, 0}, 0).loss, std::numbers::ln2, 1e-15);
}

TEST(SoftmaxNll, ConfidentLogits) {
  // log(1 + e^-10) evaluated to 40 digits
  EXPECT_NEAR(softmax_nll(std::vector<double>{10, 0}, 0).loss, 4.539889921686464677e-05, 1e-19);
}

TEST(SoftmaxNll, PositiveForFiniteLogitsAndLabelChecked) {
  Rng rng(9);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> v(2 + rng.below(5));
    for (double& x : v) x = rng.uniform(-10, 10);
    EXPECT_GT(softmax_nll(v, rng.below(v.size())).loss, 0.0);
  }
  EXPECT_THROW(softmax_nll(std::vector<double>{1, 2}, 2), ArgumentError);
}

TEST(SoftmaxNll, GradientMatchesFiniteDifferences) {
  Rng rng(21);
  for (int t = 0; t < 20; ++t) {
    const std::size_t c = 2 + rng.below(5);
    const std::size_t y = rng.below(c);
    std::vector<double> start(c);
    for (double& x : start) x = rng.uniform(-3, 3);
    const Objective f = [y](const ParamVector& p) {
      auto r = softmax_nll(p.values, y);
      return ValueAndGrad{r.loss, ParamVector(r.dlogits)};
    };
    EXPECT_TRUE(grad_check(f, ParamVector(start)).passed);
  }
}

TEST(GaussianKl, Examples) {
  const std::vector<double> zero{0.0};
  const std::vector<double> one{1.0};
  EXPECT_EQ(gaussian_kl_diag(one, zero, one, zero).kl, 0.0);
  EXPECT_NEAR(gaussian_kl_diag(one, zero, zero, zero).kl, 0.5, 1e-15);
  const std::vector<double> ln2{std::numbers::ln2};
  // 0.5 · (2 - 1 + ln(1/2))
  EXPECT_NEAR(gaussian_kl_diag(zero, ln2, zero, zero).kl, 0.15342640972002736, 1e-15);
}

TEST(GaussianKl, NonNegativeAndZeroOnlyWhenIdentical) {
  Rng rng(31);
  for (int t = 0; t < 500; ++t) {
    const std::size_t n = 1 + rng.below(5);
    std::vector<double> mp(n), lp(n), mr(n), lr(n);
    for (std::size_t i = 0; i < n; ++i) {
      mp[i] = rng.normal();
      lp[i] = rng.uniform(-3, 3);
      mr[i] = rng.normal();
      lr[i] = rng.uniform(-3, 3);
    }
    EXPECT_GT(gaussian_kl_diag(mp, lp, mr, lr).kl, 0.0);
    EXPECT_EQ(gaussian_kl_diag(mp, lp, mp, lp).kl, 0.0);
  }
}

TEST(GaussianKl, GradientsMatchFiniteDifferences) {
  Rng rng(32);
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 1 + rng.below(4);
    std::vector<double> start(4 * n);
    for (std::size_t i = 0; i < n; ++i) {
      start[i] = rng.normal();
      start[n + i] = rng.uniform(-2, 2);
      start[2 * n + i] = rng.normal();
      start[3 * n + i] = rng.uniform(-2, 2);
    }
    const Objective f = [n](const ParamVector& p) {
      const std::span<const double> all(p.values);
      const auto r = gaussian_kl_diag(all.subspan(0, n), all.subspan(n, n), all.subspan(2 * n, n),
                                      all.subspan(3 * n, n));
      ParamVector g(4 * n);
      for (std::size_t i = 0; i < n; ++i) {
        g[i] = r.d_mu_p[i];
        g[n + i] = r.d_logvar_p[i];
        g[2 * n + i] = r.d_mu_r[i];
        g[3 * n + i] = r.d_logvar_r[i];
      }
      return ValueAndGrad{r.kl, g};
    };
    const auto rep = grad_check(f, ParamVector(start));
    EXPECT_TRUE(rep.passed) << rep.summary();
  }
}

TEST(GaussianKl, ClampedLogVarHasZeroGradientAndFiniteValue) {
  const std::vector<double> mu{0.0};
  const std::vector<double> huge{500.0};
  const std::vector<double> zero{0.0};
  const auto r = gaussian_kl_diag(mu, huge, mu, zero);
  EXPECT_TRUE(std::isfinite(r.kl));
  EXPECT_EQ(r.d_logvar_p[0], 0.0);
  EXPECT_THROW(gaussian_kl_diag(mu, std::vector<double>{0, 0}, mu, zero), ArgumentError);
}

TEST(Reparam, ZeroVarianceLimitReturnsMean) {
  Rng rng(1);
  const std::vector<double> mu{1.5, -2.0};
  const std::vector<double> lv{kLogVarMin, -1e9};
  const auto z = reparam_sample(mu, lv, rng);
  // exp(-5) ≈ 6.7e-3 standard deviation at the clamp floor
  EXPECT_NEAR(z[0], mu[0], 0.05);
  EXPECT_NEAR(z[1], mu[1], 0.05);
}

TEST(Reparam, FixedSeedRepeats) {
  const std::vector<double> mu{0.3, 0.1, -0.4};
  const std::vector<double> lv{0.0, 1.0, -1.0};
  Rng a(77);
  Rng b(77);
  EXPECT_EQ(reparam_sample(mu, lv, a), reparam_sample(mu, lv, b));
}

TEST(Reparam, EmpiricalMeanWithinThreeSigma) {
  const std::vector<double> mu{0.7};
  const std::vector<double> lv{std::log(4.0)};
  Rng rng(123);
  const int n = 100000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += reparam_sample(mu, lv, rng)[0];
  EXPECT_LT(std::abs(sum / n - 0.7), 3.0 * 2.0 / std::sqrt(double(n)));
}

TEST(Sgd, PlainDescent) {
  OptimizerState st({0.1, 0.0, 0.0}, 1);
  EXPECT_NEAR(sgd_step(ParamVector(std::vector<double>{1.0}), ParamVector(std::vector<double>{1.0}), st)[0], 0.9, 1e-15);
}

TEST(Sgd, MomentumRecurrence) {
  OptimizerState st({0.1, 0.9, 0.0}, 1);
  auto p = sgd_step(ParamVector(std::vector<double>{0.0}), ParamVector(std::vector<double>{1.0}), st);
  EXPECT_NEAR(p[0], -0.1, 1e-15);
  p = sgd_step(p, ParamVector(std::vector<double>{1.0}), st);
  EXPECT_NEAR(p[0], -0.29, 1e-15);
}

TEST(Sgd, ZeroGradientZeroDecayIsIdentity) {
  Rng rng(4);
  ParamVector p(10);
  for (double& v : p.values) v = rng.normal();
  OptimizerState st({0.05, 0.9, 0.0}, 10);
  EXPECT_EQ(sgd_step(p, ParamVector(10), st), p);
}

TEST(Sgd, CoupledWeightDecay) {
  OptimizerState st({0.1, 0.0, 0.5}, 1);
  // g_eff = 0 + 0.5 · 2 = 1
  EXPECT_NEAR(sgd_step(ParamVector(std::vector<double>{2.0}), ParamVector(std::vector<double>{0.0}), st)[0], 1.9, 1e-15);
}

TEST(Sgd, RejectsBadHyperparametersAndLengths) {
  EXPECT_THROW(OptimizerState({0.0, 0.9, 0.0}, 1), ArgumentError);
  EXPECT_THROW(OptimizerState({0.1, 1.0, 0.0}, 1), ArgumentError);
  EXPECT_THROW(OptimizerState({0.1, 0.5, -1.0}, 1), ArgumentError);
  OptimizerState st({0.1, 0.0, 0.0}, 2);
  EXPECT_THROW(sgd_step(ParamVector(2), ParamVector(3), st), ArgumentError);
}

TEST(GradCheck, QuadraticPassesTightTolerance) {
  const Objective f = [](const ParamVector& p) {
    return ValueAndGrad{p[0] * p[0], ParamVector(std::vector<double>{2.0 * p[0]})};
  };
  const auto rep = grad_check(f, ParamVector(std::vector<double>{3.0}));
  EXPECT_TRUE(rep.passed);
  EXPECT_NEAR(rep.numeric[0], 6.0, 1e-8);
}

TEST(GradCheck, CorruptedGradientFails) {
  const Objective f = [](const ParamVector& p) {
    return ValueAndGrad{p[0] * p[0] + std::sin(p[1]), ParamVector(std::vector<double>{2.0 * p[0] + 0.1, std::cos(p[1])})};
  };
  const auto rep = grad_check(f, ParamVector(std::vector<double>{3.0, 0.5}));
  EXPECT_FALSE(rep.passed);
  EXPECT_EQ(rep.worst_index, 0u);
}

TEST(GradCheck, NonFiniteObjectiveRaises) {
  const Objective f = [](const ParamVector& p) {
    return ValueAndGrad{std::log(p[0]), ParamVector(std::vector<double>{1.0 / p[0]})};
  };
  EXPECT_THROW(grad_check(f, ParamVector(std::vector<double>{-1.0})), EvaluationError);
  EXPECT_THROW(grad_check(f, ParamVector(std::vector<double>{1.0}), {0.0, 1e-6, 1e-6, 16.0}), ArgumentError);
}

TEST(Rng, SplitStreamsAreIndependentOfOrder) {
  const Rng root(42);
  Rng a = root.split(3);
  Rng b = root.split(3);
  Rng other = root.split(4);
  (void)other.next_u64();
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  EXPECT_NE(root.split(3).next_u64(), root.split(4).next_u64());
}

TEST(Rng, BelowIsInRangeAndRoughlyUniform) {
  Rng rng(8);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) {
    const auto v = rng.below(7);
    ASSERT_LT(v, 7u);
    ++counts[v];
  }
  for (int c : counts) EXPECT_NEAR(c, 10000, 500);
}

TEST(Rng, PermutationIsAPermutation) {
  Rng rng(2);
  auto p = rng.permutation(50);
  std::sort(p.begin(), p.end());
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(p[i], i);
}
