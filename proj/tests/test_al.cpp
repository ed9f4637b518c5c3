#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "fedalv/al.hpp"
#include "fedalv/assignment.hpp"
#include "fedalv/datagen.hpp"

using namespace fedalv;

namespace {

Matrix random_points(std::size_t n, std::size_t d, Rng& rng) {
  Matrix m(n, d);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

double dist2(const Matrix& a, std::size_t i, const Matrix& b, std::size_t j) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.cols(); ++c) s += (a(i, c) - b(j, c)) * (a(i, c) - b(j, c));
  return s;
}

double min_over_permutations(const Matrix& a, const Matrix& b) {
  std::vector<std::size_t> perm(a.rows());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  double best = INFINITY;
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < perm.size(); ++i) s += std::sqrt(dist2(a, i, b, perm[i]));
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

ModelConfig small_model() {
  ModelConfig m;
  m.hidden_dims = {8};
  m.latent_dim = 3;
  return m;
}

struct Pools {
  std::vector<ClientDataset> sources;
  ClientDataset target;
};

Pools pools(std::size_t per_domain = 40, double labeled = 0.25) {
  DatasetConfig dc;
  dc.samples_per_domain = per_domain;
  std::vector<DomainSpec> specs(4);
  for (std::size_t d = 0; d < 4; ++d) specs[d].rotation = 0.6 * static_cast<double>(d);
  auto fed = make_federation(dc, specs, 0);
  Rng rng(5);
  for (auto& s : fed.sources) init_labeled_pool(s, labeled, rng);
  return {fed.sources, fed.target};
}

void expect_valid_selection(const SelectionResult& r, std::span<const ClientDataset> sources) {
  ASSERT_EQ(r.per_client.size(), sources.size());
  for (std::size_t k = 0; k < sources.size(); ++k) {
    std::set<std::size_t> seen;
    for (auto i : r.per_client[k]) {
      ASSERT_LT(i, sources[k].size());
      EXPECT_FALSE(sources[k].labeled_mask[i]) << "client " << k << " index " << i;
      EXPECT_TRUE(seen.insert(i).second) << "duplicate " << i;
    }
  }
}

}  // namespace

TEST(FixedQuotas, FloorPlusRemainderToLowestIds) {
  EXPECT_EQ(fixed_quotas(10, 3), (std::vector<std::size_t>{4, 3, 3}));
  EXPECT_EQ(fixed_quotas(11, 3), (std::vector<std::size_t>{4, 4, 3}));
  EXPECT_EQ(fixed_quotas(2, 3), (std::vector<std::size_t>{1, 1, 0}));
  EXPECT_EQ(fixed_quotas(0, 3), (std::vector<std::size_t>{0, 0, 0}));
  EXPECT_THROW(fixed_quotas(5, 0), ArgumentError);
  for (std::size_t b = 0; b < 50; ++b) {
    const auto q = fixed_quotas(b, 4);
    EXPECT_EQ(std::accumulate(q.begin(), q.end(), std::size_t{0}), b);
    EXPECT_LE(*std::max_element(q.begin(), q.end()) - *std::min_element(q.begin(), q.end()), 1u);
  }
}

TEST(Selectors, SelectorNamesRoundTrip) {
  for (auto k : {SelectorKind::Random, SelectorKind::Entropy, SelectorKind::Coreset,
                 SelectorKind::EnergySource, SelectorKind::Fedal, SelectorKind::Fedalv}) {
    EXPECT_EQ(parse_selector(selector_name(k)), k);
  }
  EXPECT_THROW(parse_selector("badge"), ConfigError);
}

TEST(Selectors, TopByScoreTiesGoToLowerPosition) {
  const std::vector<double> s{1.0, 3.0, 3.0, 2.0, 3.0};
  EXPECT_EQ(detail::top_by_score(s, 2), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(detail::top_by_score(s, 4), (std::vector<std::size_t>{1, 2, 4, 3}));
}

TEST(Selectors, EntropyExamples) {
  EXPECT_NEAR(predictive_entropy(std::vector<double>{0.0, 0.0, 0.0}), std::log(3.0), 1e-15);
  EXPECT_NEAR(predictive_entropy(std::vector<double>{1000.0, 0.0}), 0.0, 1e-12);
}

TEST(KCenter, MatchesReferenceTraversal) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix pts = random_points(25, 2, rng);
    const std::vector<std::size_t> centers{0, 1};
    std::vector<std::size_t> cand;
    for (std::size_t i = 2; i < 25; ++i) cand.push_back(i);
    const std::size_t budget = 1 + rng.below(10);

    std::vector<std::size_t> chosen(centers);
    std::vector<std::size_t> expected;
    std::vector<bool> used(25, false);
    for (std::size_t b = 0; b < budget; ++b) {
      double best = -1.0;
      std::size_t arg = 0;
      for (auto c : cand) {
        if (used[c]) continue;
        double nearest = INFINITY;
        for (auto s : chosen) nearest = std::min(nearest, dist2(pts, c, pts, s));
        if (nearest > best) {
          best = nearest;
          arg = c;
        }
      }
      used[arg] = true;
      chosen.push_back(arg);
      expected.push_back(arg);
    }
    EXPECT_EQ(k_center_greedy(pts, centers, cand, budget), expected);
  }
}

TEST(KCenter, CoverWithinTwiceOptimal) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix pts = random_points(10, 2, rng);
    const std::vector<std::size_t> centers{0};
    std::vector<std::size_t> cand{1, 2, 3, 4, 5, 6, 7, 8, 9};
    const auto radius = [&](const std::vector<std::size_t>& set) {
      double r = 0.0;
      for (std::size_t i = 0; i < 10; ++i) {
        double nearest = INFINITY;
        for (auto s : set) nearest = std::min(nearest, dist2(pts, i, pts, s));
        r = std::max(r, nearest);
      }
      return std::sqrt(r);
    };
    auto picked = k_center_greedy(pts, centers, cand, 2);
    picked.push_back(0);
    double best = INFINITY;
    for (std::size_t a = 1; a < 10; ++a) {
      for (std::size_t b = a + 1; b < 10; ++b) best = std::min(best, radius({0, a, b}));
    }
    EXPECT_LE(radius(picked), 2.0 * best + 1e-12);
  }
}

TEST(NearestAssignment, MatchesReferenceGreedy) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    SourceLatents pool;
    for (std::size_t k = 0; k < 3; ++k) {
      const std::size_t n = 3 + rng.below(6);
      pool.latents.push_back(random_points(n, 2, rng));
      std::vector<std::size_t> idx(n);
      for (std::size_t i = 0; i < n; ++i) idx[i] = 100 * k + 2 * i;
      pool.indices.push_back(idx);
    }
    const Matrix zt = random_points(6, 2, rng);
    std::vector<std::vector<std::size_t>> expected(3);
    std::set<std::pair<std::size_t, std::size_t>> used;
    for (std::size_t t = 0; t < zt.rows(); ++t) {
      double best = INFINITY;
      std::pair<std::size_t, std::size_t> arg;
      for (std::size_t k = 0; k < 3; ++k) {
        for (std::size_t i = 0; i < pool.latents[k].rows(); ++i) {
          if (used.count({k, i})) continue;
          const double d = dist2(zt, t, pool.latents[k], i);
          if (d < best) {
            best = d;
            arg = {k, i};
          }
        }
      }
      used.insert(arg);
      expected[arg.first].push_back(pool.indices[arg.first][arg.second]);
    }
    EXPECT_EQ(nearest_source_assignment(zt, pool).per_client, expected);
  }
}

TEST(NearestAssignment, TieGoesToLowerClientThenRow) {
  SourceLatents pool;
  pool.latents = {Matrix::from_rows({{1.0, 0.0}, {1.0, 0.0}}), Matrix::from_rows({{1.0, 0.0}})};
  pool.indices = {{7, 8}, {3}};
  const Matrix zt = Matrix::from_rows({{0.0, 0.0}, {0.0, 0.0}, {0.0, 0.0}});
  const auto r = nearest_source_assignment(zt, pool);
  EXPECT_EQ(r.per_client[0], (std::vector<std::size_t>{7, 8}));
  EXPECT_EQ(r.per_client[1], (std::vector<std::size_t>{3}));
  EXPECT_THROW(nearest_source_assignment(zt, pool, std::vector<std::size_t>{1, 1}), ArgumentError);
}

TEST(NearestAssignment, QuotasRespected) {
  SourceLatents pool;
  pool.latents = {Matrix::from_rows({{0.0}, {0.1}, {0.2}}), Matrix::from_rows({{5.0}, {6.0}})};
  pool.indices = {{0, 1, 2}, {0, 1}};
  const Matrix zt = Matrix::from_rows({{0.0}, {0.0}, {0.0}});
  const auto free = nearest_source_assignment(zt, pool);
  EXPECT_EQ(free.counts(), (std::vector<std::size_t>{3, 0}));
  const auto fixed = nearest_source_assignment(zt, pool, std::vector<std::size_t>{2, 1});
  EXPECT_EQ(fixed.counts(), (std::vector<std::size_t>{2, 1}));
  EXPECT_EQ(fixed.per_client[1], (std::vector<std::size_t>{0}));
}

TEST(Selectors, BudgetsAndPoolsRespected) {
  const auto p = pools();
  Rng rng(1);
  const auto theta = init_params(small_model(), rng);
  const std::vector<std::size_t> q{3, 0, 5};
  Rng sel(2);
  for (const auto& r : {select_random(p.sources, q, sel), select_entropy(theta, p.sources, q),
                        select_energy_source(theta, p.sources, q), select_coreset(theta, p.sources, q)}) {
    expect_valid_selection(r, p.sources);
    EXPECT_EQ(r.counts(), q);
  }
  const std::vector<std::size_t> too_many{1000, 0, 0};
  EXPECT_THROW(select_entropy(theta, p.sources, too_many), ArgumentError);
}

TEST(Selectors, FedalvBudgetsSumToBAndVary) {
  const auto p = pools();
  Rng rng(1);
  const auto theta = init_params(small_model(), rng);
  bool varied = false;
  for (std::size_t b : {0u, 1u, 7u, 20u}) {
    const auto r = select_fedalv(theta, p.sources, p.target, b);
    expect_valid_selection(r, p.sources);
    EXPECT_EQ(r.total(), b);
    if (b > 0) varied = varied || r.counts() != fixed_quotas(b, 3);
    const auto f = select_fedal(theta, p.sources, p.target, b);
    expect_valid_selection(f, p.sources);
    EXPECT_EQ(f.counts(), fixed_quotas(b, 3));
  }
  EXPECT_TRUE(varied);
}

TEST(Selectors, FedalvMatchesBruteForce) {
  const auto p = pools(30);
  Rng rng(8);
  const auto theta = init_params(small_model(), rng);
  const std::size_t budget = 6;
  const auto got = select_fedalv(theta, p.sources, p.target, budget);

  // top-B target energies by full sort
  const auto f = free_energies(theta, p.target.features).energies;
  std::vector<std::size_t> order(f.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return f[a] > f[b]; });
  const Matrix zt_all = latents(theta, p.target.features);
  std::vector<Matrix> zs;
  for (const auto& s : p.sources) zs.push_back(latents(theta, s.features));
  std::vector<std::vector<std::size_t>> expected(p.sources.size());
  std::set<std::pair<std::size_t, std::size_t>> used;
  for (std::size_t b = 0; b < budget; ++b) {
    double best = INFINITY;
    std::pair<std::size_t, std::size_t> arg;
    for (std::size_t k = 0; k < p.sources.size(); ++k) {
      for (std::size_t i = 0; i < p.sources[k].size(); ++i) {
        if (p.sources[k].labeled_mask[i] || used.count({k, i})) continue;
        const double d = dist2(zt_all, order[b], zs[k], i);
        if (d < best) {
          best = d;
          arg = {k, i};
        }
      }
    }
    used.insert(arg);
    expected[arg.first].push_back(arg.second);
  }
  EXPECT_EQ(got.per_client, expected);
}

TEST(Selectors, FedalvRejectsOversizedBudget) {
  auto p = pools(10, 0.5);
  Rng rng(1);
  const auto theta = init_params(small_model(), rng);
  EXPECT_THROW(select_fedalv(theta, p.sources, p.target, 1000), ArgumentError);
}

TEST(Assignment, HungarianMatchesPermutations) {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(6);
    Matrix cost(n, n);
    for (double& c : cost.data()) c = rng.uniform(0.0, 10.0);
    const auto a = solve_assignment(cost);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    double best = INFINITY;
    do {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += cost(i, perm[i]);
      best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    EXPECT_NEAR(a.total_cost, best, 1e-9);
    std::set<std::size_t> cols(a.row_to_col.begin(), a.row_to_col.end());
    EXPECT_EQ(cols.size(), n);
  }
}

TEST(Emd, MatchesPermutationEnumeration) {
  Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(6);
    const Matrix a = random_points(n, 3, rng);
    const Matrix b = random_points(n, 3, rng);
    EXPECT_NEAR(emd(a, b), min_over_permutations(a, b) / static_cast<double>(n), 1e-9);
  }
}

TEST(Emd, MetricLaws) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix a = random_points(5, 2, rng);
    const Matrix b = random_points(5, 2, rng);
    const Matrix c = random_points(5, 2, rng);
    EXPECT_NEAR(emd(a, a), 0.0, 1e-12);
    EXPECT_NEAR(emd(a, b), emd(b, a), 1e-12);
    EXPECT_LE(emd(a, c), emd(a, b) + emd(b, c) + 1e-12);
    EXPECT_GE(emd(a, b), 0.0);
  }
  EXPECT_NEAR(emd(Matrix::from_rows({{0.0, 0.0}}), Matrix::from_rows({{3.0, 4.0}})), 5.0, 1e-15);
  EXPECT_THROW(emd(Matrix(2, 2), Matrix(3, 2)), ArgumentError);
}
