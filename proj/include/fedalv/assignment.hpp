#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "fedalv/errors.hpp"
#include "fedalv/numcore.hpp"

namespace fedalv {

struct Assignment {
  std::vector<std::size_t> row_to_col;
  double total_cost = 0.0;
};

// Minimum-cost perfect matching on a square cost matrix (Hungarian method with
// potentials, O(n^3)).
inline Assignment solve_assignment(const Matrix& cost) {
  if (cost.rows() != cost.cols()) {
    throw ShapeError("solve_assignment: cost matrix must be square, got " + cost.shape());
  }
  const std::size_t n = cost.rows();
  constexpr double inf = std::numeric_limits<double>::infinity();
  // 1-based arrays; column 0 is the virtual start.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = match[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  Assignment a;
  a.row_to_col.assign(n, 0);
  for (std::size_t j = 1; j <= n; ++j) {
    if (match[j] != 0) a.row_to_col[match[j] - 1] = j - 1;
  }
  for (std::size_t i = 0; i < n; ++i) a.total_cost += cost(i, a.row_to_col[i]);
  return a;
}

inline double euclidean(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

// Earth mover's distance between two equal-size, uniformly weighted point sets:
// the mean Euclidean distance under the optimal one-to-one matching.
inline double emd(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ArgumentError("emd: point sets must have equal size (" + std::to_string(a.rows()) +
                        " vs " + std::to_string(b.rows()) + ")");
  }
  if (a.rows() == 0) throw ArgumentError("emd: empty point sets");
  if (a.cols() != b.cols()) throw ShapeError("emd: dimension mismatch " + a.shape() + " vs " + b.shape());
  const std::size_t n = a.rows();
  Matrix cost(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) cost(i, j) = euclidean(a.row(i), b.row(j));
  }
  return solve_assignment(cost).total_cost / static_cast<double>(n);
}

}  // namespace fedalv
