#include "vemd/hungarian.hpp"

#include <limits>

#include "vemd/common.hpp"

namespace vemd {

namespace {

// Kuhn-Munkres with potentials for n <= m; a[1..n][1..m].
std::vector<int> solve(const std::vector<std::vector<double>>& a, int n, int m) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0), minv(m + 1);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  std::vector<char> used(m + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> rows(n, -1);
  for (int j = 1; j <= m; ++j)
    if (p[j] != 0) rows[p[j] - 1] = j - 1;
  return rows;
}

}  // namespace

std::vector<int> hungarian(const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  if (n == 0) return {};
  const int m = static_cast<int>(cost[0].size());
  for (const auto& row : cost) {
    if (static_cast<int>(row.size()) != m) throw ShapeError("hungarian: ragged cost matrix");
  }
  if (m == 0) return std::vector<int>(n, -1);
  if (n <= m) return solve(cost, n, m);
  std::vector<std::vector<double>> t(m, std::vector<double>(n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) t[j][i] = cost[i][j];
  const auto cols = solve(t, m, n);
  std::vector<int> rows(n, -1);
  for (int j = 0; j < m; ++j) rows[cols[j]] = j;
  return rows;
}

double assignment_cost(const std::vector<std::vector<double>>& cost, const std::vector<int>& rows_to_cols) {
  double s = 0.0;
  for (size_t i = 0; i < rows_to_cols.size(); ++i)
    if (rows_to_cols[i] >= 0) s += cost[i][rows_to_cols[i]];
  return s;
}

}  // namespace vemd
