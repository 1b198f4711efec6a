// Copyright 2026 The fedleak Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fedleak/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace fedleak::solvers {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Shortest augmenting path for one unassigned row (Crouse's modification of
// Jonker-Volgenant). Requires rows <= cols. Returns the sink column and the
// path length; updates path/shortest_path_costs/SR/SC in place.
int augmenting_path(const Matrix& cost, int cur_row, const std::vector<double>& u,
                    const std::vector<double>& v, const std::vector<int>& col_to_row,
                    std::vector<int>& path, std::vector<double>& shortest_path_costs,
                    std::vector<bool>& sr, std::vector<bool>& sc,
                    std::vector<int>& remaining, double& min_val_out) {
  const int nc = cost.cols();
  double min_val = 0.0;
  int num_remaining = nc;
  for (int j = 0; j < nc; ++j) remaining[j] = j;
  std::fill(shortest_path_costs.begin(), shortest_path_costs.end(), kInf);
  std::fill(sr.begin(), sr.end(), false);
  std::fill(sc.begin(), sc.end(), false);

  int sink = -1;
  int i = cur_row;
  while (sink == -1) {
    sr[i] = true;
    int index = -1;
    double lowest = kInf;
    for (int it = 0; it < num_remaining; ++it) {
      const int j = remaining[it];
      const double r = min_val + cost(i, j) - u[i] - v[j];
      if (r < shortest_path_costs[j]) {
        path[j] = i;
        shortest_path_costs[j] = r;
      }
      if (shortest_path_costs[j] < lowest ||
          (shortest_path_costs[j] == lowest && col_to_row[j] == -1)) {
        lowest = shortest_path_costs[j];
        index = it;
      }
    }
    min_val = lowest;
    if (min_val == kInf) {
      throw std::runtime_error("linear_sum_assignment: no augmenting path (infeasible)");
    }
    const int j = remaining[index];
    if (col_to_row[j] == -1) {
      sink = j;
    } else {
      i = col_to_row[j];
    }
    sc[j] = true;
    remaining[index] = remaining[--num_remaining];
  }
  min_val_out = min_val;
  return sink;
}

Assignment solve_wide(const Matrix& cost) {
  const int nr = cost.rows();
  const int nc = cost.cols();
  std::vector<double> u(nr, 0.0), v(nc, 0.0);
  std::vector<double> shortest_path_costs(nc);
  std::vector<int> path(nc, -1), remaining(nc);
  std::vector<int> col_to_row(nc, -1), row_to_col(nr, -1);
  std::vector<bool> sr(nr), sc(nc);

  for (int cur_row = 0; cur_row < nr; ++cur_row) {
    double min_val = 0.0;
    int j = augmenting_path(cost, cur_row, u, v, col_to_row, path, shortest_path_costs,
                            sr, sc, remaining, min_val);
    u[cur_row] += min_val;
    for (int i = 0; i < nr; ++i) {
      if (sr[i] && i != cur_row) u[i] += min_val - shortest_path_costs[row_to_col[i]];
    }
    for (int jj = 0; jj < nc; ++jj) {
      if (sc[jj]) v[jj] -= min_val - shortest_path_costs[jj];
    }
    while (true) {
      const int i = path[j];
      col_to_row[j] = i;
      std::swap(row_to_col[i], j);
      if (i == cur_row) break;
    }
  }

  Assignment a;
  a.row_to_col = row_to_col;
  a.col_to_row = col_to_row;
  a.row_duals = u;
  a.col_duals = v;
  for (int i = 0; i < nr; ++i) a.total_cost += cost(i, row_to_col[i]);
  return a;
}

}  // namespace

Assignment linear_sum_assignment(const Matrix& cost) {
  if (cost.rows() < 1 || cost.cols() < 1) {
    throw std::invalid_argument("linear_sum_assignment: empty cost matrix");
  }
  for (std::int64_t i = 0; i < cost.size(); ++i) {
    if (!std::isfinite(cost.data()[i])) {
      throw std::invalid_argument("linear_sum_assignment: non-finite cost entry");
    }
  }
  if (cost.rows() <= cost.cols()) return solve_wide(cost);

  // Tall case: solve the transpose and swap the roles back.
  Matrix t(cost.cols(), cost.rows());
  for (int i = 0; i < cost.rows(); ++i)
    for (int j = 0; j < cost.cols(); ++j) t(j, i) = cost(i, j);
  Assignment wide = solve_wide(t);
  Assignment a;
  a.row_to_col = wide.col_to_row;
  a.col_to_row = wide.row_to_col;
  a.row_duals = wide.col_duals;
  a.col_duals = wide.row_duals;
  a.total_cost = wide.total_cost;
  return a;
}

ClusterLabels constrained_kmeans(const Matrix& points, int n_clusters, int size_cap,
                                 Rng& rng, int max_iter) {
  const int n = points.rows();
  const int dim = points.cols();
  if (n_clusters < 1 || size_cap < 1) {
    throw std::invalid_argument("constrained_kmeans: n_clusters and size_cap must be >= 1");
  }
  if (n < 1) throw std::invalid_argument("constrained_kmeans: no points");
  if (static_cast<std::int64_t>(n) > static_cast<std::int64_t>(n_clusters) * size_cap) {
    throw std::invalid_argument("constrained_kmeans: " + std::to_string(n) +
                                " points exceed capacity " +
                                std::to_string(n_clusters) + " * " + std::to_string(size_cap));
  }

  auto dist2 = [&](int p, const std::vector<double>& c) {
    double s = 0.0;
    for (int e = 0; e < dim; ++e) {
      const double d = points(p, e) - c[e];
      s += d * d;
    }
    return s;
  };

  // k-means++ seeding.
  std::vector<std::vector<double>> centroids;
  {
    const int first = static_cast<int>(rng.uniform_int(n));
    centroids.push_back({points.row(first).begin(), points.row(first).end()});
    std::vector<double> best(n);
    while (static_cast<int>(centroids.size()) < n_clusters) {
      double total = 0.0;
      for (int p = 0; p < n; ++p) {
        double b = dist2(p, centroids[0]);
        for (std::size_t c = 1; c < centroids.size(); ++c) b = std::min(b, dist2(p, centroids[c]));
        best[p] = b;
        total += b;
      }
      int chosen = 0;
      if (total > 0.0) {
        const double target = rng.uniform() * total;
        double acc = 0.0;
        for (int p = 0; p < n; ++p) {
          acc += best[p];
          if (acc >= target) {
            chosen = p;
            break;
          }
        }
      }
      centroids.push_back({points.row(chosen).begin(), points.row(chosen).end()});
    }
  }

  ClusterLabels result;
  result.labels.assign(n, -1);
  std::vector<int> prev_labels;
  for (int iter = 0; iter < max_iter; ++iter) {
    // Assignment: points against replicated cluster slots.
    Matrix cost(n, n_clusters * size_cap);
    for (int p = 0; p < n; ++p) {
      for (int c = 0; c < n_clusters; ++c) {
        const double d = dist2(p, centroids[c]);
        for (int s = 0; s < size_cap; ++s) cost(p, c * size_cap + s) = d;
      }
    }
    const Assignment a = linear_sum_assignment(cost);
    double objective = 0.0;
    for (int p = 0; p < n; ++p) {
      result.labels[p] = a.row_to_col[p] / size_cap;
      objective += dist2(p, centroids[result.labels[p]]);
    }
    result.objective = objective;
    result.objective_trace.push_back(objective);
    result.iterations = iter + 1;
    if (result.labels == prev_labels) break;
    prev_labels = result.labels;

    // Centroid update; empty clusters keep their previous centroid.
    std::vector<int> counts(n_clusters, 0);
    std::vector<std::vector<double>> sums(n_clusters, std::vector<double>(dim, 0.0));
    for (int p = 0; p < n; ++p) {
      const int c = result.labels[p];
      ++counts[c];
      for (int e = 0; e < dim; ++e) sums[c][e] += points(p, e);
    }
    for (int c = 0; c < n_clusters; ++c) {
      if (counts[c] == 0) continue;
      for (int e = 0; e < dim; ++e) centroids[c][e] = sums[c][e] / counts[c];
    }
  }

  result.sizes.assign(n_clusters, 0);
  for (int p = 0; p < n; ++p) ++result.sizes[result.labels[p]];
  return result;
}

namespace {

// Solves g * x = b in place with partial pivoting; g is square and small.
std::vector<double> solve_dense(std::vector<std::vector<double>> g, std::vector<double> b) {
  const int n = static_cast<int>(b.size());
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    for (int r = col + 1; r < n; ++r)
      if (std::fabs(g[r][col]) > std::fabs(g[pivot][col])) pivot = r;
    std::swap(g[col], g[pivot]);
    std::swap(b[col], b[pivot]);
    const double diag = g[col][col];
    if (std::fabs(diag) < 1e-300) throw std::runtime_error("omp_denoise: singular refit system");
    for (int r = col + 1; r < n; ++r) {
      const double f = g[r][col] / diag;
      if (f == 0.0) continue;
      for (int cc = col; cc < n; ++cc) g[r][cc] -= f * g[col][cc];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (int r = n - 1; r >= 0; --r) {
    double acc = b[r];
    for (int cc = r + 1; cc < n; ++cc) acc -= g[r][cc] * x[cc];
    x[r] = acc / g[r][r];
  }
  return x;
}

}  // namespace

std::vector<double> omp_denoise(std::span<const double> signal, int max_sparsity) {
  const int n = static_cast<int>(signal.size());
  if (max_sparsity > n) {
    throw std::invalid_argument("omp_denoise: max_sparsity exceeds signal length");
  }
  std::vector<double> fit(n, 0.0);
  if (n == 0 || max_sparsity <= 0) return fit;

  const double signal_norm = numkernel::l2_norm(signal);
  if (signal_norm == 0.0) return fit;

  std::vector<double> residual(signal.begin(), signal.end());
  std::vector<int> selected;  // step offsets t: atom is 1[i < t], t in [1, n]
  std::vector<bool> used(n + 1, false);

  for (int it = 0; it < max_sparsity; ++it) {
    // Prefix sums of the residual give every atom correlation at once.
    double prefix = 0.0;
    double best_score = 0.0;
    int best_t = -1;
    for (int t = 1; t <= n; ++t) {
      prefix += residual[t - 1];
      if (used[t]) continue;
      const double score = std::fabs(prefix) / std::sqrt(static_cast<double>(t));
      if (score > best_score) {
        best_score = score;
        best_t = t;
      }
    }
    if (best_t < 0 || best_score <= 1e-12 * signal_norm) break;
    selected.push_back(best_t);
    used[best_t] = true;

    // Least-squares refit over the selected steps: Gram(s, t) = min(s, t),
    // rhs_s = prefix sum of the signal up to s.
    const int k = static_cast<int>(selected.size());
    std::vector<std::vector<double>> gram(k, std::vector<double>(k));
    std::vector<double> rhs(k);
    std::vector<double> sig_prefix(n + 1, 0.0);
    for (int i = 0; i < n; ++i) sig_prefix[i + 1] = sig_prefix[i] + signal[i];
    for (int a = 0; a < k; ++a) {
      rhs[a] = sig_prefix[selected[a]];
      for (int b = 0; b < k; ++b) gram[a][b] = std::min(selected[a], selected[b]);
    }
    const std::vector<double> beta = solve_dense(gram, rhs);
    std::fill(fit.begin(), fit.end(), 0.0);
    for (int a = 0; a < k; ++a)
      for (int i = 0; i < selected[a]; ++i) fit[i] += beta[a];
    for (int i = 0; i < n; ++i) residual[i] = signal[i] - fit[i];
  }
  return fit;
}

}  // namespace fedleak::solvers
