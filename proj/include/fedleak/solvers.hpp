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

#ifndef FEDLEAK_SOLVERS_HPP_
#define FEDLEAK_SOLVERS_HPP_

#include <span>
#include <vector>

#include "fedleak/numkernel.hpp"

namespace fedleak::solvers {

using numkernel::Matrix;
using numkernel::Rng;

struct Assignment {
  // row_to_col[i] = assigned column of row i, or -1 when rows exceed
  // columns and row i stayed unmatched (and vice versa for col_to_row).
  std::vector<int> row_to_col;
  std::vector<int> col_to_row;
  double total_cost = 0.0;
  // Dual potentials from the shortest-augmenting-path run; feasible
  // (u_i + v_j <= c_ij) and tight on assigned pairs.
  std::vector<double> row_duals;
  std::vector<double> col_duals;
};

// Minimum-cost injective assignment of min(rows, cols) pairs via shortest
// augmenting paths (Jonker-Volgenant, rectangular variant). Costs must be
// finite.
Assignment linear_sum_assignment(const Matrix& cost);

struct ClusterLabels {
  std::vector<int> labels;  // per-point cluster index in [0, n_clusters)
  std::vector<int> sizes;
  double objective = 0.0;  // sum of squared distances to assigned centroids
  int iterations = 0;
  std::vector<double> objective_trace;  // objective after each assignment step
};

// K-means whose assignment step enforces `size_cap` per cluster by solving
// a point x (cluster slot) assignment problem; k-means++ seeding from rng.
// The objective is non-increasing across iterations. Requires
// points.rows() <= n_clusters * size_cap.
ClusterLabels constrained_kmeans(const Matrix& points, int n_clusters, int size_cap,
                                 Rng& rng, int max_iter = 50);

// Best <= max_sparsity jump reconstruction of a piecewise-constant signal
// under the step dictionary {1[i < t]}, fitted greedily with a least-squares
// refit after every atom selection.
std::vector<double> omp_denoise(std::span<const double> signal, int max_sparsity);

}  // namespace fedleak::solvers

#endif  // FEDLEAK_SOLVERS_HPP_
