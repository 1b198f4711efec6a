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

#ifndef FEDLEAK_MALICE_HPP_
#define FEDLEAK_MALICE_HPP_

#include <cstdint>
#include <vector>

#include "fedleak/corpus.hpp"
#include "fedleak/minitransformer.hpp"
#include "fedleak/numkernel.hpp"

namespace fedleak::malice {

using corpus::MeasurementStats;
using minitransformer::Batch;
using minitransformer::ModelParams;
using numkernel::Matrix;

// Every attacker-chosen constant of the crafted parameter vector.
struct MaliciousConfig {
  std::uint64_t measurement_seed = 1;
  int d_prime = 6;            // reserved sequence-identity dimensions
  double gamma = 1e8;         // attention softmax skew
  double epsilon = 1e-6;      // gradient-carrier scale
  MeasurementStats stats;     // measurement distribution used for binning
  int bin_count = 0;          // M; must equal n_layers * ffn_width
  double gelu_boost = 4.0;    // measurement magnification for GELU models
  double mlm_last_attention_weight = 10.0;
  double inspection_noise_std = 0.0;  // anti-rank-inspection noise on W1 rows

  // d_prime default mirrors the per-model choices: 6 below d_model 128,
  // 32 at and above it.
  static int default_d_prime(int d_model) { return d_model <= 128 ? 6 : 32; }
};

// Bias thresholds c_l, strictly decreasing, one per (block, row) of the
// first feed-forward layers; M thresholds carve M+1 equal-mass regions out
// of the measurement distribution.
struct BinLayout {
  std::vector<double> boundaries;  // c_0 > c_1 > ... > c_{M-1}
  int blocks = 0;
  int rows_per_block = 0;

  int bin_index(int block, int row) const { return block * rows_per_block + row; }
  int total_bins() const { return static_cast<int>(boundaries.size()); }
};

// c_l = -(mu + sigma * Phi^-1((l+1)/(M+1))) for l = 0..M-1. The quantile
// grid starts at (1)/(M+1) so every boundary is finite while bin masses
// stay equal.
BinLayout compute_bias_bins(const MeasurementStats& stats, int bin_count,
                            int blocks, int rows_per_block);

// The shared measurement vector m: N(0,1) entries from measurement_seed,
// zeroed on the identity dimensions and the gradient-carrier dimension,
// magnified by gelu_boost for GELU models.
std::vector<double> measurement_vector(const MaliciousConfig& cfg,
                                       const minitransformer::ModelConfig& model_cfg);

// Rewrites params into the malicious parameter vector:
//   - embeddings: identity dims zeroed, carrier column replaced by
//     epsilon-scaled seeded values so gradients reach every block;
//   - block 1 attention copies the first token's identity slice to every
//     position; later blocks' attention outputs are zeroed (the masked task
//     re-enables the last block with uniform attention);
//   - every FFN W1 row becomes m, biases take the bin thresholds, W2 routes
//     each activation into the last hidden dimension scaled by epsilon;
//   - layer norms are reset to scale 1 / shift 0.
// Crafting the result again with the same config is a no-op.
ModelParams craft_malicious_params(const ModelParams& params, const MaliciousConfig& cfg);

// First-d' slice of the block-1 attention output for every position of
// every sequence; within one sequence all slices equal the first token's.
std::vector<std::vector<std::vector<double>>> sequence_identity_check(
    const ModelParams& crafted, const Batch& batch, int d_prime);

}  // namespace fedleak::malice

#endif  // FEDLEAK_MALICE_HPP_
