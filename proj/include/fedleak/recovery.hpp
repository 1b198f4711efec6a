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

#ifndef FEDLEAK_RECOVERY_HPP_
#define FEDLEAK_RECOVERY_HPP_

#include <string>
#include <vector>

#include "fedleak/malice.hpp"
#include "fedleak/minitransformer.hpp"
#include "fedleak/solvers.hpp"

namespace fedleak::recovery {

using malice::BinLayout;
using malice::MaliciousConfig;
using minitransformer::GradientUpdate;
using minitransformer::ModelParams;
using minitransformer::TokenSequence;
using numkernel::Rng;

// One input embedding recovered from an adjacent-row divided difference.
struct BreachedEmbedding {
  std::vector<double> u;  // d_model entries
  int block = 0;
  int row = 0;  // lower row of the differenced pair
  int bin = 0;  // global bin index
  double lambda = 0.0;  // |delta of the bias gradient|
  bool collision_flag = false;
};

struct RecoveryOptions {
  bool use_omp_denoise = false;  // denoise bias gradients before differencing
  int omp_max_jumps = 0;         // per block; 0 = derived from expected tokens
  double certify_tol = 1e-2;
  double bias_threshold_scale = 1e-8;    // tau = scale * max |grad b1|
  double collision_lambda_factor = 1.5;  // flag bins above factor * median lambda
  double tied_cutoff = 1.5;              // f, log-norm threshold factor
};

struct SequenceRecovery {
  TokenSequence tokens;
  std::vector<bool> certified;
  int cluster_id = 0;
  int filled_positions = 0;  // positions filled by embedding reuse
};

struct RecoveryResult {
  std::vector<SequenceRecovery> sequences;
  int breached_count = 0;
  int collision_count = 0;
  std::vector<std::string> warnings;
};

// Token multiset of exactly seq_len * n_sequences ids from the decoder-bias
// gradient (negative entries are used targets; tokens that appear only in
// the embedding gradient are appended; greedy mean-impact re-subtraction
// estimates frequencies). Causal models with an untied decoder bias only.
std::vector<int> recover_bow_decoder_bias(const GradientUpdate& update, int seq_len,
                                          int n_sequences);

// Token multiset for tied-embedding models: log row-norms of the embedding
// gradient thresholded at mean + cutoff * std, then greedy frequency fill.
std::vector<int> recover_bow_tied_embedding(const GradientUpdate& update, int seq_len,
                                            int n_sequences, double cutoff = 1.5);

// Divided differences of adjacent FFN-1 rows within each block; a pair is
// emitted when the bias-gradient difference clears the occupancy threshold.
// Rows are never differenced across block boundaries.
std::vector<BreachedEmbedding> extract_breached_embeddings(
    const GradientUpdate& update, const ModelParams& crafted, const BinLayout& layout,
    const RecoveryOptions& options = {});

// Constrained k-means over the first d' entries. When more than
// n_sequences * seq_len embeddings were breached, the largest-lambda subset
// is kept and a warning is recorded; `breached` is trimmed accordingly.
solvers::ClusterLabels cluster_sequences(std::vector<BreachedEmbedding>& breached,
                                         int n_sequences, int seq_len, int d_prime,
                                         Rng& rng,
                                         std::vector<std::string>* warnings = nullptr);

// Position slots for one cluster: correlation-cost assignment of members to
// positions, then unmatched positions are filled with the best-correlating
// member (reuse allowed). embedding_of_position entries index into the full
// breached list; -1 when the cluster had no members at all.
struct PositionAssignment {
  std::vector<int> embedding_of_position;
  std::vector<bool> filled;
};
PositionAssignment assign_positions(const std::vector<int>& member_indices,
                                    const std::vector<BreachedEmbedding>& breached,
                                    const ModelParams& crafted, int seq_len,
                                    int d_prime);

// A fully positioned slot awaiting its token.
struct Slot {
  int cluster = 0;
  int position = 0;
  int embedding_index = -1;  // into the breached list; -1 = no embedding
  bool filled = false;
};

// Tokens for every slot: correlation cost against the layer-norm image of
// candidate token + assigned position, solved as one rectangular assignment
// over the candidate multiset; slots beyond the multiset fall back to a
// best-correlation scan of the full vocabulary.
std::vector<int> assign_tokens(const std::vector<Slot>& slots,
                               const std::vector<BreachedEmbedding>& breached,
                               const ModelParams& crafted,
                               const std::vector<int>& candidates, int d_prime);

// A slot is certified when its breached embedding is affinely explained by
// the assigned (token, position) template to relative tolerance tol on the
// payload dimensions, and the bin was not collision-flagged.
std::vector<bool> certify(const std::vector<Slot>& slots,
                          const std::vector<int>& slot_tokens,
                          const std::vector<BreachedEmbedding>& breached,
                          const ModelParams& crafted, int d_prime, double tol = 1e-2);

// The full readout: bag-of-words, divided differences, sequence clustering,
// position and token assignment, certification.
RecoveryResult run_attack(const GradientUpdate& update, const ModelParams& crafted,
                          const MaliciousConfig& cfg, int n_sequences, int seq_len,
                          const RecoveryOptions& options = {});

}  // namespace fedleak::recovery

#endif  // FEDLEAK_RECOVERY_HPP_
