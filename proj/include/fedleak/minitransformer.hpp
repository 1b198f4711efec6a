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

#ifndef FEDLEAK_MINITRANSFORMER_HPP_
#define FEDLEAK_MINITRANSFORMER_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "fedleak/numkernel.hpp"

namespace fedleak::minitransformer {

using numkernel::Matrix;
using numkernel::Rng;

// A fixed-length run of token ids; the unit of user data.
using TokenSequence = std::vector<std::int32_t>;

enum class Activation { kRelu, kGelu };
enum class Task { kCausal, kMasked };

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 0;
  int n_layers = 0;
  int n_heads = 0;
  int ffn_width = 0;      // width of the first linear layer in each block
  int max_positions = 0;  // positional table size; sequences must fit
  Activation activation = Activation::kRelu;
  Task task = Task::kCausal;
  bool tied_embedding = false;
  bool decoder_bias = true;
  double dropout_rate = 0.0;
  int mask_token_id = 1;  // [MASK] id used by the masked task

  void validate() const;  // throws std::invalid_argument on bad fields
};

// One decoder block, pre-norm layout: LN -> MHA -> residual, LN -> FFN ->
// residual. Biases and layer-norm parameters are stored as 1xN matrices.
struct BlockParams {
  Matrix w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;  // d x d attention maps
  Matrix ln1_scale, ln1_shift, ln2_scale, ln2_shift;
  Matrix ffn_w1, ffn_b1;  // k x d, 1 x k
  Matrix ffn_w2, ffn_b2;  // d x k, 1 x d
};

struct ModelParams {
  ModelConfig config;
  Matrix token_embedding;       // vocab x d
  Matrix positional_embedding;  // max_positions x d
  std::vector<BlockParams> blocks;
  Matrix decoder_weight;  // vocab x d; empty when embedding is tied
  Matrix decoder_bias;    // 1 x vocab; empty when disabled

  // Decoder matrix respecting weight tying.
  const Matrix& decoder() const {
    return config.tied_embedding ? token_embedding : decoder_weight;
  }

  // Visits every parameter tensor in a stable order (the checkpoint and
  // aggregation order). The callback receives (name, tensor).
  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    const_cast<const ModelParams*>(this)->for_each_tensor(
        [&](const std::string& name, const Matrix& m) { fn(name, const_cast<Matrix&>(m)); });
  }

  template <typename Fn>
  void for_each_tensor(Fn&& fn) const {
    fn("token_embedding", token_embedding);
    fn("positional_embedding", positional_embedding);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const std::string p = "block" + std::to_string(i) + ".";
      const BlockParams& b = blocks[i];
      fn(p + "w_q", b.w_q);
      fn(p + "b_q", b.b_q);
      fn(p + "w_k", b.w_k);
      fn(p + "b_k", b.b_k);
      fn(p + "w_v", b.w_v);
      fn(p + "b_v", b.b_v);
      fn(p + "w_o", b.w_o);
      fn(p + "b_o", b.b_o);
      fn(p + "ln1_scale", b.ln1_scale);
      fn(p + "ln1_shift", b.ln1_shift);
      fn(p + "ln2_scale", b.ln2_scale);
      fn(p + "ln2_shift", b.ln2_shift);
      fn(p + "ffn_w1", b.ffn_w1);
      fn(p + "ffn_b1", b.ffn_b1);
      fn(p + "ffn_w2", b.ffn_w2);
      fn(p + "ffn_b2", b.ffn_b2);
    }
    if (!config.tied_embedding) fn("decoder_weight", decoder_weight);
    if (config.decoder_bias) fn("decoder_bias", decoder_bias);
  }
};

// Per-parameter gradients, shapes mirroring ModelParams exactly, plus the
// number of loss-bearing tokens behind the averaged gradient.
struct GradientUpdate {
  ModelParams tensors;
  std::int64_t token_count = 0;
};

// A batch of sequences; mask_positions is consulted only by the masked
// task and must then list at least one position per batch.
struct Batch {
  std::vector<TokenSequence> sequences;
  std::vector<std::vector<int>> mask_positions;
};

// All tensors drawn N(0, 0.02^2) except layer-norm scales (1) and shifts (0).
ModelParams init_model(const ModelConfig& config, Rng& rng);

// Mean cross-entropy over loss-bearing tokens: next-token targets for the
// causal task, masked positions only for the masked task.
double forward_loss(const ModelParams& params, const Batch& batch);

// Intermediate activations the attack tooling and tests need to inspect.
// Rows are batch-flattened positions: sequence s occupies rows
// [seq_offsets[s], seq_offsets[s] + seq_len[s]).
struct ForwardTrace {
  double loss = 0.0;
  std::vector<int> seq_offsets;
  std::vector<int> seq_lengths;
  std::vector<Matrix> ffn_inputs;    // per block: rows x d, input of FFN W1
  std::vector<Matrix> ffn_preact;    // per block: rows x k, W1 u + b1
  std::vector<Matrix> attn_outputs;  // per block: rows x d, post-W_O output
  // Softmax rows, present only when requested: one S x S matrix per
  // (sequence, block, head), sequence-major.
  std::vector<Matrix> attn_probs;
};

ForwardTrace forward_trace(const ModelParams& params, const Batch& batch,
                           bool trace_attention = false);

// Layer-norm image of token_embedding[token] + positional_embedding[position]
// under block 1's pre-FFN norm: what the first feed-forward layer would see
// for this (token, position) pair absent attention contributions.
std::vector<double> normalized_embedding(const ModelParams& params, int token,
                                         int position);

// Exact analytic gradient of forward_loss. When dropout_rng is supplied and
// config.dropout_rate > 0, attention probabilities and feed-forward outputs
// are dropped (inverted scaling) and the returned gradient is the gradient
// of that realized loss.
GradientUpdate gradient(const ModelParams& params, const Batch& batch,
                        Rng* dropout_rng = nullptr);

// Flat binary tensor archive (row-major float64, little-endian) plus a
// plain-text shape manifest; see the repository documentation.
void save_checkpoint(const ModelParams& params, const std::string& path_prefix);
ModelParams load_checkpoint(const std::string& path_prefix);

}  // namespace fedleak::minitransformer

#endif  // FEDLEAK_MINITRANSFORMER_HPP_
