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

#include "fedleak/malice.hpp"

#include <cmath>
#include <stdexcept>

namespace fedleak::malice {

using minitransformer::Activation;
using minitransformer::BlockParams;
using minitransformer::ModelConfig;
using minitransformer::Task;
using numkernel::Rng;

BinLayout compute_bias_bins(const MeasurementStats& stats, int bin_count,
                            int blocks, int rows_per_block) {
  if (bin_count < 2) throw std::invalid_argument("compute_bias_bins: need at least 2 bins");
  if (!(stats.std_dev > 0.0)) {
    throw std::invalid_argument("compute_bias_bins: degenerate measurement stats");
  }
  if (blocks * rows_per_block != bin_count) {
    throw std::invalid_argument("compute_bias_bins: bin_count must equal blocks * rows_per_block");
  }
  BinLayout layout;
  layout.blocks = blocks;
  layout.rows_per_block = rows_per_block;
  layout.boundaries.resize(bin_count);
  for (int l = 0; l < bin_count; ++l) {
    const double q = static_cast<double>(l + 1) / (bin_count + 1);
    layout.boundaries[l] = -(stats.mean + stats.std_dev * numkernel::inverse_normal_cdf(q));
  }
  return layout;
}

std::vector<double> measurement_vector(const MaliciousConfig& cfg,
                                       const ModelConfig& model_cfg) {
  Rng rng(cfg.measurement_seed);
  std::vector<double> m = numkernel::gaussian_vector(rng, model_cfg.d_model);
  for (int i = 0; i < cfg.d_prime; ++i) m[i] = 0.0;
  m[model_cfg.d_model - 1] = 0.0;
  if (model_cfg.activation == Activation::kGelu) {
    for (double& v : m) v *= cfg.gelu_boost;
  }
  return m;
}

namespace {

void validate(const ModelParams& params, const MaliciousConfig& cfg) {
  const ModelConfig& mc = params.config;
  mc.validate();
  if (cfg.d_prime < 1 || cfg.d_prime >= mc.d_model - 1) {
    throw std::invalid_argument("craft: d_prime must lie in [1, d_model - 2]");
  }
  if (cfg.bin_count != mc.n_layers * mc.ffn_width) {
    throw std::invalid_argument("craft: bin_count " + std::to_string(cfg.bin_count) +
                                " != n_layers * ffn_width = " +
                                std::to_string(mc.n_layers * mc.ffn_width));
  }
  if (!(cfg.gamma > 0.0) || !(cfg.epsilon > 0.0)) {
    throw std::invalid_argument("craft: gamma and epsilon must be positive");
  }
}

}  // namespace

ModelParams craft_malicious_params(const ModelParams& params, const MaliciousConfig& cfg) {
  validate(params, cfg);
  const ModelConfig& mc = params.config;
  const int d = mc.d_model;
  const int dp = cfg.d_prime;
  const int carrier = d - 1;

  ModelParams out = params;

  // (a) Reserve identity dims and the carrier column in both embeddings.
  // The carrier column of the token embedding keeps epsilon-scaled seeded
  // values instead of zeros: a tied decoder reads this column, and a
  // constant would cancel in the softmax gradient.
  Rng carrier_rng = Rng(cfg.measurement_seed).derive(0xca44'1e4);
  for (int v = 0; v < mc.vocab_size; ++v) {
    for (int i = 0; i < dp; ++i) out.token_embedding(v, i) = 0.0;
    out.token_embedding(v, carrier) = cfg.epsilon * carrier_rng.gaussian();
  }
  for (int k = 0; k < mc.max_positions; ++k) {
    for (int i = 0; i < dp; ++i) out.positional_embedding(k, i) = 0.0;
    out.positional_embedding(k, carrier) = 0.0;
  }

  // (e) Layer norms neutral everywhere on the embedding path.
  for (BlockParams& b : out.blocks) {
    b.ln1_scale.fill(1.0);
    b.ln1_shift.fill(0.0);
    b.ln2_scale.fill(1.0);
    b.ln2_shift.fill(0.0);
  }

  // (b) Block-1 attention: keys pass embeddings through unchanged, every
  // query collapses to gamma * p0, values carry the identity slice, and
  // W_O forwards it, so the first token's slice is added at each position.
  {
    BlockParams& b = out.blocks[0];
    b.w_k = Matrix::identity(d);
    b.b_k.fill(0.0);
    b.w_q.set_zero();
    for (int j = 0; j < d; ++j) b.b_q(0, j) = cfg.gamma * out.positional_embedding(0, j);
    b.w_v.set_zero();
    for (int i = 0; i < dp; ++i) b.w_v(i, i) = 1.0;
    b.b_v.fill(0.0);
    b.w_o = Matrix::identity(d);
    b.b_o.fill(0.0);
  }

  // (c) Remaining attention layers are silenced. For the masked task the
  // last block is re-enabled with uniform attention so loss at masked
  // positions reaches every position's feed-forward rows.
  for (int bi = 1; bi < mc.n_layers; ++bi) {
    BlockParams& b = out.blocks[bi];
    b.w_q.set_zero();
    b.b_q.fill(0.0);
    b.w_k.set_zero();
    b.b_k.fill(0.0);
    b.w_v.set_zero();
    b.b_v.fill(0.0);
    b.w_o.set_zero();
    b.b_o.fill(0.0);
  }
  if (mc.task == Task::kMasked && mc.n_layers > 1) {
    BlockParams& b = out.blocks[mc.n_layers - 1];
    // All-zero queries and keys give identical scores, hence uniform
    // attention; the value path carries the configured weight.
    b.w_v.set_zero();
    for (int i = 0; i < d; ++i) b.w_v(i, i) = cfg.mlm_last_attention_weight;
    b.w_o = Matrix::identity(d);
  }

  // (d) Measurement rows, bin thresholds, and the epsilon carrier route.
  const std::vector<double> m = measurement_vector(cfg, mc);
  const BinLayout layout =
      compute_bias_bins(cfg.stats, cfg.bin_count, mc.n_layers, mc.ffn_width);
  Rng noise_rng = Rng(cfg.measurement_seed).derive(0x1a5'9ec7);
  for (int bi = 0; bi < mc.n_layers; ++bi) {
    BlockParams& b = out.blocks[bi];
    for (int r = 0; r < mc.ffn_width; ++r) {
      for (int j = 0; j < d; ++j) b.ffn_w1(r, j) = m[j];
      if (cfg.inspection_noise_std > 0.0) {
        for (int j = 0; j < d; ++j)
          b.ffn_w1(r, j) += cfg.inspection_noise_std * noise_rng.gaussian();
      }
      b.ffn_b1(0, r) = layout.boundaries[layout.bin_index(bi, r)];
    }
    b.ffn_w2.set_zero();
    for (int r = 0; r < mc.ffn_width; ++r) b.ffn_w2(carrier, r) = cfg.epsilon;
    b.ffn_b2.fill(0.0);
  }

  return out;
}

std::vector<std::vector<std::vector<double>>> sequence_identity_check(
    const ModelParams& crafted, const Batch& batch, int d_prime) {
  const auto trace = minitransformer::forward_trace(crafted, batch);
  const Matrix& attn = trace.attn_outputs[0];
  std::vector<std::vector<std::vector<double>>> out(batch.sequences.size());
  for (std::size_t s = 0; s < batch.sequences.size(); ++s) {
    const int base = trace.seq_offsets[s];
    const int len = trace.seq_lengths[s];
    out[s].resize(len);
    for (int k = 0; k < len; ++k) {
      out[s][k].assign(attn.row(base + k).begin(), attn.row(base + k).begin() + d_prime);
    }
  }
  return out;
}

}  // namespace fedleak::malice
