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

#include "fedleak/minitransformer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fedleak::minitransformer {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kMaskedScore = -1e30;
constexpr double kInitStd = 0.02;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) +
         x * std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
}

double relu(double x) { return x > 0.0 ? x : 0.0; }

// y = x * W^T + b for row-major x (n x in), W (out x in), b (1 x out).
Matrix linear(const Matrix& x, const Matrix& w, const Matrix& b) {
  Matrix y = numkernel::gemm(x, w, false, true);
  for (int i = 0; i < y.rows(); ++i)
    for (int j = 0; j < y.cols(); ++j) y(i, j) += b(0, j);
  return y;
}

struct LnCache {
  Matrix out;                 // normalized, scaled, shifted
  std::vector<double> mean;   // per row
  std::vector<double> sigma;  // per row, sqrt(var + eps)
};

LnCache layer_norm(const Matrix& x, const Matrix& scale, const Matrix& shift) {
  const int n = x.rows(), d = x.cols();
  LnCache c;
  c.out = Matrix(n, d);
  c.mean.resize(n);
  c.sigma.resize(n);
  for (int i = 0; i < n; ++i) {
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += x(i, j);
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double dx = x(i, j) - mu;
      var += dx * dx;
    }
    var /= d;
    const double sigma = std::sqrt(var + kLnEps);
    c.mean[i] = mu;
    c.sigma[i] = sigma;
    for (int j = 0; j < d; ++j)
      c.out(i, j) = (x(i, j) - mu) / sigma * scale(0, j) + shift(0, j);
  }
  return c;
}

// Accumulates dx, d_scale, d_shift for y = LN(x); dy is consumed.
void layer_norm_backward(const Matrix& x, const LnCache& c, const Matrix& scale,
                         const Matrix& dy, Matrix& dx, Matrix& d_scale,
                         Matrix& d_shift) {
  const int n = x.rows(), d = x.cols();
  for (int i = 0; i < n; ++i) {
    const double mu = c.mean[i];
    const double sigma = c.sigma[i];
    double sum_dxhat = 0.0;
    double sum_dxhat_xc = 0.0;
    for (int j = 0; j < d; ++j) {
      const double xhat = (x(i, j) - mu) / sigma;
      d_scale(0, j) += dy(i, j) * xhat;
      d_shift(0, j) += dy(i, j);
      const double dxhat = dy(i, j) * scale(0, j);
      sum_dxhat += dxhat;
      sum_dxhat_xc += dxhat * (x(i, j) - mu);
    }
    const double dvar = sum_dxhat_xc * (-0.5) / (sigma * sigma * sigma);
    const double dmu = -sum_dxhat / sigma;
    for (int j = 0; j < d; ++j) {
      const double xc = x(i, j) - mu;
      const double dxhat = dy(i, j) * scale(0, j);
      dx(i, j) += dxhat / sigma + dvar * 2.0 * xc / d + dmu / d;
    }
  }
}

void add_colsum(const Matrix& dy, Matrix& db) {
  for (int i = 0; i < dy.rows(); ++i)
    for (int j = 0; j < dy.cols(); ++j) db(0, j) += dy(i, j);
}

struct BlockCache {
  Matrix x_in;    // residual stream entering the block
  LnCache ln1;
  Matrix q, k, v;
  std::vector<Matrix> probs;       // per head, S x S, post-softmax
  std::vector<Matrix> attn_masks;  // per head, dropout scale factors (may be empty)
  Matrix ctx;       // concatenated head outputs
  Matrix attn_out;  // ctx * Wo^T + bo
  Matrix x_res1;    // x_in + attn_out
  LnCache ln2;
  Matrix ffn_pre;   // y1 = U W1^T + b1
  Matrix ffn_act;
  Matrix ffn_out;   // y2 (pre-dropout)
  Matrix ffn_mask;  // dropout scale factors (may be empty)
};

struct SeqCache {
  std::vector<int> input_ids;  // after [MASK] substitution
  std::vector<int> targets;    // -1 where no loss
  Matrix x0;                   // embedded input
  std::vector<BlockCache> blocks;
  Matrix x_final;
  Matrix dlogits;  // filled during loss evaluation
  double loss_sum = 0.0;
  int loss_tokens = 0;
};

void validate_batch(const ModelParams& params, const Batch& batch) {
  const ModelConfig& cfg = params.config;
  if (batch.sequences.empty()) {
    throw std::invalid_argument("batch: no sequences");
  }
  for (const TokenSequence& seq : batch.sequences) {
    if (seq.empty()) throw std::invalid_argument("batch: empty sequence");
    if (static_cast<int>(seq.size()) > cfg.max_positions) {
      throw std::invalid_argument("batch: sequence length " + std::to_string(seq.size()) +
                                  " exceeds max_positions " + std::to_string(cfg.max_positions));
    }
    for (int t : seq) {
      if (t < 0 || t >= cfg.vocab_size) {
        throw std::invalid_argument("batch: token id " + std::to_string(t) +
                                    " outside vocabulary of size " + std::to_string(cfg.vocab_size));
      }
    }
  }
  if (cfg.task == Task::kMasked) {
    if (batch.mask_positions.size() != batch.sequences.size()) {
      throw std::invalid_argument("batch: masked task needs mask positions per sequence");
    }
    int total = 0;
    for (std::size_t s = 0; s < batch.sequences.size(); ++s) {
      for (int p : batch.mask_positions[s]) {
        if (p < 0 || p >= static_cast<int>(batch.sequences[s].size())) {
          throw std::invalid_argument("batch: mask position out of range");
        }
      }
      total += static_cast<int>(batch.mask_positions[s].size());
    }
    if (total == 0) throw std::invalid_argument("batch: masked task with no masked positions");
  } else {
    int loss_tokens = 0;
    for (const TokenSequence& seq : batch.sequences)
      loss_tokens += static_cast<int>(seq.size()) - 1;
    if (loss_tokens == 0) {
      throw std::invalid_argument("batch: causal task needs sequences of length >= 2");
    }
  }
}

int count_loss_tokens(const ModelConfig& cfg, const Batch& batch) {
  int n = 0;
  if (cfg.task == Task::kMasked) {
    for (const auto& m : batch.mask_positions) n += static_cast<int>(m.size());
  } else {
    for (const auto& seq : batch.sequences) n += static_cast<int>(seq.size()) - 1;
  }
  return n;
}

// Forward pass for one sequence. The cache is filled only as deeply as the
// caller needs: with_cache keeps everything required for the backward pass.
SeqCache forward_sequence(const ModelParams& params, const TokenSequence& seq,
                          const std::vector<int>* masks, int n_loss_total,
                          Rng* dropout_rng, ForwardTrace* trace,
                          bool trace_attention = false) {
  const ModelConfig& cfg = params.config;
  const int s_len = static_cast<int>(seq.size());
  const int d = cfg.d_model;
  const int n_heads = cfg.n_heads;
  const int d_head = d / n_heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(d_head));
  const double keep = 1.0 - cfg.dropout_rate;
  const bool use_dropout = dropout_rng != nullptr && cfg.dropout_rate > 0.0;

  SeqCache sc;
  sc.input_ids.assign(seq.begin(), seq.end());
  sc.targets.assign(s_len, -1);
  if (cfg.task == Task::kMasked) {
    for (int p : *masks) {
      sc.targets[p] = seq[p];
      sc.input_ids[p] = cfg.mask_token_id;
    }
  } else {
    for (int k = 0; k + 1 < s_len; ++k) sc.targets[k] = seq[k + 1];
  }

  sc.x0 = Matrix(s_len, d);
  for (int k = 0; k < s_len; ++k) {
    for (int j = 0; j < d; ++j) {
      sc.x0(k, j) = params.token_embedding(sc.input_ids[k], j) +
                    params.positional_embedding(k, j);
    }
  }

  Matrix x = sc.x0;
  sc.blocks.resize(cfg.n_layers);
  for (int bi = 0; bi < cfg.n_layers; ++bi) {
    const BlockParams& bp = params.blocks[bi];
    BlockCache& bc = sc.blocks[bi];
    bc.x_in = x;
    bc.ln1 = layer_norm(x, bp.ln1_scale, bp.ln1_shift);
    bc.q = linear(bc.ln1.out, bp.w_q, bp.b_q);
    bc.k = linear(bc.ln1.out, bp.w_k, bp.b_k);
    bc.v = linear(bc.ln1.out, bp.w_v, bp.b_v);

    bc.probs.resize(n_heads);
    if (use_dropout) bc.attn_masks.resize(n_heads);
    bc.ctx = Matrix(s_len, d);
    for (int h = 0; h < n_heads; ++h) {
      const int off = h * d_head;
      Matrix scores(s_len, s_len);
      for (int i = 0; i < s_len; ++i) {
        for (int j = 0; j < s_len; ++j) {
          if (cfg.task == Task::kCausal && j > i) {
            scores(i, j) = kMaskedScore;
            continue;
          }
          double acc = 0.0;
          for (int e = 0; e < d_head; ++e) acc += bc.q(i, off + e) * bc.k(j, off + e);
          scores(i, j) = acc * inv_sqrt_dh;
        }
      }
      Matrix& p = bc.probs[h];
      p = Matrix(s_len, s_len);
      for (int i = 0; i < s_len; ++i) {
        double mx = scores(i, 0);
        for (int j = 1; j < s_len; ++j) mx = std::max(mx, scores(i, j));
        double z = 0.0;
        for (int j = 0; j < s_len; ++j) {
          const double e = std::exp(scores(i, j) - mx);
          p(i, j) = e;
          z += e;
        }
        for (int j = 0; j < s_len; ++j) p(i, j) /= z;
      }
      const Matrix* applied = &p;
      Matrix dropped;
      if (use_dropout) {
        Matrix& mask = bc.attn_masks[h];
        mask = Matrix(s_len, s_len);
        dropped = Matrix(s_len, s_len);
        for (int i = 0; i < s_len; ++i)
          for (int j = 0; j < s_len; ++j) {
            const double scale = dropout_rng->uniform() < cfg.dropout_rate ? 0.0 : 1.0 / keep;
            mask(i, j) = scale;
            dropped(i, j) = p(i, j) * scale;
          }
        applied = &dropped;
      }
      for (int i = 0; i < s_len; ++i)
        for (int j = 0; j < s_len; ++j) {
          const double w = (*applied)(i, j);
          if (w == 0.0) continue;
          for (int e = 0; e < d_head; ++e) bc.ctx(i, off + e) += w * bc.v(j, off + e);
        }
    }
    bc.attn_out = linear(bc.ctx, bp.w_o, bp.b_o);

    bc.x_res1 = bc.x_in;
    numkernel::axpy(1.0, bc.attn_out, bc.x_res1);
    bc.ln2 = layer_norm(bc.x_res1, bp.ln2_scale, bp.ln2_shift);
    bc.ffn_pre = linear(bc.ln2.out, bp.ffn_w1, bp.ffn_b1);
    bc.ffn_act = Matrix(s_len, cfg.ffn_width);
    for (int i = 0; i < s_len; ++i)
      for (int j = 0; j < cfg.ffn_width; ++j)
        bc.ffn_act(i, j) = cfg.activation == Activation::kRelu ? relu(bc.ffn_pre(i, j))
                                                               : gelu(bc.ffn_pre(i, j));
    bc.ffn_out = linear(bc.ffn_act, bp.ffn_w2, bp.ffn_b2);
    Matrix ffn_applied = bc.ffn_out;
    if (use_dropout) {
      bc.ffn_mask = Matrix(s_len, d);
      for (int i = 0; i < s_len; ++i)
        for (int j = 0; j < d; ++j) {
          const double scale = dropout_rng->uniform() < cfg.dropout_rate ? 0.0 : 1.0 / keep;
          bc.ffn_mask(i, j) = scale;
          ffn_applied(i, j) *= scale;
        }
    }

    if (trace != nullptr) {
      Matrix& fin = trace->ffn_inputs[bi];
      Matrix& fpre = trace->ffn_preact[bi];
      Matrix& aout = trace->attn_outputs[bi];
      const int base = trace->seq_offsets.back();
      for (int i = 0; i < s_len; ++i) {
        for (int j = 0; j < d; ++j) {
          fin(base + i, j) = bc.ln2.out(i, j);
          aout(base + i, j) = bc.attn_out(i, j);
        }
        for (int j = 0; j < cfg.ffn_width; ++j) fpre(base + i, j) = bc.ffn_pre(i, j);
      }
      if (trace_attention) {
        for (int h = 0; h < n_heads; ++h) trace->attn_probs.push_back(bc.probs[h]);
      }
    }

    x = bc.x_res1;
    numkernel::axpy(1.0, ffn_applied, x);
  }
  sc.x_final = x;

  // Decoder + cross-entropy at loss-bearing positions.
  const Matrix& dec = params.decoder();
  Matrix logits = numkernel::gemm(sc.x_final, dec, false, true);
  if (cfg.decoder_bias) {
    for (int i = 0; i < s_len; ++i)
      for (int j = 0; j < cfg.vocab_size; ++j) logits(i, j) += params.decoder_bias(0, j);
  }
  sc.dlogits = Matrix(s_len, cfg.vocab_size);
  for (int i = 0; i < s_len; ++i) {
    if (sc.targets[i] < 0) continue;
    double mx = logits(i, 0);
    for (int j = 1; j < cfg.vocab_size; ++j) mx = std::max(mx, logits(i, j));
    double z = 0.0;
    for (int j = 0; j < cfg.vocab_size; ++j) z += std::exp(logits(i, j) - mx);
    const double lse = mx + std::log(z);
    sc.loss_sum += lse - logits(i, sc.targets[i]);
    ++sc.loss_tokens;
    const double inv = 1.0 / n_loss_total;
    for (int j = 0; j < cfg.vocab_size; ++j)
      sc.dlogits(i, j) = std::exp(logits(i, j) - lse) * inv;
    sc.dlogits(i, sc.targets[i]) -= inv;
  }
  return sc;
}

ModelParams zero_like(const ModelParams& params) {
  ModelParams z = params;
  z.for_each_tensor([](const std::string&, Matrix& m) { m.set_zero(); });
  return z;
}

// Backward pass for one sequence; parameter gradients accumulate into g.
void backward_sequence(const ModelParams& params, const SeqCache& sc, ModelParams& g) {
  const ModelConfig& cfg = params.config;
  const int s_len = static_cast<int>(sc.input_ids.size());
  const int d = cfg.d_model;
  const int n_heads = cfg.n_heads;
  const int d_head = d / n_heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(d_head));

  // Decoder.
  const Matrix& dec = params.decoder();
  Matrix dx = numkernel::gemm(sc.dlogits, dec, false, false);
  Matrix& ddec = cfg.tied_embedding ? g.token_embedding : g.decoder_weight;
  {
    Matrix contrib = numkernel::gemm(sc.dlogits, sc.x_final, true, false);
    numkernel::axpy(1.0, contrib, ddec);
  }
  if (cfg.decoder_bias) add_colsum(sc.dlogits, g.decoder_bias);

  for (int bi = cfg.n_layers - 1; bi >= 0; --bi) {
    const BlockParams& bp = params.blocks[bi];
    const BlockCache& bc = sc.blocks[bi];
    BlockParams& gb = g.blocks[bi];
    const bool dropped = !bc.ffn_mask.empty();

    // FFN branch: out = x_res1 + dropout(y2).
    Matrix dy2 = dx;
    if (dropped) {
      for (int i = 0; i < s_len; ++i)
        for (int j = 0; j < d; ++j) dy2(i, j) *= bc.ffn_mask(i, j);
    }
    {
      Matrix dw2 = numkernel::gemm(dy2, bc.ffn_act, true, false);
      numkernel::axpy(1.0, dw2, gb.ffn_w2);
    }
    add_colsum(dy2, gb.ffn_b2);
    Matrix dact = numkernel::gemm(dy2, bp.ffn_w2, false, false);
    Matrix dy1 = dact;
    for (int i = 0; i < s_len; ++i)
      for (int j = 0; j < cfg.ffn_width; ++j) {
        const double pre = bc.ffn_pre(i, j);
        const double gd = cfg.activation == Activation::kRelu ? (pre > 0.0 ? 1.0 : 0.0)
                                                              : gelu_grad(pre);
        dy1(i, j) *= gd;
      }
    {
      Matrix dw1 = numkernel::gemm(dy1, bc.ln2.out, true, false);
      numkernel::axpy(1.0, dw1, gb.ffn_w1);
    }
    add_colsum(dy1, gb.ffn_b1);
    Matrix du = numkernel::gemm(dy1, bp.ffn_w1, false, false);

    Matrix dx_res1 = dx;  // residual path
    layer_norm_backward(bc.x_res1, bc.ln2, bp.ln2_scale, du, dx_res1, gb.ln2_scale,
                        gb.ln2_shift);

    // Attention branch: x_res1 = x_in + attn_out.
    const Matrix& dattn = dx_res1;
    {
      Matrix dwo = numkernel::gemm(dattn, bc.ctx, true, false);
      numkernel::axpy(1.0, dwo, gb.w_o);
    }
    add_colsum(dattn, gb.b_o);
    Matrix dctx = numkernel::gemm(dattn, bp.w_o, false, false);

    Matrix dq(s_len, d), dk(s_len, d), dv(s_len, d);
    for (int h = 0; h < n_heads; ++h) {
      const int off = h * d_head;
      const Matrix& p = bc.probs[h];
      const Matrix* mask = bc.attn_masks.empty() ? nullptr : &bc.attn_masks[h];
      for (int i = 0; i < s_len; ++i) {
        // dP~ row, then dropout and softmax backward.
        std::vector<double> dp(s_len);
        for (int j = 0; j < s_len; ++j) {
          double acc = 0.0;
          for (int e = 0; e < d_head; ++e) acc += dctx(i, off + e) * bc.v(j, off + e);
          if (mask != nullptr) acc *= (*mask)(i, j);
          dp[j] = acc;
        }
        // dV accumulation uses the applied (possibly dropped) probabilities.
        for (int j = 0; j < s_len; ++j) {
          double w = p(i, j);
          if (mask != nullptr) w *= (*mask)(i, j);
          if (w == 0.0) continue;
          for (int e = 0; e < d_head; ++e) dv(j, off + e) += w * dctx(i, off + e);
        }
        double inner = 0.0;
        for (int j = 0; j < s_len; ++j) inner += dp[j] * p(i, j);
        for (int j = 0; j < s_len; ++j) {
          const double ds = p(i, j) * (dp[j] - inner) * inv_sqrt_dh;
          if (ds == 0.0) continue;
          for (int e = 0; e < d_head; ++e) {
            dq(i, off + e) += ds * bc.k(j, off + e);
            dk(j, off + e) += ds * bc.q(i, off + e);
          }
        }
      }
    }

    Matrix da(s_len, d);
    {
      Matrix t = numkernel::gemm(dq, bp.w_q, false, false);
      numkernel::axpy(1.0, t, da);
      t = numkernel::gemm(dk, bp.w_k, false, false);
      numkernel::axpy(1.0, t, da);
      t = numkernel::gemm(dv, bp.w_v, false, false);
      numkernel::axpy(1.0, t, da);
    }
    {
      Matrix t = numkernel::gemm(dq, bc.ln1.out, true, false);
      numkernel::axpy(1.0, t, gb.w_q);
      t = numkernel::gemm(dk, bc.ln1.out, true, false);
      numkernel::axpy(1.0, t, gb.w_k);
      t = numkernel::gemm(dv, bc.ln1.out, true, false);
      numkernel::axpy(1.0, t, gb.w_v);
    }
    add_colsum(dq, gb.b_q);
    add_colsum(dk, gb.b_k);
    add_colsum(dv, gb.b_v);

    Matrix dx_in = dx_res1;  // residual path around attention
    layer_norm_backward(bc.x_in, bc.ln1, bp.ln1_scale, da, dx_in, gb.ln1_scale,
                        gb.ln1_shift);
    dx = dx_in;
  }

  // Embedding scatter.
  for (int k = 0; k < s_len; ++k) {
    const int tok = sc.input_ids[k];
    for (int j = 0; j < d; ++j) {
      g.token_embedding(tok, j) += dx(k, j);
      g.positional_embedding(k, j) += dx(k, j);
    }
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 1) throw std::invalid_argument("ModelConfig: vocab_size must be >= 1");
  if (d_model < 1) throw std::invalid_argument("ModelConfig: d_model must be >= 1");
  if (n_layers < 1) throw std::invalid_argument("ModelConfig: n_layers must be >= 1");
  if (n_heads < 1 || d_model % n_heads != 0) {
    throw std::invalid_argument("ModelConfig: d_model must be divisible by n_heads");
  }
  if (ffn_width < 1) throw std::invalid_argument("ModelConfig: ffn_width must be >= 1");
  if (max_positions < 1) throw std::invalid_argument("ModelConfig: max_positions must be >= 1");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw std::invalid_argument("ModelConfig: dropout_rate must lie in [0, 1)");
  }
  if (task == Task::kMasked && (mask_token_id < 0 || mask_token_id >= vocab_size)) {
    throw std::invalid_argument("ModelConfig: mask_token_id outside vocabulary");
  }
}

ModelParams init_model(const ModelConfig& config, Rng& rng) {
  config.validate();
  ModelParams p;
  p.config = config;
  const int d = config.d_model;
  p.token_embedding = Matrix(config.vocab_size, d);
  p.positional_embedding = Matrix(config.max_positions, d);
  p.blocks.resize(config.n_layers);
  for (BlockParams& b : p.blocks) {
    b.w_q = Matrix(d, d);
    b.b_q = Matrix(1, d);
    b.w_k = Matrix(d, d);
    b.b_k = Matrix(1, d);
    b.w_v = Matrix(d, d);
    b.b_v = Matrix(1, d);
    b.w_o = Matrix(d, d);
    b.b_o = Matrix(1, d);
    b.ln1_scale = Matrix(1, d);
    b.ln1_shift = Matrix(1, d);
    b.ln2_scale = Matrix(1, d);
    b.ln2_shift = Matrix(1, d);
    b.ffn_w1 = Matrix(config.ffn_width, d);
    b.ffn_b1 = Matrix(1, config.ffn_width);
    b.ffn_w2 = Matrix(d, config.ffn_width);
    b.ffn_b2 = Matrix(1, d);
  }
  if (!config.tied_embedding) p.decoder_weight = Matrix(config.vocab_size, d);
  if (config.decoder_bias) p.decoder_bias = Matrix(1, config.vocab_size);

  p.for_each_tensor([&](const std::string& name, Matrix& m) {
    if (name.find("ln") != std::string::npos) {
      m.fill(name.find("scale") != std::string::npos ? 1.0 : 0.0);
      return;
    }
    double* data = m.data();
    for (std::int64_t i = 0; i < m.size(); ++i) data[i] = rng.gaussian() * kInitStd;
  });
  return p;
}

double forward_loss(const ModelParams& params, const Batch& batch) {
  params.config.validate();
  validate_batch(params, batch);
  const int n_loss = count_loss_tokens(params.config, batch);
  double total = 0.0;
  for (std::size_t s = 0; s < batch.sequences.size(); ++s) {
    const std::vector<int>* masks =
        params.config.task == Task::kMasked ? &batch.mask_positions[s] : nullptr;
    SeqCache sc = forward_sequence(params, batch.sequences[s], masks, n_loss, nullptr, nullptr);
    total += sc.loss_sum;
  }
  return total / n_loss;
}

ForwardTrace forward_trace(const ModelParams& params, const Batch& batch,
                           bool trace_attention) {
  params.config.validate();
  validate_batch(params, batch);
  const ModelConfig& cfg = params.config;
  const int n_loss = count_loss_tokens(cfg, batch);

  ForwardTrace trace;
  int total_rows = 0;
  for (const auto& seq : batch.sequences) total_rows += static_cast<int>(seq.size());
  trace.ffn_inputs.assign(cfg.n_layers, Matrix(total_rows, cfg.d_model));
  trace.ffn_preact.assign(cfg.n_layers, Matrix(total_rows, cfg.ffn_width));
  trace.attn_outputs.assign(cfg.n_layers, Matrix(total_rows, cfg.d_model));

  double total = 0.0;
  int offset = 0;
  for (std::size_t s = 0; s < batch.sequences.size(); ++s) {
    trace.seq_offsets.push_back(offset);
    trace.seq_lengths.push_back(static_cast<int>(batch.sequences[s].size()));
    const std::vector<int>* masks =
        cfg.task == Task::kMasked ? &batch.mask_positions[s] : nullptr;
    SeqCache sc = forward_sequence(params, batch.sequences[s], masks, n_loss, nullptr, &trace,
                                   trace_attention);
    total += sc.loss_sum;
    offset += static_cast<int>(batch.sequences[s].size());
  }
  trace.loss = total / n_loss;
  return trace;
}

std::vector<double> normalized_embedding(const ModelParams& params, int token,
                                         int position) {
  const ModelConfig& cfg = params.config;
  if (token < 0 || token >= cfg.vocab_size || position < 0 ||
      position >= cfg.max_positions) {
    throw std::invalid_argument("normalized_embedding: token or position out of range");
  }
  const int d = cfg.d_model;
  Matrix x(1, d);
  for (int j = 0; j < d; ++j)
    x(0, j) = params.token_embedding(token, j) + params.positional_embedding(position, j);
  const LnCache c = layer_norm(x, params.blocks[0].ln2_scale, params.blocks[0].ln2_shift);
  return std::vector<double>(c.out.row(0).begin(), c.out.row(0).end());
}

GradientUpdate gradient(const ModelParams& params, const Batch& batch, Rng* dropout_rng) {
  params.config.validate();
  validate_batch(params, batch);
  const ModelConfig& cfg = params.config;
  const int n_loss = count_loss_tokens(cfg, batch);

  GradientUpdate update;
  update.tensors = zero_like(params);
  update.token_count = n_loss;
  for (std::size_t s = 0; s < batch.sequences.size(); ++s) {
    const std::vector<int>* masks =
        cfg.task == Task::kMasked ? &batch.mask_positions[s] : nullptr;
    SeqCache sc = forward_sequence(params, batch.sequences[s], masks, n_loss, dropout_rng, nullptr);
    backward_sequence(params, sc, update.tensors);
  }
  return update;
}

namespace {

std::string activation_name(Activation a) { return a == Activation::kRelu ? "relu" : "gelu"; }
std::string task_name(Task t) { return t == Task::kCausal ? "causal" : "masked"; }

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "gelu") return Activation::kGelu;
  throw std::invalid_argument("unknown activation: " + s);
}

Task parse_task(const std::string& s) {
  if (s == "causal") return Task::kCausal;
  if (s == "masked") return Task::kMasked;
  throw std::invalid_argument("unknown task: " + s);
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::string& path_prefix) {
  const ModelConfig& c = params.config;
  std::ofstream manifest(path_prefix + ".manifest");
  if (!manifest) throw std::runtime_error("cannot write " + path_prefix + ".manifest");
  manifest.precision(17);
  manifest << "fedleak-checkpoint 1\n";
  manifest << "vocab_size " << c.vocab_size << "\n";
  manifest << "d_model " << c.d_model << "\n";
  manifest << "n_layers " << c.n_layers << "\n";
  manifest << "n_heads " << c.n_heads << "\n";
  manifest << "ffn_width " << c.ffn_width << "\n";
  manifest << "max_positions " << c.max_positions << "\n";
  manifest << "activation " << activation_name(c.activation) << "\n";
  manifest << "task " << task_name(c.task) << "\n";
  manifest << "tied_embedding " << (c.tied_embedding ? 1 : 0) << "\n";
  manifest << "decoder_bias " << (c.decoder_bias ? 1 : 0) << "\n";
  manifest << "dropout_rate " << c.dropout_rate << "\n";
  manifest << "mask_token_id " << c.mask_token_id << "\n";

  std::ofstream bin(path_prefix + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("cannot write " + path_prefix + ".bin");
  params.for_each_tensor([&](const std::string& name, const Matrix& m) {
    manifest << "tensor " << name << " " << m.rows() << " " << m.cols() << "\n";
    bin.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(m.size() * sizeof(double)));
  });
  if (!bin || !manifest) throw std::runtime_error("write failure for " + path_prefix);
}

ModelParams load_checkpoint(const std::string& path_prefix) {
  std::ifstream manifest(path_prefix + ".manifest");
  if (!manifest) throw std::runtime_error("cannot read " + path_prefix + ".manifest");
  std::string line;
  if (!std::getline(manifest, line) || line != "fedleak-checkpoint 1") {
    throw std::runtime_error("bad checkpoint header in " + path_prefix + ".manifest");
  }
  ModelConfig c;
  std::vector<std::pair<std::string, std::pair<int, int>>> tensors;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream iss(line);
    std::string key;
    iss >> key;
    if (key == "tensor") {
      std::string name;
      int r = 0, cc = 0;
      iss >> name >> r >> cc;
      tensors.emplace_back(name, std::make_pair(r, cc));
    } else {
      std::string value;
      iss >> value;
      if (key == "vocab_size") c.vocab_size = std::stoi(value);
      else if (key == "d_model") c.d_model = std::stoi(value);
      else if (key == "n_layers") c.n_layers = std::stoi(value);
      else if (key == "n_heads") c.n_heads = std::stoi(value);
      else if (key == "ffn_width") c.ffn_width = std::stoi(value);
      else if (key == "max_positions") c.max_positions = std::stoi(value);
      else if (key == "activation") c.activation = parse_activation(value);
      else if (key == "task") c.task = parse_task(value);
      else if (key == "tied_embedding") c.tied_embedding = value != "0";
      else if (key == "decoder_bias") c.decoder_bias = value != "0";
      else if (key == "dropout_rate") c.dropout_rate = std::stod(value);
      else if (key == "mask_token_id") c.mask_token_id = std::stoi(value);
      else throw std::runtime_error("unknown manifest key: " + key);
    }
  }
  c.validate();

  Rng dummy(0);
  ModelParams params = init_model(c, dummy);
  std::ifstream bin(path_prefix + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("cannot read " + path_prefix + ".bin");
  std::size_t idx = 0;
  params.for_each_tensor([&](const std::string& name, Matrix& m) {
    if (idx >= tensors.size() || tensors[idx].first != name ||
        tensors[idx].second.first != m.rows() || tensors[idx].second.second != m.cols()) {
      throw std::runtime_error("manifest does not match model layout at tensor " + name);
    }
    bin.read(reinterpret_cast<char*>(m.data()),
             static_cast<std::streamsize>(m.size() * sizeof(double)));
    ++idx;
  });
  if (!bin || idx != tensors.size()) {
    throw std::runtime_error("checkpoint payload does not match manifest");
  }
  return params;
}

}  // namespace fedleak::minitransformer
