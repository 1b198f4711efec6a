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

#include "fedleak/recovery.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

namespace fedleak::recovery {

using numkernel::Matrix;

namespace {

// Matching and certification ignore the reserved identity dimensions and
// the gradient-carrier dimension: the former hold the sequence tag, the
// latter accumulates feed-forward routing noise.
std::span<const double> payload(std::span<const double> v, int d_prime) {
  return v.subspan(d_prime, v.size() - d_prime - 1);
}

double payload_correlation(std::span<const double> a, std::span<const double> b,
                           int d_prime) {
  return numkernel::correlation(payload(a, d_prime), payload(b, d_prime));
}

// Centered payload copy with the component along the centered base
// direction removed.
std::vector<double> residualize(std::span<const double> x, std::span<const double> base,
                                int d_prime) {
  const auto xp = payload(x, d_prime);
  const auto bp = payload(base, d_prime);
  const int n = static_cast<int>(xp.size());
  double mx = 0.0, mb = 0.0;
  for (int i = 0; i < n; ++i) {
    mx += xp[i];
    mb += bp[i];
  }
  mx /= n;
  mb /= n;
  std::vector<double> xc(n), bc(n);
  for (int i = 0; i < n; ++i) {
    xc[i] = xp[i] - mx;
    bc[i] = bp[i] - mb;
  }
  double bb = 0.0, xb = 0.0;
  for (int i = 0; i < n; ++i) {
    bb += bc[i] * bc[i];
    xb += xc[i] * bc[i];
  }
  if (bb > 0.0) {
    const double a = xb / bb;
    for (int i = 0; i < n; ++i) xc[i] -= a * bc[i];
  }
  return xc;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = numkernel::l2_norm(a);
  const double nb = numkernel::l2_norm(b);
  if (na <= 0.0 || nb <= 0.0) return 0.0;
  return numkernel::dot(a, b) / (na * nb);
}

// Relative residual of the best affine fit u ~ a * t + b on payload dims.
double affine_residual(std::span<const double> u, std::span<const double> t,
                       int d_prime) {
  const auto up = payload(u, d_prime);
  const auto tp = payload(t, d_prime);
  const int n = static_cast<int>(up.size());
  double mu = 0.0, mt = 0.0;
  for (int i = 0; i < n; ++i) {
    mu += up[i];
    mt += tp[i];
  }
  mu /= n;
  mt /= n;
  double sut = 0.0, stt = 0.0, suu = 0.0, norm_u = 0.0;
  for (int i = 0; i < n; ++i) {
    const double du = up[i] - mu;
    const double dt = tp[i] - mt;
    sut += du * dt;
    stt += dt * dt;
    suu += du * du;
    norm_u += up[i] * up[i];
  }
  if (norm_u <= 0.0) return 1.0;
  const double res2 = stt > 0.0 ? std::max(0.0, suu - sut * sut / stt) : suu;
  return std::sqrt(res2 / norm_u);
}

std::vector<int> sorted_unique(std::vector<int> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

}  // namespace

std::vector<int> recover_bow_decoder_bias(const GradientUpdate& update, int seq_len,
                                          int n_sequences) {
  const auto& cfg = update.tensors.config;
  if (!cfg.decoder_bias) {
    throw std::invalid_argument("recover_bow_decoder_bias: model has no decoder bias");
  }
  if (cfg.task != minitransformer::Task::kCausal) {
    throw std::invalid_argument("recover_bow_decoder_bias: causal task only");
  }
  const int vocab = cfg.vocab_size;
  const std::int64_t want = static_cast<std::int64_t>(seq_len) * n_sequences;
  std::vector<double> g_b(update.tensors.decoder_bias.row(0).begin(),
                          update.tensors.decoder_bias.row(0).end());

  std::vector<int> tokens;
  for (int v = 0; v < vocab; ++v)
    if (g_b[v] < 0.0) tokens.push_back(v);
  if (tokens.empty()) {
    throw std::invalid_argument("recover_bow_decoder_bias: no negative bias entries");
  }

  // Tokens visible only in the embedding gradient (sequence-initial tokens
  // are inputs but never targets).
  std::vector<bool> in_set(vocab, false);
  for (int v : tokens) in_set[v] = true;
  const Matrix& g_e = update.tensors.token_embedding;
  for (int v = 0; v < vocab; ++v) {
    if (in_set[v]) continue;
    for (double x : g_e.row(v)) {
      if (x < 0.0) {
        tokens.push_back(v);
        in_set[v] = true;
        break;
      }
    }
  }
  if (static_cast<std::int64_t>(tokens.size()) > want) {
    std::stable_sort(tokens.begin(), tokens.end(),
                     [&](int a, int b) { return g_b[a] < g_b[b]; });
    tokens.resize(want);
  }

  double m_impact = 0.0;
  for (int v : tokens) m_impact += g_b[v];
  m_impact /= static_cast<double>(want);
  for (int v : sorted_unique(tokens)) g_b[v] -= m_impact;

  while (static_cast<std::int64_t>(tokens.size()) < want) {
    int j = 0;
    for (int v = 1; v < vocab; ++v)
      if (g_b[v] < g_b[j]) j = v;
    g_b[j] -= m_impact;
    tokens.push_back(j);
  }
  return tokens;
}

std::vector<int> recover_bow_tied_embedding(const GradientUpdate& update, int seq_len,
                                            int n_sequences, double cutoff) {
  const auto& cfg = update.tensors.config;
  if (!cfg.tied_embedding) {
    throw std::invalid_argument("recover_bow_tied_embedding: embedding is not tied");
  }
  const int vocab = cfg.vocab_size;
  const std::int64_t want = static_cast<std::int64_t>(seq_len) * n_sequences;
  const Matrix& g_e = update.tensors.token_embedding;

  std::vector<double> norms(vocab);
  double positive = 0.0;
  for (int v = 0; v < vocab; ++v) {
    norms[v] = numkernel::l2_norm(g_e.row(v));
    positive += norms[v];
  }
  if (positive == 0.0) {
    throw std::invalid_argument("recover_bow_tied_embedding: all embedding rows are zero");
  }

  double mean = 0.0;
  int counted = 0;
  for (int v = 0; v < vocab; ++v) {
    if (norms[v] <= 0.0) continue;
    mean += std::log(norms[v]);
    ++counted;
  }
  mean /= counted;
  double var = 0.0;
  for (int v = 0; v < vocab; ++v) {
    if (norms[v] <= 0.0) continue;
    const double d = std::log(norms[v]) - mean;
    var += d * d;
  }
  const double stddev = counted > 1 ? std::sqrt(var / (counted - 1)) : 0.0;
  const double threshold = mean + cutoff * stddev;

  std::vector<int> tokens;
  for (int v = 0; v < vocab; ++v)
    if (norms[v] > 0.0 && std::log(norms[v]) > threshold) tokens.push_back(v);
  if (tokens.empty()) {
    tokens.push_back(static_cast<int>(
        std::max_element(norms.begin(), norms.end()) - norms.begin()));
  }
  if (static_cast<std::int64_t>(tokens.size()) > want) {
    std::stable_sort(tokens.begin(), tokens.end(),
                     [&](int a, int b) { return norms[a] > norms[b]; });
    tokens.resize(want);
  }

  double m_impact = 0.0;
  for (int v : tokens) m_impact += norms[v];
  m_impact /= static_cast<double>(want);
  const std::vector<int> seed = sorted_unique(tokens);
  for (int v : seed) norms[v] -= m_impact;

  while (static_cast<std::int64_t>(tokens.size()) < want) {
    int j = seed[0];
    for (int v : seed)
      if (norms[v] < norms[j]) j = v;
    norms[j] -= m_impact;
    tokens.push_back(j);
  }
  return tokens;
}

std::vector<BreachedEmbedding> extract_breached_embeddings(
    const GradientUpdate& update, const ModelParams& crafted, const BinLayout& layout,
    const RecoveryOptions& options) {
  const auto& cfg = crafted.config;
  if (update.tensors.config.n_layers != cfg.n_layers ||
      update.tensors.config.ffn_width != cfg.ffn_width ||
      update.tensors.config.d_model != cfg.d_model) {
    throw std::invalid_argument("extract_breached_embeddings: update/model shape mismatch");
  }
  const int k = cfg.ffn_width;
  const int d = cfg.d_model;

  double max_bias = 0.0;
  for (int bi = 0; bi < cfg.n_layers; ++bi) {
    max_bias = std::max(max_bias, numkernel::max_abs(update.tensors.blocks[bi].ffn_b1));
  }
  const double tau = options.bias_threshold_scale * max_bias;

  std::vector<BreachedEmbedding> out;
  for (int bi = 0; bi < cfg.n_layers; ++bi) {
    const Matrix& gw = update.tensors.blocks[bi].ffn_w1;
    const Matrix& gb = update.tensors.blocks[bi].ffn_b1;
    const std::vector<double> bias(gb.row(0).begin(), gb.row(0).end());

    if (options.use_omp_denoise) {
      // Rows between two occupied bins carry identical expected gradients,
      // so averaging each plateau shrinks the noise before differencing.
      const int jumps = options.omp_max_jumps > 0 ? std::min(options.omp_max_jumps, k) : k;
      const std::vector<double> denoised = solvers::omp_denoise(bias, jumps);
      std::vector<int> starts{0};
      for (int j = 0; j + 1 < k; ++j) {
        if (denoised[j] != denoised[j + 1]) starts.push_back(j + 1);
      }
      starts.push_back(k);
      std::vector<double> mean_b(starts.size() - 1);
      Matrix mean_w(static_cast<int>(starts.size()) - 1, d);
      for (std::size_t p = 0; p + 1 < starts.size(); ++p) {
        const int lo = starts[p], hi = starts[p + 1];
        for (int j = lo; j < hi; ++j) {
          mean_b[p] += bias[j];
          for (int e = 0; e < d; ++e) mean_w(static_cast<int>(p), e) += gw(j, e);
        }
        mean_b[p] /= hi - lo;
        for (int e = 0; e < d; ++e) mean_w(static_cast<int>(p), e) /= hi - lo;
      }
      for (std::size_t p = 0; p + 2 < starts.size(); ++p) {
        const double delta_b = mean_b[p] - mean_b[p + 1];
        if (std::fabs(delta_b) <= tau) continue;
        BreachedEmbedding be;
        be.block = bi;
        be.row = starts[p + 1] - 1;
        be.bin = layout.bin_index(bi, be.row);
        be.lambda = std::fabs(delta_b);
        be.u.resize(d);
        for (int e = 0; e < d; ++e) {
          be.u[e] = (mean_w(static_cast<int>(p), e) - mean_w(static_cast<int>(p) + 1, e)) / delta_b;
        }
        out.push_back(std::move(be));
      }
      continue;
    }

    for (int j = 0; j + 1 < k; ++j) {
      const double delta_b = bias[j] - bias[j + 1];
      if (std::fabs(delta_b) <= tau) continue;
      BreachedEmbedding be;
      be.block = bi;
      be.row = j;
      be.bin = layout.bin_index(bi, j);
      be.lambda = std::fabs(delta_b);
      be.u.resize(d);
      for (int e = 0; e < d; ++e) be.u[e] = (gw(j, e) - gw(j + 1, e)) / delta_b;
      out.push_back(std::move(be));
    }
  }

  // Bins holding several tokens accumulate outsized weight; flag them.
  if (!out.empty()) {
    std::vector<double> lambdas;
    for (const auto& be : out) lambdas.push_back(be.lambda);
    std::nth_element(lambdas.begin(), lambdas.begin() + lambdas.size() / 2, lambdas.end());
    const double median = lambdas[lambdas.size() / 2];
    for (auto& be : out) {
      be.collision_flag = be.lambda > options.collision_lambda_factor * median;
    }
  }
  return out;
}

solvers::ClusterLabels cluster_sequences(std::vector<BreachedEmbedding>& breached,
                                         int n_sequences, int seq_len, int d_prime,
                                         Rng& rng, std::vector<std::string>* warnings) {
  if (breached.empty()) {
    throw std::invalid_argument("cluster_sequences: no breached embeddings");
  }
  const std::int64_t cap = static_cast<std::int64_t>(n_sequences) * seq_len;
  if (static_cast<std::int64_t>(breached.size()) > cap) {
    std::vector<int> order(breached.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return breached[a].lambda > breached[b].lambda;
    });
    order.resize(cap);
    std::sort(order.begin(), order.end());
    std::vector<BreachedEmbedding> kept;
    kept.reserve(cap);
    for (int i : order) kept.push_back(std::move(breached[i]));
    if (warnings != nullptr) {
      warnings->push_back("cluster_sequences: kept " + std::to_string(cap) + " of " +
                          std::to_string(breached.size()) +
                          " breached embeddings (largest lambda)");
    }
    breached = std::move(kept);
  }
  Matrix points(static_cast<int>(breached.size()), d_prime);
  for (std::size_t i = 0; i < breached.size(); ++i)
    for (int e = 0; e < d_prime; ++e) points(static_cast<int>(i), e) = breached[i].u[e];
  return solvers::constrained_kmeans(points, n_sequences, seq_len, rng);
}

PositionAssignment assign_positions(const std::vector<int>& member_indices,
                                    const std::vector<BreachedEmbedding>& breached,
                                    const ModelParams& crafted, int seq_len,
                                    int d_prime) {
  PositionAssignment pa;
  pa.embedding_of_position.assign(seq_len, -1);
  pa.filled.assign(seq_len, false);
  if (member_indices.empty()) return pa;

  const int members = static_cast<int>(member_indices.size());
  Matrix corr(members, seq_len);
  for (int i = 0; i < members; ++i) {
    const auto& u = breached[member_indices[i]].u;
    for (int p = 0; p < seq_len; ++p) {
      corr(i, p) = payload_correlation(u, crafted.positional_embedding.row(p), d_prime);
    }
  }
  Matrix cost(members, seq_len);
  for (int i = 0; i < members; ++i)
    for (int p = 0; p < seq_len; ++p) cost(i, p) = -corr(i, p);
  const solvers::Assignment a = solvers::linear_sum_assignment(cost);
  for (int i = 0; i < members; ++i) {
    if (a.row_to_col[i] >= 0) pa.embedding_of_position[a.row_to_col[i]] = member_indices[i];
  }
  // Collisions leave positions open; reuse the best-correlating member.
  for (int p = 0; p < seq_len; ++p) {
    if (pa.embedding_of_position[p] >= 0) continue;
    int best = 0;
    for (int i = 1; i < members; ++i)
      if (corr(i, p) > corr(best, p)) best = i;
    pa.embedding_of_position[p] = member_indices[best];
    pa.filled[p] = true;
  }
  return pa;
}

namespace {

// Lazily built layer-norm templates for (token, position) pairs.
class TemplateCache {
 public:
  explicit TemplateCache(const ModelParams& crafted) : crafted_(crafted) {}

  const std::vector<double>& get(int token, int position) {
    const std::int64_t key =
        static_cast<std::int64_t>(token) * crafted_.config.max_positions + position;
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    auto [ins, _] = cache_.emplace(
        key, minitransformer::normalized_embedding(crafted_, token, position));
    return ins->second;
  }

 private:
  const ModelParams& crafted_;
  std::unordered_map<std::int64_t, std::vector<double>> cache_;
};

}  // namespace

std::vector<int> assign_tokens(const std::vector<Slot>& slots,
                               const std::vector<BreachedEmbedding>& breached,
                               const ModelParams& crafted,
                               const std::vector<int>& candidates, int d_prime) {
  if (candidates.empty()) {
    throw std::invalid_argument("assign_tokens: empty candidate set");
  }
  const int n_slots = static_cast<int>(slots.size());
  const int n_cands = static_cast<int>(candidates.size());
  TemplateCache templates(crafted);

  Matrix cost(n_slots, n_cands);
  for (int s = 0; s < n_slots; ++s) {
    if (slots[s].embedding_index < 0) continue;  // no evidence: flat cost row
    const auto& u = breached[slots[s].embedding_index].u;
    const int pos = slots[s].position;
    // Distinct candidate tokens share one template per position.
    std::unordered_map<int, double> cached;
    for (int c = 0; c < n_cands; ++c) {
      auto it = cached.find(candidates[c]);
      double corr;
      if (it == cached.end()) {
        corr = payload_correlation(u, templates.get(candidates[c], pos), d_prime);
        cached.emplace(candidates[c], corr);
      } else {
        corr = it->second;
      }
      cost(s, c) = -corr;
    }
  }
  const solvers::Assignment a = solvers::linear_sum_assignment(cost);

  std::vector<int> tokens(n_slots, -1);
  for (int s = 0; s < n_slots; ++s) {
    if (a.row_to_col[s] >= 0) tokens[s] = candidates[a.row_to_col[s]];
  }
  // More slots than candidates: fall back to the full vocabulary.
  for (int s = 0; s < n_slots; ++s) {
    if (tokens[s] >= 0) continue;
    int best_token = 0;
    double best_corr = -2.0;
    if (slots[s].embedding_index >= 0) {
      const auto& u = breached[slots[s].embedding_index].u;
      for (int v = 0; v < crafted.config.vocab_size; ++v) {
        const double corr =
            payload_correlation(u, templates.get(v, slots[s].position), d_prime);
        if (corr > best_corr) {
          best_corr = corr;
          best_token = v;
        }
      }
    }
    tokens[s] = best_token;
  }
  return tokens;
}

std::vector<bool> certify(const std::vector<Slot>& slots,
                          const std::vector<int>& slot_tokens,
                          const std::vector<BreachedEmbedding>& breached,
                          const ModelParams& crafted, int d_prime, double tol) {
  if (slots.size() != slot_tokens.size()) {
    throw std::invalid_argument("certify: slot/token count mismatch");
  }
  TemplateCache templates(crafted);
  std::vector<bool> out(slots.size(), false);
  for (std::size_t s = 0; s < slots.size(); ++s) {
    const int ei = slots[s].embedding_index;
    if (ei < 0 || breached[ei].collision_flag) continue;
    const auto& tmpl = templates.get(slot_tokens[s], slots[s].position);
    out[s] = affine_residual(breached[ei].u, tmpl, d_prime) <= tol;
  }
  return out;
}

RecoveryResult run_attack(const GradientUpdate& update, const ModelParams& crafted,
                          const MaliciousConfig& cfg, int n_sequences, int seq_len,
                          const RecoveryOptions& options) {
  const auto& mc = crafted.config;
  if (n_sequences < 1 || seq_len < 1 || seq_len > mc.max_positions) {
    throw std::invalid_argument("run_attack: bad sequence geometry");
  }
  double update_norm = 0.0;
  update.tensors.for_each_tensor([&](const std::string&, const Matrix& m) {
    update_norm += numkernel::frobenius_norm(m);
  });
  if (update_norm == 0.0) throw std::invalid_argument("run_attack: empty update");

  RecoveryResult result;
  const BinLayout layout =
      malice::compute_bias_bins(cfg.stats, cfg.bin_count, mc.n_layers, mc.ffn_width);

  // Bag-of-words candidate multiset. Models exposing neither a decoder bias
  // nor a tied embedding fall back to one candidate per vocabulary entry.
  std::vector<int> candidates;
  if (mc.tied_embedding) {
    candidates = recover_bow_tied_embedding(update, seq_len, n_sequences,
                                            options.tied_cutoff);
  } else if (mc.decoder_bias && mc.task == minitransformer::Task::kCausal) {
    candidates = recover_bow_decoder_bias(update, seq_len, n_sequences);
  } else {
    candidates.resize(mc.vocab_size);
    std::iota(candidates.begin(), candidates.end(), 0);
    result.warnings.push_back("run_attack: no token-leak channel; using the full vocabulary");
  }

  RecoveryOptions extract_options = options;
  if (options.use_omp_denoise && options.omp_max_jumps == 0) {
    extract_options.omp_max_jumps = std::min(mc.ffn_width, n_sequences * seq_len + 1);
  }
  std::vector<BreachedEmbedding> breached =
      extract_breached_embeddings(update, crafted, layout, extract_options);
  result.breached_count = static_cast<int>(breached.size());
  for (const auto& be : breached)
    if (be.collision_flag) ++result.collision_count;

  std::vector<int> labels;
  if (breached.empty()) {
    result.warnings.push_back("run_attack: no occupied bins; result is uninformed");
  } else if (n_sequences == 1) {
    labels.assign(breached.size(), 0);
  } else {
    Rng cluster_rng = Rng(cfg.measurement_seed).derive(0xc1u);
    const auto cl = cluster_sequences(breached, n_sequences, seq_len, cfg.d_prime,
                                      cluster_rng, &result.warnings);
    result.breached_count = static_cast<int>(breached.size());
    labels = cl.labels;
  }

  std::vector<Slot> slots;
  std::vector<PositionAssignment> per_cluster(n_sequences);
  for (int c = 0; c < n_sequences; ++c) {
    std::vector<int> members;
    for (std::size_t i = 0; i < breached.size(); ++i)
      if (labels[i] == c) members.push_back(static_cast<int>(i));
    per_cluster[c] = assign_positions(members, breached, crafted, seq_len, cfg.d_prime);
    for (int p = 0; p < seq_len; ++p) {
      Slot s;
      s.cluster = c;
      s.position = p;
      s.embedding_index = per_cluster[c].embedding_of_position[p];
      s.filled = per_cluster[c].filled[p];
      // The final position of a causal sequence bears no next-token loss,
      // so no gradient evidence exists for it; a flat cost row lets the
      // assignment route the bag's residue there instead of chasing the
      // reused embedding's own token.
      if (mc.task == minitransformer::Task::kCausal && p == seq_len - 1) {
        s.embedding_index = -1;
        s.filled = true;
      }
      slots.push_back(s);
    }
  }

  std::vector<int> tokens = assign_tokens(slots, breached, crafted, candidates, cfg.d_prime);

  // The estimated bag can run short (a sequence-initial token that re-occurs
  // as a target hides one occurrence), which strands junk candidates on
  // cleanly recovered slots. Matching against all tokens is always available
  // to the attacker, so a slot whose candidate correlates far below its best
  // vocabulary match takes the vocabulary match instead. Reuse-filled slots
  // keep their multiset leftovers.
  {
    constexpr double kRepairGap = 0.25;
    TemplateCache templates(crafted);
    for (std::size_t i = 0; i < slots.size(); ++i) {
      if (slots[i].embedding_index < 0 || slots[i].filled) continue;
      const auto& u = breached[slots[i].embedding_index].u;
      const int pos = slots[i].position;
      const double assigned =
          payload_correlation(u, templates.get(tokens[i], pos), cfg.d_prime);
      int best_token = tokens[i];
      double best = assigned;
      for (int v = 0; v < mc.vocab_size; ++v) {
        const double corr = payload_correlation(u, templates.get(v, pos), cfg.d_prime);
        if (corr > best) {
          best = corr;
          best_token = v;
        }
      }
      if (best - assigned > kRepairGap) tokens[i] = best_token;
    }
  }

  // Two tokens sharing a bin yield a weighted mixture. Once a mixture's
  // first constituent is matched, projecting its template out leaves an
  // affinely exact image of the second constituent; a confident match
  // against a reuse-filled position recovers the hidden token.
  {
    constexpr double kDonorResidualMin = 0.03;
    constexpr double kDonorResidualMax = 0.90;
    constexpr double kMatchThreshold = 0.80;
    TemplateCache templates(crafted);
    for (int c = 0; c < n_sequences; ++c) {
      std::vector<int> donors, receivers;
      for (std::size_t i = 0; i < slots.size(); ++i) {
        if (slots[i].cluster != c) continue;
        if (slots[i].filled) {
          if (slots[i].embedding_index >= 0) receivers.push_back(static_cast<int>(i));
          continue;
        }
        if (slots[i].embedding_index < 0) continue;
        const auto& u = breached[slots[i].embedding_index].u;
        const double rho =
            affine_residual(u, templates.get(tokens[i], slots[i].position), cfg.d_prime);
        if (rho > kDonorResidualMin && rho < kDonorResidualMax) {
          donors.push_back(static_cast<int>(i));
        }
      }
      if (donors.empty() || receivers.empty()) continue;

      struct Match {
        double score = -1.0;
        int token = -1;
      };
      Matrix scores(static_cast<int>(donors.size()), static_cast<int>(receivers.size()));
      std::vector<std::vector<int>> best_token(
          donors.size(), std::vector<int>(receivers.size(), -1));
      for (std::size_t d = 0; d < donors.size(); ++d) {
        const Slot& ds = slots[donors[d]];
        const auto& base = templates.get(tokens[donors[d]], ds.position);
        const std::vector<double> r =
            residualize(breached[ds.embedding_index].u, base, cfg.d_prime);
        for (std::size_t rc = 0; rc < receivers.size(); ++rc) {
          const int pos = slots[receivers[rc]].position;
          Match m;
          for (int v = 0; v < mc.vocab_size; ++v) {
            const std::vector<double> tr =
                residualize(templates.get(v, pos), base, cfg.d_prime);
            const double s = std::fabs(cosine(r, tr));
            if (s > m.score) {
              m.score = s;
              m.token = v;
            }
          }
          scores(static_cast<int>(d), static_cast<int>(rc)) = m.score;
          best_token[d][rc] = m.token;
        }
      }
      std::vector<bool> donor_used(donors.size(), false), recv_used(receivers.size(), false);
      while (true) {
        double best = kMatchThreshold;
        int bd = -1, br = -1;
        for (std::size_t d = 0; d < donors.size(); ++d) {
          if (donor_used[d]) continue;
          for (std::size_t rc = 0; rc < receivers.size(); ++rc) {
            if (recv_used[rc]) continue;
            if (scores(static_cast<int>(d), static_cast<int>(rc)) > best) {
              best = scores(static_cast<int>(d), static_cast<int>(rc));
              bd = static_cast<int>(d);
              br = static_cast<int>(rc);
            }
          }
        }
        if (bd < 0) break;
        tokens[receivers[br]] = best_token[bd][br];
        donor_used[bd] = true;
        recv_used[br] = true;
      }
    }
  }

  const std::vector<bool> certified =
      certify(slots, tokens, breached, crafted, cfg.d_prime, options.certify_tol);

  result.sequences.assign(n_sequences, SequenceRecovery{});
  for (std::size_t i = 0; i < slots.size(); ++i) {
    SequenceRecovery& seq = result.sequences[slots[i].cluster];
    if (seq.tokens.empty()) {
      seq.tokens.assign(seq_len, 0);
      seq.certified.assign(seq_len, false);
      seq.cluster_id = slots[i].cluster;
    }
    seq.tokens[slots[i].position] = tokens[i];
    seq.certified[slots[i].position] = certified[i] && !slots[i].filled;
    if (slots[i].filled) ++seq.filled_positions;
  }
  return result;
}

}  // namespace fedleak::recovery
