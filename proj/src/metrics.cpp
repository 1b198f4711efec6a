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

#include "fedleak/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "fedleak/solvers.hpp"

namespace fedleak::harness {

using numkernel::Matrix;

namespace {

void check_shapes(const RecoveryResult& recovered, const std::vector<TokenSequence>& truth) {
  if (recovered.sequences.size() != truth.size() || truth.empty()) {
    throw std::invalid_argument("metrics: sequence count mismatch");
  }
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (recovered.sequences[i].tokens.size() != truth[i].size()) {
      throw std::invalid_argument("metrics: sequence length mismatch");
    }
  }
}

double multiset_overlap(const TokenSequence& a, const TokenSequence& b) {
  std::map<int, int> counts;
  for (int t : a) ++counts[t];
  std::int64_t hit = 0;
  for (int t : b) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++hit;
    }
  }
  return static_cast<double>(hit);
}

int lcs_length(const TokenSequence& a, const TokenSequence& b) {
  const int n = static_cast<int>(a.size());
  const int m = static_cast<int>(b.size());
  std::vector<int> prev(m + 1, 0), cur(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    for (int j = 1; j <= m; ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

}  // namespace

MatchedAccuracy total_accuracy(const RecoveryResult& recovered,
                               const std::vector<TokenSequence>& truth) {
  check_shapes(recovered, truth);
  const int n = static_cast<int>(truth.size());

  MatchedAccuracy out;
  out.permutation.assign(n, 0);
  if (n == 1) {
    out.permutation[0] = 0;
  } else {
    Matrix cost(n, n);
    for (int r = 0; r < n; ++r)
      for (int t = 0; t < n; ++t)
        cost(r, t) = -multiset_overlap(recovered.sequences[r].tokens, truth[t]);
    const solvers::Assignment a = solvers::linear_sum_assignment(cost);
    for (int r = 0; r < n; ++r) out.permutation[a.row_to_col[r]] = r;
  }

  out.resorted = recovered;
  for (int t = 0; t < n; ++t) out.resorted.sequences[t] = recovered.sequences[out.permutation[t]];

  out.per_sequence.assign(n, 0.0);
  std::int64_t hits = 0, total = 0;
  for (int t = 0; t < n; ++t) {
    const TokenSequence& rec = out.resorted.sequences[t].tokens;
    std::int64_t seq_hits = 0;
    for (std::size_t k = 0; k < truth[t].size(); ++k) {
      if (rec[k] == truth[t][k]) ++seq_hits;
    }
    out.per_sequence[t] = static_cast<double>(seq_hits) / truth[t].size();
    hits += seq_hits;
    total += static_cast<std::int64_t>(truth[t].size());
  }
  out.total_accuracy = static_cast<double>(hits) / total;
  return out;
}

double token_accuracy(const RecoveryResult& recovered,
                      const std::vector<TokenSequence>& truth) {
  check_shapes(recovered, truth);
  TokenSequence all_rec, all_truth;
  for (const auto& s : recovered.sequences)
    all_rec.insert(all_rec.end(), s.tokens.begin(), s.tokens.end());
  for (const auto& s : truth) all_truth.insert(all_truth.end(), s.begin(), s.end());
  return multiset_overlap(all_truth, all_rec) / static_cast<double>(all_truth.size());
}

double bleu(const RecoveryResult& recovered, const std::vector<TokenSequence>& truth) {
  check_shapes(recovered, truth);
  constexpr int kMaxN = 4;
  constexpr double kEps = 1e-9;

  double log_sum = 0.0;
  for (int n = 1; n <= kMaxN; ++n) {
    std::int64_t clipped = 0, total = 0;
    for (const auto& rec : recovered.sequences) {
      const TokenSequence& c = rec.tokens;
      const int len = static_cast<int>(c.size());
      if (len < n) continue;
      std::map<std::vector<int>, int> cand;
      for (int i = 0; i + n <= len; ++i)
        ++cand[std::vector<int>(c.begin() + i, c.begin() + i + n)];
      // Reference count of each n-gram is the max over all truth sequences.
      std::map<std::vector<int>, int> ref_max;
      for (const TokenSequence& ref : truth) {
        std::map<std::vector<int>, int> ref_counts;
        for (int i = 0; i + n <= static_cast<int>(ref.size()); ++i)
          ++ref_counts[std::vector<int>(ref.begin() + i, ref.begin() + i + n)];
        for (const auto& [g, cnt] : ref_counts)
          ref_max[g] = std::max(ref_max[g], cnt);
      }
      for (const auto& [g, cnt] : cand) {
        auto it = ref_max.find(g);
        clipped += std::min(cnt, it == ref_max.end() ? 0 : it->second);
      }
      total += len - n + 1;
    }
    if (total == 0) return 0.0;
    const double p = clipped > 0 ? static_cast<double>(clipped) / total : kEps / total;
    log_sum += std::log(p);
  }

  std::int64_t cand_len = 0, ref_len = 0;
  for (const auto& rec : recovered.sequences) {
    const int c = static_cast<int>(rec.tokens.size());
    cand_len += c;
    int best = static_cast<int>(truth[0].size());
    for (const auto& ref : truth) {
      const int r = static_cast<int>(ref.size());
      if (std::abs(r - c) < std::abs(best - c) || (std::abs(r - c) == std::abs(best - c) && r < best)) {
        best = r;
      }
    }
    ref_len += best;
  }
  const double bp = cand_len >= ref_len
                        ? 1.0
                        : std::exp(1.0 - static_cast<double>(ref_len) / cand_len);
  return bp * std::exp(log_sum / kMaxN);
}

double rouge_l(const RecoveryResult& recovered, const std::vector<TokenSequence>& truth) {
  check_shapes(recovered, truth);
  double f_sum = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const TokenSequence& c = recovered.sequences[i].tokens;
    const TokenSequence& r = truth[i];
    const int lcs = lcs_length(c, r);
    if (lcs == 0) continue;
    const double p = static_cast<double>(lcs) / c.size();
    const double rec = static_cast<double>(lcs) / r.size();
    f_sum += 2.0 * p * rec / (p + rec);
  }
  return f_sum / truth.size();
}

}  // namespace fedleak::harness
