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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "fedleak/metrics.hpp"

using namespace fedleak::harness;
using fedleak::minitransformer::TokenSequence;
using fedleak::recovery::RecoveryResult;
using fedleak::recovery::SequenceRecovery;

namespace {

RecoveryResult wrap(const std::vector<TokenSequence>& seqs) {
  RecoveryResult r;
  for (const auto& s : seqs) {
    SequenceRecovery sr;
    sr.tokens = s;
    sr.certified.assign(s.size(), false);
    r.sequences.push_back(std::move(sr));
  }
  return r;
}

// Straight-line single-pair BLEU-4 for the hand oracle, smoothing-free.
double bleu_oracle_single(const TokenSequence& cand, const TokenSequence& ref) {
  double log_sum = 0.0;
  for (int n = 1; n <= 4; ++n) {
    int clipped = 0;
    const int total = static_cast<int>(cand.size()) - n + 1;
    for (int i = 0; i + n <= static_cast<int>(cand.size()); ++i) {
      // Count occurrences of this n-gram in cand up to its ref count.
      int cand_count = 0, ref_count = 0, seen_before = 0;
      for (int j = 0; j + n <= static_cast<int>(cand.size()); ++j) {
        bool eq = true;
        for (int e = 0; e < n; ++e)
          if (cand[j + e] != cand[i + e]) eq = false;
        if (eq) {
          ++cand_count;
          if (j < i) ++seen_before;
        }
      }
      if (seen_before > 0) continue;  // count each distinct n-gram once
      for (int j = 0; j + n <= static_cast<int>(ref.size()); ++j) {
        bool eq = true;
        for (int e = 0; e < n; ++e)
          if (ref[j + e] != cand[i + e]) eq = false;
        if (eq) ++ref_count;
      }
      clipped += std::min(cand_count, ref_count);
    }
    const double p = clipped > 0 ? static_cast<double>(clipped) / total : 1e-9 / total;
    log_sum += std::log(p);
  }
  const double bp =
      cand.size() >= ref.size()
          ? 1.0
          : std::exp(1.0 - static_cast<double>(ref.size()) / cand.size());
  return bp * std::exp(log_sum / 4.0);
}

}  // namespace

TEST_CASE("total accuracy on identical and near-identical inputs") {
  const std::vector<TokenSequence> truth{{1, 2, 3, 4}, {5, 6, 7, 8}};
  CHECK(total_accuracy(wrap(truth), truth).total_accuracy == doctest::Approx(1.0));

  auto off = truth;
  off[0][1] = 99;
  CHECK(total_accuracy(wrap(off), truth).total_accuracy == doctest::Approx(7.0 / 8.0));
}

TEST_CASE("one wrong token in a 32-long sequence scores 31/32") {
  TokenSequence t(32);
  for (int i = 0; i < 32; ++i) t[i] = 100 + i;
  TokenSequence rec = t;
  rec[13] = 7;
  CHECK(total_accuracy(wrap({rec}), {t}).total_accuracy ==
        doctest::Approx(31.0 / 32.0));
}

TEST_CASE("resorting undoes a sequence permutation") {
  const std::vector<TokenSequence> truth{{1, 1, 2, 2}, {3, 3, 4, 4}, {5, 5, 6, 6}};
  const std::vector<TokenSequence> permuted{truth[2], truth[0], truth[1]};
  const MatchedAccuracy m = total_accuracy(wrap(permuted), truth);
  CHECK(m.total_accuracy == doctest::Approx(1.0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    CHECK(m.resorted.sequences[i].tokens == truth[i]);
  }
}

TEST_CASE("total accuracy rejects shape mismatches") {
  const std::vector<TokenSequence> truth{{1, 2, 3}};
  CHECK_THROWS_AS(total_accuracy(wrap({{1, 2}}), truth), std::invalid_argument);
  CHECK_THROWS_AS(total_accuracy(wrap({{1, 2, 3}, {4, 5, 6}}), truth),
                  std::invalid_argument);
}

TEST_CASE("token accuracy hand cases") {
  const std::vector<TokenSequence> truth{{1, 1, 2}};
  CHECK(token_accuracy(wrap({{1, 1, 2}}), truth) == doctest::Approx(1.0));
  CHECK(token_accuracy(wrap({{7, 8, 9}}), truth) == doctest::Approx(0.0));
  CHECK(token_accuracy(wrap({{1, 2, 2}}), truth) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("total accuracy never exceeds token accuracy") {
  fedleak::numkernel::Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<TokenSequence> truth(2, TokenSequence(6));
    std::vector<TokenSequence> rec(2, TokenSequence(6));
    for (auto& s : truth)
      for (auto& t : s) t = static_cast<int>(rng.uniform_int(5));
    for (auto& s : rec)
      for (auto& t : s) t = static_cast<int>(rng.uniform_int(5));
    const auto m = total_accuracy(wrap(rec), truth);
    CHECK(m.total_accuracy <= token_accuracy(wrap(rec), truth) + 1e-12);
  }
}

TEST_CASE("bleu and rouge on identical and disjoint inputs") {
  const std::vector<TokenSequence> truth{{1, 2, 3, 4, 5, 6}};
  CHECK(bleu(wrap(truth), truth) == doctest::Approx(1.0));
  CHECK(rouge_l(wrap(truth), truth) == doctest::Approx(1.0));
  const std::vector<TokenSequence> other{{7, 8, 9, 10, 11, 12}};
  CHECK(bleu(wrap(other), truth) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(rouge_l(wrap(other), truth) == doctest::Approx(0.0));
}

TEST_CASE("bleu matches the straight-line single-pair oracle") {
  const TokenSequence cand{1, 2, 3, 4};
  const TokenSequence ref{1, 2, 9, 4};
  CHECK(bleu(wrap({cand}), {ref}) ==
        doctest::Approx(bleu_oracle_single(cand, ref)).epsilon(1e-9));

  const TokenSequence cand2{1, 2, 3, 4, 5, 6, 7, 8};
  const TokenSequence ref2{1, 2, 3, 9, 5, 6, 7, 8};
  CHECK(bleu(wrap({cand2}), {ref2}) ==
        doctest::Approx(bleu_oracle_single(cand2, ref2)).epsilon(1e-9));
}

TEST_CASE("rouge_l agrees with a hand-computed LCS") {
  // cand "a b c d", ref "a b x d": LCS = 3, P = R = 3/4, F = 3/4.
  CHECK(rouge_l(wrap({{1, 2, 3, 4}}), {{1, 2, 9, 4}}) == doctest::Approx(0.75));
}

TEST_CASE("metrics are invariant to sequence order in both arguments") {
  const std::vector<TokenSequence> truth{{1, 2, 3, 4}, {5, 6, 7, 8}, {9, 10, 11, 12}};
  std::vector<TokenSequence> rec{{1, 2, 3, 99}, {5, 6, 99, 8}, {9, 99, 11, 12}};
  const double base_total = total_accuracy(wrap(rec), truth).total_accuracy;
  const double base_token = token_accuracy(wrap(rec), truth);

  std::vector<TokenSequence> rec_perm{rec[2], rec[0], rec[1]};
  std::vector<TokenSequence> truth_perm{truth[1], truth[2], truth[0]};
  CHECK(total_accuracy(wrap(rec_perm), truth_perm).total_accuracy ==
        doctest::Approx(base_total));
  CHECK(token_accuracy(wrap(rec_perm), truth_perm) == doctest::Approx(base_token));
}
