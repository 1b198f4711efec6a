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

#ifndef FEDLEAK_METRICS_HPP_
#define FEDLEAK_METRICS_HPP_

#include <vector>

#include "fedleak/minitransformer.hpp"
#include "fedleak/recovery.hpp"

namespace fedleak::harness {

using minitransformer::TokenSequence;
using recovery::RecoveryResult;

struct MatchedAccuracy {
  double total_accuracy = 0.0;
  std::vector<int> permutation;        // recovered index placed at truth index j
  std::vector<double> per_sequence;    // positionwise accuracy per truth sequence
  RecoveryResult resorted;             // recovered sequences in truth order
};

// Optimal sequence-to-sequence matching (assignment on per-pair token
// overlap), then the fraction of positions with exact token-and-position
// agreement under that pairing.
MatchedAccuracy total_accuracy(const RecoveryResult& recovered,
                               const std::vector<TokenSequence>& truth);

// Multiset intersection size over total tokens, order-free.
double token_accuracy(const RecoveryResult& recovered,
                      const std::vector<TokenSequence>& truth);

// Corpus-level BLEU-4 with brevity penalty; every truth sequence serves as
// a reference for every recovered sequence. Zero n-gram counts are replaced
// by 1e-9 to keep the geometric mean finite.
double bleu(const RecoveryResult& recovered, const std::vector<TokenSequence>& truth);

// Mean ROUGE-L F-measure over the aligned pairing (call on the resorted
// result from total_accuracy).
double rouge_l(const RecoveryResult& recovered, const std::vector<TokenSequence>& truth);

}  // namespace fedleak::harness

#endif  // FEDLEAK_METRICS_HPP_
