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

#ifndef FEDLEAK_CORPUS_HPP_
#define FEDLEAK_CORPUS_HPP_

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "fedleak/minitransformer.hpp"
#include "fedleak/numkernel.hpp"

namespace fedleak::corpus {

using minitransformer::Batch;
using minitransformer::ModelParams;
using minitransformer::TokenSequence;
using numkernel::Rng;

// Word-level vocabulary with reserved ids below kReservedCount.
class Vocabulary {
 public:
  static constexpr int kUnkId = 0;
  static constexpr int kMaskId = 1;
  static constexpr int kPadId = 2;
  static constexpr int kReservedCount = 3;

  Vocabulary() = default;

  int size() const { return static_cast<int>(id_to_token_.size()); }
  int token_id(const std::string& token) const;  // kUnkId when absent
  const std::string& token(int id) const;
  bool is_reserved(int id) const { return id >= 0 && id < kReservedCount; }

  TokenSequence encode(const std::string& text) const;
  std::string decode(const TokenSequence& tokens) const;

  // One token per line, line number = id (reserved entries included).
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  friend Vocabulary build_vocab(const std::string& text, int cap);

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
  void append(const std::string& token);
};

// Whitespace/punctuation word tokenizer used for vocab building and
// encoding: alphanumeric runs are words, other printable characters are
// single-character tokens.
std::vector<std::string> tokenize_words(const std::string& text);

// Frequency-sorted vocabulary capped at `cap` non-reserved entries
// (cap <= 0 means unlimited). Frequency ties are broken lexicographically
// so identical text always builds the identical vocabulary.
Vocabulary build_vocab(const std::string& text, int cap = 0);

// One user's token stream.
struct UserShard {
  int user_id = 0;
  TokenSequence tokens;
  std::string source;
};

// Reads UTF-8 plain-text files (one document per file, or blank-line
// separated documents within a file); each document becomes one user.
std::vector<UserShard> load_user_shards(const std::vector<std::string>& paths,
                                        const Vocabulary& vocab);
std::vector<UserShard> shard_documents(const std::vector<std::string>& documents,
                                       const Vocabulary& vocab);

// The first `user_limit` users owning >= batch_size * seq_len tokens, each
// yielding batch_size sequences of exactly seq_len tokens. No [PAD] tokens
// are ever inserted; users with insufficient data are skipped.
std::vector<Batch> make_user_batches(const std::vector<UserShard>& shards,
                                     int batch_size, int seq_len, int user_limit);

// `count` batches of uniform random token ids (reserved ids excluded).
std::vector<Batch> random_token_batches(const Vocabulary& vocab, int count,
                                        int batch_size, int seq_len, Rng& rng);

struct MeasurementStats {
  double mean = 0.0;
  double std_dev = 0.0;
  std::int64_t sample_count = 0;
};

// Mean/std of <m, u> over all first-block feed-forward inputs u produced by
// forwarding the batches through the prepared embedding + block-1 front end.
// Requires at least 100 samples and a non-degenerate spread.
MeasurementStats estimate_measurement_stats(const std::vector<double>& m,
                                            const ModelParams& params,
                                            const std::vector<Batch>& batches);

// Deterministic synthetic corpus with a Zipfian word distribution; used by
// the demo CLI and the test suites in place of real text dumps.
std::string synthesize_corpus(Rng& rng, int documents, int words_per_document,
                              int distinct_words);

}  // namespace fedleak::corpus

#endif  // FEDLEAK_CORPUS_HPP_
