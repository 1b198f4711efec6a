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

#include "fedleak/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace fedleak::corpus {

void Vocabulary::append(const std::string& token) {
  token_to_id_.emplace(token, static_cast<int>(id_to_token_.size()));
  id_to_token_.push_back(token);
}

int Vocabulary::token_id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw std::invalid_argument("Vocabulary: id out of range");
  return id_to_token_[id];
}

TokenSequence Vocabulary::encode(const std::string& text) const {
  TokenSequence out;
  for (const std::string& w : tokenize_words(text)) out.push_back(token_id(w));
  return out;
}

std::string Vocabulary::decode(const TokenSequence& tokens) const {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out += ' ';
    out += token(tokens[i]);
  }
  return out;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write vocabulary to " + path);
  for (const std::string& t : id_to_token_) f << t << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read vocabulary from " + path);
  Vocabulary v;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    v.append(line);
  }
  if (v.size() < kReservedCount) throw std::runtime_error("vocabulary file too short");
  return v;
}

std::vector<std::string> tokenize_words(const std::string& text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) {
      out.push_back(current);
      current.clear();
    }
  };
  for (unsigned char c : text) {
    if (std::isalnum(c) || c == '_' || c == '\'') {
      current += static_cast<char>(c);
    } else {
      flush();
      if (!std::isspace(c) && std::isprint(c)) out.push_back(std::string(1, c));
    }
  }
  flush();
  return out;
}

Vocabulary build_vocab(const std::string& text, int cap) {
  const std::vector<std::string> words = tokenize_words(text);
  if (words.empty()) throw std::invalid_argument("build_vocab: empty corpus");

  // std::map keeps tie-breaking lexicographic and order-independent.
  std::map<std::string, std::int64_t> counts;
  for (const std::string& w : words) ++counts[w];
  std::vector<std::pair<std::string, std::int64_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  Vocabulary v;
  v.append("[UNK]");
  v.append("[MASK]");
  v.append("[PAD]");
  const int limit = cap > 0 ? cap : static_cast<int>(ranked.size());
  for (int i = 0; i < limit && i < static_cast<int>(ranked.size()); ++i) {
    v.append(ranked[i].first);
  }
  return v;
}

std::vector<UserShard> shard_documents(const std::vector<std::string>& documents,
                                       const Vocabulary& vocab) {
  std::vector<UserShard> shards;
  for (std::size_t i = 0; i < documents.size(); ++i) {
    UserShard s;
    s.user_id = static_cast<int>(i);
    s.tokens = vocab.encode(documents[i]);
    s.source = "doc" + std::to_string(i);
    shards.push_back(std::move(s));
  }
  return shards;
}

std::vector<UserShard> load_user_shards(const std::vector<std::string>& paths,
                                        const Vocabulary& vocab) {
  std::vector<std::string> documents;
  for (const std::string& path : paths) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read corpus file " + path);
    std::string line, doc;
    bool any = false;
    while (std::getline(f, line)) {
      const bool blank = line.find_first_not_of(" \t\r") == std::string::npos;
      if (blank) {
        if (!doc.empty()) {
          documents.push_back(doc);
          doc.clear();
        }
      } else {
        doc += line;
        doc += '\n';
        any = true;
      }
    }
    if (!doc.empty()) documents.push_back(doc);
    if (!any) throw std::runtime_error("corpus file is empty: " + path);
  }
  return shard_documents(documents, vocab);
}

std::vector<Batch> make_user_batches(const std::vector<UserShard>& shards,
                                     int batch_size, int seq_len, int user_limit) {
  if (batch_size < 1 || seq_len < 1) {
    throw std::invalid_argument("make_user_batches: batch_size and seq_len must be >= 1");
  }
  const std::int64_t need = static_cast<std::int64_t>(batch_size) * seq_len;
  std::vector<Batch> out;
  for (const UserShard& shard : shards) {
    if (static_cast<std::int64_t>(shard.tokens.size()) < need) continue;
    Batch b;
    for (int i = 0; i < batch_size; ++i) {
      const auto begin = shard.tokens.begin() + static_cast<std::int64_t>(i) * seq_len;
      b.sequences.emplace_back(begin, begin + seq_len);
    }
    out.push_back(std::move(b));
    if (user_limit > 0 && static_cast<int>(out.size()) >= user_limit) break;
  }
  if (out.empty()) {
    throw std::runtime_error("make_user_batches: no user owns " + std::to_string(need) +
                             " tokens");
  }
  return out;
}

std::vector<Batch> random_token_batches(const Vocabulary& vocab, int count,
                                        int batch_size, int seq_len, Rng& rng) {
  if (count < 1) throw std::invalid_argument("random_token_batches: count must be >= 1");
  const int lo = Vocabulary::kReservedCount;
  const int span = vocab.size() - lo;
  if (span < 1) throw std::invalid_argument("random_token_batches: vocabulary has no usable tokens");
  std::vector<Batch> out(count);
  for (Batch& b : out) {
    b.sequences.assign(batch_size, TokenSequence(seq_len));
    for (auto& seq : b.sequences)
      for (auto& t : seq) t = lo + static_cast<int>(rng.uniform_int(span));
  }
  return out;
}

MeasurementStats estimate_measurement_stats(const std::vector<double>& m,
                                            const ModelParams& params,
                                            const std::vector<Batch>& batches) {
  if (static_cast<int>(m.size()) != params.config.d_model) {
    throw std::invalid_argument("estimate_measurement_stats: measurement length " +
                                std::to_string(m.size()) + " != d_model " +
                                std::to_string(params.config.d_model));
  }
  // Welford accumulation of <m, u> over block-1 FFN inputs.
  std::int64_t n = 0;
  double mean = 0.0, m2 = 0.0;
  for (const Batch& batch : batches) {
    const auto trace = minitransformer::forward_trace(params, batch);
    const auto& u = trace.ffn_inputs[0];
    for (int r = 0; r < u.rows(); ++r) {
      const double v = numkernel::dot(u.row(r), m);
      ++n;
      const double delta = v - mean;
      mean += delta / n;
      m2 += delta * (v - mean);
    }
  }
  if (n < 100) {
    throw std::invalid_argument("estimate_measurement_stats: need >= 100 samples, got " +
                                std::to_string(n));
  }
  const double var = m2 / (n - 1);
  if (!(var > 1e-24)) {
    throw std::invalid_argument("estimate_measurement_stats: degenerate measurement spread");
  }
  return {mean, std::sqrt(var), n};
}

std::string synthesize_corpus(Rng& rng, int documents, int words_per_document,
                              int distinct_words) {
  if (documents < 1 || words_per_document < 1 || distinct_words < 1) {
    throw std::invalid_argument("synthesize_corpus: all counts must be >= 1");
  }
  static const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n",
                                  "p", "r", "s", "t", "v", "z", "ch", "st"};
  static const char* kVowels[] = {"a", "e", "i", "o", "u"};
  std::vector<std::string> words;
  words.reserve(distinct_words);
  for (int i = 0; words.size() < static_cast<std::size_t>(distinct_words); ++i) {
    std::string w;
    int x = i;
    const int base = 16 * 5;
    do {
      const int syll = x % base;
      w += kOnsets[syll / 5];
      w += kVowels[syll % 5];
      x /= base;
    } while (x > 0);
    // Two-syllable minimum keeps words apart from single letters.
    if (w.size() < 4) w += kVowels[i % 5];
    words.push_back(w);
  }

  // Zipf weights over the word list.
  std::vector<double> cumulative(distinct_words);
  double total = 0.0;
  for (int i = 0; i < distinct_words; ++i) {
    total += 1.0 / std::pow(i + 1.0, 1.1);
    cumulative[i] = total;
  }

  std::string out;
  for (int d = 0; d < documents; ++d) {
    int emitted = 0;
    int sentence_len = 0;
    while (emitted < words_per_document) {
      const double u = rng.uniform() * total;
      const auto it = std::lower_bound(cumulative.begin(), cumulative.end(), u);
      const int idx = static_cast<int>(it - cumulative.begin());
      if (sentence_len > 0) out += ' ';
      out += words[std::min(idx, distinct_words - 1)];
      ++emitted;
      ++sentence_len;
      if (sentence_len >= 6 + static_cast<int>(rng.uniform_int(9))) {
        out += " .";
        out += sentence_len % 2 == 0 ? "\n" : " ";
        sentence_len = 0;
      }
    }
    out += " .\n\n";
  }
  return out;
}

}  // namespace fedleak::corpus
