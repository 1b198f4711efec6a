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

#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "fedleak/harness.hpp"
#include "fedleak/minitransformer.hpp"

namespace {

using namespace fedleak;

int cmd_run(const std::string& spec_path) {
  const harness::ExperimentSpec spec = harness::parse_experiment_spec(spec_path);
  const harness::ExperimentResult result = harness::run_experiment(spec);
  std::cout << harness::format_report(result.rows);
  std::cout << "records: " << result.records_path << "\n";
  if (!result.all_cells_ok) {
    std::cerr << "some cells failed; see the records file\n";
    return 1;
  }
  return 0;
}

int cmd_attack(const std::string& update_prefix, const std::string& params_prefix,
               const std::string& cfg_path, int n_sequences, int seq_len,
               const std::string& vocab_path, bool denoise) {
  const minitransformer::ModelParams crafted = minitransformer::load_checkpoint(params_prefix);
  minitransformer::GradientUpdate update;
  update.tensors = minitransformer::load_checkpoint(update_prefix);

  const harness::ExperimentSpec spec = harness::parse_experiment_spec(cfg_path);
  malice::MaliciousConfig mal = spec.attack;
  mal.bin_count = crafted.config.n_layers * crafted.config.ffn_width;
  // The bin thresholds are read back from the crafted bias vectors so the
  // attack sees exactly the layout that was shipped.
  mal.stats.sample_count = 0;
  {
    // Invert c_l = -(mu + sigma * quantile_l) from two spread thresholds.
    const auto& b1 = crafted.blocks[0].ffn_b1;
    const int m_total = mal.bin_count;
    const double q0 = numkernel::inverse_normal_cdf(1.0 / (m_total + 1));
    const double q1 = numkernel::inverse_normal_cdf(static_cast<double>(m_total) / (m_total + 1));
    const double c_first = b1(0, 0);
    double c_last = crafted.blocks.back().ffn_b1(0, crafted.config.ffn_width - 1);
    mal.stats.std_dev = (c_first - c_last) / (q1 - q0);
    mal.stats.mean = -c_first - mal.stats.std_dev * q0;
  }

  recovery::RecoveryOptions options;
  options.use_omp_denoise = denoise;
  const recovery::RecoveryResult result =
      recovery::run_attack(update, crafted, mal, n_sequences, seq_len, options);

  corpus::Vocabulary vocab;
  const corpus::Vocabulary* vocab_ptr = nullptr;
  if (!vocab_path.empty()) {
    vocab = corpus::Vocabulary::load(vocab_path);
    vocab_ptr = &vocab;
  }
  std::cout << harness::format_recovery_report(result, vocab_ptr);
  return 0;
}

int cmd_inspect(const std::string& params_prefix) {
  const minitransformer::ModelParams params = minitransformer::load_checkpoint(params_prefix);
  const auto& cfg = params.config;
  std::cout << "model: d_model=" << cfg.d_model << " n_layers=" << cfg.n_layers
            << " n_heads=" << cfg.n_heads << " ffn_width=" << cfg.ffn_width
            << " vocab=" << cfg.vocab_size << "\n";
  for (int bi = 0; bi < cfg.n_layers; ++bi) {
    const auto& b1 = params.blocks[bi].ffn_b1;
    std::cout << "block " << bi << " bias thresholds: first=" << b1(0, 0)
              << " last=" << b1(0, cfg.ffn_width - 1);
    const int rank = numkernel::numerical_rank(params.blocks[bi].ffn_w1);
    std::cout << "  ffn_w1 numerical rank: " << rank << "/"
              << std::min(cfg.ffn_width, cfg.d_model) << "\n";
  }
  bool decreasing = true;
  for (int bi = 0; bi < cfg.n_layers; ++bi) {
    const auto& b1 = params.blocks[bi].ffn_b1;
    for (int r = 0; r + 1 < cfg.ffn_width; ++r)
      if (b1(0, r) <= b1(0, r + 1)) decreasing = false;
  }
  std::cout << "bias thresholds strictly decreasing: " << (decreasing ? "yes" : "no") << "\n";
  return 0;
}

int cmd_report(const std::string& records_path, const std::string& csv_out) {
  const std::string csv = harness::records_to_csv(records_path);
  if (csv_out.empty()) {
    std::cout << csv;
  } else {
    std::ofstream f(csv_out);
    if (!f) throw std::runtime_error("cannot write " + csv_out);
    f << csv;
    std::cout << "wrote " << csv_out << "\n";
  }
  return 0;
}

int cmd_gen_corpus(const std::string& out_path, std::uint64_t seed, int docs, int words,
                   int distinct) {
  numkernel::Rng rng(seed);
  const std::string text = corpus::synthesize_corpus(rng, docs, words, distinct);
  std::ofstream f(out_path);
  if (!f) throw std::runtime_error("cannot write " + out_path);
  f << text;
  std::cout << "wrote " << docs << " documents to " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated text-leakage simulator"};
  app.require_subcommand(1);

  std::string spec_path;
  auto* run = app.add_subcommand("run", "run an experiment spec file");
  run->add_option("spec", spec_path, "experiment spec (key = value lines)")->required();

  std::string update_prefix, params_prefix, cfg_path, vocab_path;
  int n_sequences = 1, seq_len = 32;
  bool denoise = false;
  auto* attack = app.add_subcommand("attack", "reconstruct sequences from a saved update");
  attack->add_option("update", update_prefix, "update checkpoint prefix")->required();
  attack->add_option("params", params_prefix, "crafted parameter checkpoint prefix")->required();
  attack->add_option("config", cfg_path, "experiment spec with attacker constants")->required();
  attack->add_option("-n,--sequences", n_sequences, "expected sequence count");
  attack->add_option("-s,--seq-len", seq_len, "sequence length");
  attack->add_option("--vocab", vocab_path, "vocabulary file for detokenized output");
  attack->add_flag("--denoise", denoise, "use the sparse jump denoiser");

  std::string inspect_prefix;
  auto* inspect = app.add_subcommand("inspect", "print crafted-parameter diagnostics");
  inspect->add_option("params", inspect_prefix, "parameter checkpoint prefix")->required();

  std::string records_path, csv_out;
  auto* report = app.add_subcommand("report", "convert a records file to CSV");
  report->add_option("records", records_path, "records.jsonl path")->required();
  report->add_option("-o,--out", csv_out, "CSV output path (default stdout)");

  std::string corpus_out = "corpus.txt";
  std::uint64_t corpus_seed = 7;
  int corpus_docs = 120, corpus_words = 2000, corpus_distinct = 1200;
  auto* gen = app.add_subcommand("gen-corpus", "write a synthetic demo corpus");
  gen->add_option("-o,--out", corpus_out, "output file");
  gen->add_option("--seed", corpus_seed, "generator seed");
  gen->add_option("--docs", corpus_docs, "document (user) count");
  gen->add_option("--words", corpus_words, "words per document");
  gen->add_option("--distinct", corpus_distinct, "distinct word count");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(spec_path);
    if (attack->parsed())
      return cmd_attack(update_prefix, params_prefix, cfg_path, n_sequences, seq_len,
                        vocab_path, denoise);
    if (inspect->parsed()) return cmd_inspect(inspect_prefix);
    if (report->parsed()) return cmd_report(records_path, csv_out);
    if (gen->parsed())
      return cmd_gen_corpus(corpus_out, corpus_seed, corpus_docs, corpus_words,
                            corpus_distinct);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
