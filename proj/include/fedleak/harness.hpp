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

#ifndef FEDLEAK_HARNESS_HPP_
#define FEDLEAK_HARNESS_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "fedleak/corpus.hpp"
#include "fedleak/fedsim.hpp"
#include "fedleak/malice.hpp"
#include "fedleak/metrics.hpp"
#include "fedleak/recovery.hpp"

namespace fedleak::harness {

struct ExperimentSpec {
  minitransformer::ModelConfig model;
  malice::MaliciousConfig attack;      // stats are estimated per cell
  fedsim::DefenseConfig defense;
  bool dropout_enabled = false;
  bool attacker_denoise = false;       // OMP readout against noised updates

  std::vector<std::string> corpus_paths;
  int vocab_cap = 500;
  bool random_data = false;            // uniform random tokens instead of text
  std::string dataset_label = "corpus";

  std::vector<int> batch_sizes{1};
  std::vector<int> seq_lens{32};
  std::vector<int> user_counts{1};     // users aggregated per round
  int user_limit = 100;                // total users consumed per cell

  int stats_batches = 100;             // random batches for measurement stats
  std::uint64_t seed = 42;
  std::string output_dir = "runs/exp";
};

struct MetricsRow {
  int batch_size = 0;
  int seq_len = 0;
  int users = 0;
  std::string model_label, dataset_label, defense_label;
  double total_accuracy = 0.0;
  double token_accuracy = 0.0;
  double bleu = 0.0;
  double rouge_l = 0.0;
  double most_vulnerable_accuracy = 0.0;
  double certified_fraction = 0.0;
  double runtime_seconds = 0.0;  // human report only; kept out of the records
  std::vector<double> per_user_best;
  int rounds = 0;
  std::string error;  // empty on success
};

// Shared per-experiment state: vocabulary and per-user shards.
struct CorpusContext {
  corpus::Vocabulary vocab;
  std::vector<corpus::UserShard> shards;
};

CorpusContext prepare_corpus(const ExperimentSpec& spec);

// Builds the base model, estimates measurement stats, crafts the malicious
// parameters, simulates every round of the cell, attacks each aggregate,
// and scores the reconstructions. Throws on unrecoverable setup errors.
MetricsRow run_cell(const ExperimentSpec& spec, const CorpusContext& ctx,
                    int batch_size, int seq_len, int users);

struct ExperimentResult {
  std::vector<MetricsRow> rows;
  std::string records_path;
  std::string report_path;
  bool all_cells_ok = true;
};

// Full sweep: one MetricsRow per (batch_size, seq_len, users) cell. Failures
// are recorded per cell and the sweep continues. Writes a machine-readable
// records file (JSON lines) and a human-readable table; the records file is
// byte-identical across reruns with the same spec.
ExperimentResult run_experiment(const ExperimentSpec& spec);

// Key-value experiment file (one `key = value` per line, '#' comments).
ExperimentSpec parse_experiment_spec(const std::string& path);

std::string records_to_csv(const std::string& records_path);
std::string format_report(const std::vector<MetricsRow>& rows);

// Reconstruction report: per-sequence token ids (or words when a vocabulary
// is supplied), certification marks, and fill-in counts.
std::string format_recovery_report(const recovery::RecoveryResult& result,
                                   const corpus::Vocabulary* vocab);

// Output directory override honored by the CLI (FEDLEAK_OUTPUT_DIR).
std::string resolve_output_dir(const std::string& configured);

}  // namespace fedleak::harness

#endif  // FEDLEAK_HARNESS_HPP_
