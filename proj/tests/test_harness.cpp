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
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "fedleak/harness.hpp"

using namespace fedleak;
using namespace fedleak::harness;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("fedleak_harness_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string write_demo_corpus(const fs::path& dir) {
  numkernel::Rng rng(7);
  const std::string text = corpus::synthesize_corpus(rng, 12, 120, 90);
  const fs::path p = dir / "corpus.txt";
  std::ofstream f(p);
  f << text;
  return p.string();
}

ExperimentSpec small_spec(const fs::path& dir) {
  ExperimentSpec spec;
  spec.model.d_model = 16;
  spec.model.n_layers = 2;
  spec.model.n_heads = 2;
  spec.model.ffn_width = 24;
  spec.model.max_positions = 8;
  spec.attack.d_prime = 3;
  spec.corpus_paths = {write_demo_corpus(dir)};
  spec.vocab_cap = 80;
  spec.batch_sizes = {1};
  spec.seq_lens = {8};
  spec.user_counts = {1};
  spec.user_limit = 4;
  spec.stats_batches = 40;
  spec.seed = 1234;
  spec.output_dir = (dir / "out").string();
  return spec;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("run_experiment emits one row per sweep cell") {
  TempDir tmp;
  ExperimentSpec spec = small_spec(tmp.path);
  spec.batch_sizes = {1, 2};
  spec.seq_lens = {4, 8};
  const ExperimentResult result = run_experiment(spec);
  CHECK(result.rows.size() == 4);
  CHECK(result.all_cells_ok);
  for (const auto& row : result.rows) {
    CHECK(row.error.empty());
    CHECK(row.total_accuracy >= 0.0);
    CHECK(row.total_accuracy <= 1.0);
    CHECK(row.total_accuracy <= row.token_accuracy + 1e-12);
    CHECK(row.certified_fraction <= row.total_accuracy + 1e-12);
    CHECK(row.most_vulnerable_accuracy + 1e-12 >= row.total_accuracy);
  }
}

TEST_CASE("rerunning a spec yields a byte-identical records file") {
  TempDir tmp;
  const ExperimentSpec spec = small_spec(tmp.path);
  const ExperimentResult first = run_experiment(spec);
  const std::string bytes_first = slurp(first.records_path);
  const ExperimentResult second = run_experiment(spec);
  const std::string bytes_second = slurp(second.records_path);
  CHECK(bytes_first == bytes_second);
  CHECK(!bytes_first.empty());
}

TEST_CASE("experiment spec files round-trip through the parser") {
  TempDir tmp;
  const fs::path p = tmp.path / "exp.cfg";
  {
    std::ofstream f(p);
    f << "# demo experiment\n";
    f << "corpus = a.txt, b.txt\n";
    f << "vocab_cap = 321\n";
    f << "d_model = 64\n";
    f << "n_layers = 3\n";
    f << "n_heads = 2\n";
    f << "ffn_width = 256\n";
    f << "max_positions = 128\n";
    f << "activation = gelu\n";
    f << "tied_embedding = true\n";
    f << "decoder_bias = false\n";
    f << "batch_sizes = 1,2,4\n";
    f << "seq_lens = 32\n";
    f << "users = 1,4\n";
    f << "seed = 99\n";
    f << "gamma = 1e7\n";
    f << "clip_norm = 1.0\n";
    f << "noise_scale = 0.001\n";
    f << "noise_dist = gaussian\n";
    f << "out = runs/demo\n";
  }
  const ExperimentSpec spec = parse_experiment_spec(p.string());
  CHECK(spec.corpus_paths == std::vector<std::string>{"a.txt", "b.txt"});
  CHECK(spec.vocab_cap == 321);
  CHECK(spec.model.d_model == 64);
  CHECK(spec.model.activation == minitransformer::Activation::kGelu);
  CHECK(spec.model.tied_embedding);
  CHECK(!spec.model.decoder_bias);
  CHECK(spec.batch_sizes == std::vector<int>{1, 2, 4});
  CHECK(spec.user_counts == std::vector<int>{1, 4});
  CHECK(spec.seed == 99);
  CHECK(spec.attack.gamma == doctest::Approx(1e7));
  REQUIRE(spec.defense.clip_norm.has_value());
  CHECK(*spec.defense.clip_norm == doctest::Approx(1.0));
  CHECK(spec.defense.noise_dist == fedsim::NoiseDist::kGaussian);
  CHECK(spec.output_dir == "runs/demo");
  // d_prime falls back to the per-model default when unset.
  CHECK(spec.attack.d_prime == 6);
}

TEST_CASE("unknown keys are rejected with a line number") {
  TempDir tmp;
  const fs::path p = tmp.path / "bad.cfg";
  {
    std::ofstream f(p);
    f << "corpus = a.txt\n";
    f << "no_such_key = 1\n";
  }
  CHECK_THROWS_WITH_AS(parse_experiment_spec(p.string()), doctest::Contains(":2"),
                       std::runtime_error);
}

TEST_CASE("records convert to CSV with one line per row") {
  TempDir tmp;
  const ExperimentSpec spec = small_spec(tmp.path);
  const ExperimentResult result = run_experiment(spec);
  const std::string csv = records_to_csv(result.records_path);
  int lines = 0;
  for (char c : csv)
    if (c == '\n') ++lines;
  CHECK(lines == 1 + static_cast<int>(result.rows.size()));
  CHECK(csv.find("total_accuracy") != std::string::npos);
}

TEST_CASE("output directory override comes from the environment") {
  ::setenv("FEDLEAK_OUTPUT_DIR", "/tmp/fedleak_override_test", 1);
  CHECK(resolve_output_dir("configured") == "/tmp/fedleak_override_test");
  ::unsetenv("FEDLEAK_OUTPUT_DIR");
  CHECK(resolve_output_dir("configured") == "configured");
}

TEST_CASE("recovery reports name tokens when a vocabulary is present") {
  recovery::RecoveryResult rec;
  recovery::SequenceRecovery seq;
  seq.tokens = {3, 4};
  seq.certified = {true, false};
  rec.sequences.push_back(seq);
  const std::string plain = format_recovery_report(rec, nullptr);
  CHECK(plain.find("3*") != std::string::npos);

  const corpus::Vocabulary vocab = corpus::build_vocab("alpha beta");
  const std::string named = format_recovery_report(rec, &vocab);
  CHECK(named.find("alpha*") != std::string::npos);
}
