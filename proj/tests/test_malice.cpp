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
#include "fedleak/malice.hpp"
#include "test_support.hpp"

using namespace fedleak;
using namespace fedleak::malice;
using minitransformer::Batch;
using minitransformer::ModelConfig;
using minitransformer::ModelParams;
using minitransformer::TokenSequence;
using numkernel::Matrix;
using numkernel::Rng;

namespace {

// Series-based standard normal CDF, independent of the library path.
double cdf_oracle(double x) {
  long double sum = 0.0L;
  long double term = static_cast<long double>(x) / std::sqrt(2.0L);
  const long double z = term;
  for (int n = 0; n < 80; ++n) {
    sum += term / (2 * n + 1);
    term *= -z * z / (n + 1);
  }
  const double erf = static_cast<double>(sum * 2.0L / std::sqrt(std::acos(-1.0L)));
  return 0.5 * (1.0 + erf);
}

ModelConfig desk_config() {
  ModelConfig cfg;
  cfg.vocab_size = 120;
  cfg.d_model = 64;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.ffn_width = 24;
  cfg.max_positions = 24;
  return cfg;
}

MaliciousConfig desk_attack(const ModelConfig& cfg) {
  MaliciousConfig mal;
  mal.d_prime = 4;
  mal.bin_count = cfg.n_layers * cfg.ffn_width;
  mal.stats = {0.1, 1.3, 1000};
  return mal;
}

bool params_equal(const ModelParams& a, const ModelParams& b) {
  bool equal = true;
  std::vector<const Matrix*> lhs;
  a.for_each_tensor([&](const std::string&, const Matrix& m) { lhs.push_back(&m); });
  std::size_t idx = 0;
  b.for_each_tensor([&](const std::string&, const Matrix& m) {
    for (std::int64_t i = 0; i < m.size(); ++i)
      if (m.data()[i] != lhs[idx]->data()[i]) equal = false;
    ++idx;
  });
  return equal;
}

}  // namespace

TEST_CASE("bias bins at the standard normal quartiles") {
  const MeasurementStats stats{0.0, 1.0, 100};
  const BinLayout layout = compute_bias_bins(stats, 3, 1, 3);
  CHECK(layout.boundaries[0] == doctest::Approx(0.6745).epsilon(1e-4));
  CHECK(layout.boundaries[1] == doctest::Approx(0.0).epsilon(1e-4));
  CHECK(layout.boundaries[2] == doctest::Approx(-0.6745).epsilon(1e-4));
}

TEST_CASE("bias bins reject tiny or degenerate inputs") {
  CHECK_THROWS_AS(compute_bias_bins({0.0, 1.0, 10}, 1, 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(compute_bias_bins({0.0, 0.0, 10}, 4, 1, 4), std::invalid_argument);
}

TEST_CASE("shifting the mean shifts every boundary the opposite way") {
  const BinLayout base = compute_bias_bins({0.0, 1.0, 10}, 8, 2, 4);
  const BinLayout shifted = compute_bias_bins({2.0, 1.0, 10}, 8, 2, 4);
  for (int l = 0; l < 8; ++l) {
    CHECK(shifted.boundaries[l] == doctest::Approx(base.boundaries[l] - 2.0).epsilon(1e-12));
  }
}

TEST_CASE("bin boundaries decrease and carve equal mass") {
  const MeasurementStats stats{-0.4, 2.2, 500};
  const int m_total = 48;
  const BinLayout layout = compute_bias_bins(stats, m_total, 2, 24);
  for (int l = 0; l + 1 < m_total; ++l) {
    CHECK(layout.boundaries[l] > layout.boundaries[l + 1]);
  }
  // Mass between adjacent thresholds under N(mean, std^2), via the oracle.
  for (int l = 0; l + 1 < m_total; ++l) {
    const double hi = (-layout.boundaries[l + 1] - stats.mean) / stats.std_dev;
    const double lo = (-layout.boundaries[l] - stats.mean) / stats.std_dev;
    CHECK(std::fabs(cdf_oracle(hi) - cdf_oracle(lo) - 1.0 / (m_total + 1)) < 1e-9);
  }
}

TEST_CASE("crafted feed-forward pre-activations equal <m,u> + bias") {
  const ModelConfig cfg = desk_config();
  Rng rng(3);
  const ModelParams base = minitransformer::init_model(cfg, rng);
  const MaliciousConfig mal = desk_attack(cfg);
  const ModelParams crafted = craft_malicious_params(base, mal);
  const auto m = measurement_vector(mal, cfg);
  const BinLayout layout = compute_bias_bins(mal.stats, mal.bin_count, cfg.n_layers,
                                             cfg.ffn_width);

  const Batch batch = test_support::random_batch(cfg, 2, 12, rng);
  const auto trace = minitransformer::forward_trace(crafted, batch);
  for (int bi = 0; bi < cfg.n_layers; ++bi) {
    const auto& u = trace.ffn_inputs[bi];
    const auto& y = trace.ffn_preact[bi];
    for (int r = 0; r < u.rows(); ++r) {
      const double mu = numkernel::dot(u.row(r), m);
      for (int j = 0; j < cfg.ffn_width; ++j) {
        const double expected = mu + layout.boundaries[layout.bin_index(bi, j)];
        CHECK(std::fabs(y(r, j) - expected) < 1e-10);
      }
    }
  }
}

TEST_CASE("gamma skew collapses block-1 attention onto position zero") {
  const ModelConfig cfg = desk_config();
  Rng rng(11);
  const ModelParams base = minitransformer::init_model(cfg, rng);
  MaliciousConfig mal = desk_attack(cfg);
  mal.gamma = 1e8;
  const ModelParams crafted = craft_malicious_params(base, mal);
  const Batch batch = test_support::random_batch(cfg, 4, 12, rng);
  const auto trace = minitransformer::forward_trace(crafted, batch, true);
  // attn_probs order: per sequence, per block, per head.
  const int heads_per_seq = cfg.n_layers * cfg.n_heads;
  for (int s = 0; s < 4; ++s) {
    for (int h = 0; h < cfg.n_heads; ++h) {
      const Matrix& probs = trace.attn_probs[s * heads_per_seq + h];
      for (int i = 0; i < probs.rows(); ++i) {
        CHECK(probs(i, 0) >= 1.0 - 1e-6);
      }
    }
  }
}

TEST_CASE("measurement rows are rank one until inspection noise is added") {
  const ModelConfig cfg = desk_config();
  Rng rng(17);
  const ModelParams base = minitransformer::init_model(cfg, rng);
  MaliciousConfig mal = desk_attack(cfg);
  const ModelParams plain = craft_malicious_params(base, mal);
  CHECK(numkernel::numerical_rank(plain.blocks[0].ffn_w1) == 1);

  mal.inspection_noise_std = 1e-4;
  const ModelParams noised = craft_malicious_params(base, mal);
  const int full = std::min(cfg.ffn_width, cfg.d_model);
  CHECK(numkernel::numerical_rank(noised.blocks[0].ffn_w1) == full);
}

TEST_CASE("crafting is idempotent") {
  const ModelConfig cfg = desk_config();
  Rng rng(23);
  const ModelParams base = minitransformer::init_model(cfg, rng);
  const MaliciousConfig mal = desk_attack(cfg);
  const ModelParams once = craft_malicious_params(base, mal);
  const ModelParams twice = craft_malicious_params(once, mal);
  CHECK(params_equal(once, twice));
}

TEST_CASE("craft validates config against the model") {
  const ModelConfig cfg = desk_config();
  Rng rng(29);
  const ModelParams base = minitransformer::init_model(cfg, rng);
  MaliciousConfig mal = desk_attack(cfg);
  mal.bin_count = 7;  // != n_layers * ffn_width
  CHECK_THROWS_AS(craft_malicious_params(base, mal), std::invalid_argument);
  mal = desk_attack(cfg);
  mal.d_prime = cfg.d_model;
  CHECK_THROWS_AS(craft_malicious_params(base, mal), std::invalid_argument);
}

TEST_CASE("sequence identity is constant within and distinct across sequences") {
  const ModelConfig cfg = desk_config();
  Rng rng(31);
  const ModelParams base = minitransformer::init_model(cfg, rng);
  const MaliciousConfig mal = desk_attack(cfg);
  const ModelParams crafted = craft_malicious_params(base, mal);

  Batch batch;
  batch.sequences.push_back(TokenSequence{10, 11, 12, 13, 14, 15});
  batch.sequences.push_back(TokenSequence{50, 11, 12, 13, 14, 15});
  const auto ids = sequence_identity_check(crafted, batch, mal.d_prime);

  for (const auto& seq : ids) {
    for (const auto& vec : seq) {
      for (int e = 0; e < mal.d_prime; ++e) {
        CHECK(std::fabs(vec[e] - seq[0][e]) < 1e-6);
      }
    }
  }
  double sep = 0.0;
  for (int e = 0; e < mal.d_prime; ++e) sep += std::fabs(ids[0][0][e] - ids[1][0][e]);
  CHECK(sep > 1e-4);

  // A batch of one sequence trivially yields a single identity.
  Batch single;
  single.sequences.push_back(TokenSequence{10, 11, 12});
  const auto one = sequence_identity_check(crafted, single, mal.d_prime);
  CHECK(one.size() == 1);

  // Identical sequences share their identity vector (the documented
  // collision mode).
  Batch dup;
  dup.sequences.push_back(TokenSequence{10, 11, 12});
  dup.sequences.push_back(TokenSequence{10, 11, 12});
  const auto same = sequence_identity_check(crafted, dup, mal.d_prime);
  for (int e = 0; e < mal.d_prime; ++e) {
    CHECK(same[0][0][e] == doctest::Approx(same[1][0][e]).epsilon(1e-12));
  }
}

TEST_CASE("single token input flips exactly one bin boundary") {
  const ModelConfig cfg = desk_config();
  Rng rng(37);
  const ModelParams base = minitransformer::init_model(cfg, rng);
  const MaliciousConfig mal = desk_attack(cfg);
  // Stats matched to the actual front end keep the token inside the grid.
  MaliciousConfig tuned = mal;
  const ModelParams probe = craft_malicious_params(base, tuned);
  Rng stats_rng(39);
  const auto m = measurement_vector(tuned, cfg);
  {
    Batch probe_batch = test_support::random_batch(cfg, 8, 16, stats_rng);
    const auto trace = minitransformer::forward_trace(probe, probe_batch);
    double mean = 0.0, m2 = 0.0;
    std::int64_t n = 0;
    const auto& u = trace.ffn_inputs[0];
    for (int r = 0; r < u.rows(); ++r) {
      const double v = numkernel::dot(u.row(r), m);
      ++n;
      const double delta = v - mean;
      mean += delta / n;
      m2 += delta * (v - mean);
    }
    tuned.stats = {mean, std::sqrt(m2 / (n - 1)), n};
  }
  const ModelParams crafted = craft_malicious_params(base, tuned);

  int flips_seen = 0;
  int trials = 0;
  for (int t = 0; t < 20; ++t) {
    Batch batch;
    batch.sequences.push_back(
        TokenSequence{static_cast<int>(3 + t), static_cast<int>(4 + t)});
    const auto trace = minitransformer::forward_trace(crafted, batch);
    // Count within-block transitions from firing to silent rows for the
    // first position's activation pattern.
    int transitions = 0;
    for (int bi = 0; bi < cfg.n_layers; ++bi) {
      const auto& y = trace.ffn_preact[bi];
      for (int j = 0; j + 1 < cfg.ffn_width; ++j) {
        const bool hi = y(0, j) > 0.0;
        const bool lo = y(0, j + 1) > 0.0;
        if (hi && !lo) ++transitions;
      }
    }
    ++trials;
    if (transitions == 1) ++flips_seen;
  }
  // Tokens beyond the top or below the bottom threshold show no transition;
  // everything else must show exactly one.
  CHECK(flips_seen >= trials - 2);
}
