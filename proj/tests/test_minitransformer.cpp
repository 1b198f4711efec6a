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
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "fedleak/minitransformer.hpp"
#include "test_support.hpp"

using namespace fedleak::minitransformer;
using fedleak::numkernel::Matrix;
using fedleak::numkernel::Rng;
using test_support::random_batch;
using test_support::tiny_config;

TEST_CASE("init_model is deterministic and respects layer-norm defaults") {
  const ModelConfig cfg = tiny_config();
  Rng a(7), b(7);
  const ModelParams pa = init_model(cfg, a);
  const ModelParams pb = init_model(cfg, b);
  bool identical = true;
  pa.for_each_tensor([&](const std::string& name, const Matrix& m) {
    const Matrix* other = nullptr;
    pb.for_each_tensor([&](const std::string& n2, const Matrix& m2) {
      if (n2 == name) other = &m2;
    });
    for (std::int64_t i = 0; i < m.size(); ++i)
      if (m.data()[i] != other->data()[i]) identical = false;
  });
  CHECK(identical);

  for (int j = 0; j < cfg.d_model; ++j) {
    CHECK(pa.blocks[0].ln1_scale(0, j) == 1.0);
    CHECK(pa.blocks[0].ln2_shift(0, j) == 0.0);
  }
}

TEST_CASE("embedding initialization std is near 0.02") {
  ModelConfig cfg = tiny_config();
  cfg.vocab_size = 1000;
  Rng rng(3);
  const ModelParams p = init_model(cfg, rng);
  double mean = 0.0;
  const auto& e = p.token_embedding;
  for (std::int64_t i = 0; i < e.size(); ++i) mean += e.data()[i];
  mean /= e.size();
  double var = 0.0;
  for (std::int64_t i = 0; i < e.size(); ++i) {
    var += (e.data()[i] - mean) * (e.data()[i] - mean);
  }
  const double std_dev = std::sqrt(var / (e.size() - 1));
  CHECK(std::fabs(std_dev - 0.02) < 0.002);
}

TEST_CASE("zeroed decoder gives the uniform loss ln(vocab)") {
  ModelConfig cfg = tiny_config();
  Rng rng(5);
  ModelParams p = init_model(cfg, rng);
  p.decoder_weight.set_zero();
  p.decoder_bias.set_zero();
  const Batch batch = random_batch(cfg, 2, 6, rng);
  CHECK(forward_loss(p, batch) ==
        doctest::Approx(std::log(static_cast<double>(cfg.vocab_size))).epsilon(1e-12));
}

TEST_CASE("loss is invariant to batch order") {
  const ModelConfig cfg = tiny_config();
  Rng rng(9);
  const ModelParams p = init_model(cfg, rng);
  Batch batch = random_batch(cfg, 3, 6, rng);
  const double loss = forward_loss(p, batch);
  std::swap(batch.sequences[0], batch.sequences[2]);
  CHECK(forward_loss(p, batch) == doctest::Approx(loss).epsilon(1e-14));
}

TEST_CASE("forward matches the naive straight-line oracle") {
  for (const auto act : {Activation::kRelu, Activation::kGelu}) {
    for (const auto task : {Task::kCausal, Task::kMasked}) {
      ModelConfig cfg = tiny_config(act, task, /*tied=*/task == Task::kMasked);
      Rng rng(31);
      const ModelParams p = init_model(cfg, rng);
      const Batch batch = random_batch(cfg, 2, 8, rng);
      const double ours = forward_loss(p, batch);
      const double oracle = test_support::naive_forward_loss(p, batch);
      CHECK(std::fabs(ours - oracle) < 1e-10);
    }
  }
}

TEST_CASE("analytic gradient matches finite differences on the tiny model") {
  ModelConfig cfg = tiny_config();
  Rng rng(13);
  ModelParams p = init_model(cfg, rng);
  const Batch batch = random_batch(cfg, 2, 6, rng);
  std::string worst;
  const double err = test_support::gradcheck_worst_error(p, batch, &worst);
  INFO("worst tensor: ", worst);
  CHECK(err < 1e-4);
}

TEST_CASE("gradient of a duplicated batch is unchanged") {
  const ModelConfig cfg = tiny_config();
  Rng rng(21);
  const ModelParams p = init_model(cfg, rng);
  Batch batch = random_batch(cfg, 1, 6, rng);
  const GradientUpdate once = gradient(p, batch);
  batch.sequences.push_back(batch.sequences[0]);
  const GradientUpdate twice = gradient(p, batch);
  std::vector<const Matrix*> lhs;
  once.tensors.for_each_tensor([&](const std::string&, const Matrix& m) { lhs.push_back(&m); });
  std::size_t idx = 0;
  double max_diff = 0.0;
  twice.tensors.for_each_tensor([&](const std::string&, const Matrix& m) {
    for (std::int64_t i = 0; i < m.size(); ++i) {
      max_diff = std::max(max_diff, std::fabs(m.data()[i] - lhs[idx]->data()[i]));
    }
    ++idx;
  });
  CHECK(max_diff < 1e-14);
}

TEST_CASE("masked task with no masked positions is rejected") {
  ModelConfig cfg = tiny_config(Activation::kRelu, Task::kMasked);
  Rng rng(2);
  const ModelParams p = init_model(cfg, rng);
  Batch batch;
  batch.sequences.push_back(TokenSequence{4, 5, 6, 7});
  batch.mask_positions.push_back({});
  CHECK_THROWS_AS(gradient(p, batch), std::invalid_argument);
}

TEST_CASE("token ids beyond the vocabulary are rejected") {
  const ModelConfig cfg = tiny_config();
  Rng rng(2);
  const ModelParams p = init_model(cfg, rng);
  Batch batch;
  batch.sequences.push_back(TokenSequence{1, cfg.vocab_size, 2, 3});
  CHECK_THROWS_AS(forward_loss(p, batch), std::invalid_argument);
}

TEST_CASE("silencing attention outputs and FFN second layers kills W1 gradients") {
  const ModelConfig cfg = tiny_config();
  Rng rng(41);
  ModelParams p = init_model(cfg, rng);
  for (auto& b : p.blocks) {
    b.w_o.set_zero();
    b.b_o.set_zero();
    b.ffn_w2.set_zero();
    b.ffn_b2.set_zero();
  }
  const Batch batch = random_batch(cfg, 2, 6, rng);
  const GradientUpdate g = gradient(p, batch);
  for (const auto& b : g.tensors.blocks) {
    CHECK(fedleak::numkernel::max_abs(b.ffn_w1) == 0.0);
    CHECK(fedleak::numkernel::max_abs(b.ffn_b1) == 0.0);
  }
}

TEST_CASE("attention rows sum to one") {
  const ModelConfig cfg = tiny_config();
  Rng rng(43);
  const ModelParams p = init_model(cfg, rng);
  const Batch batch = random_batch(cfg, 2, 7, rng);
  const ForwardTrace trace = forward_trace(p, batch, /*trace_attention=*/true);
  REQUIRE(!trace.attn_probs.empty());
  for (const Matrix& probs : trace.attn_probs) {
    for (int i = 0; i < probs.rows(); ++i) {
      double row = 0.0;
      for (int j = 0; j < probs.cols(); ++j) row += probs(i, j);
      CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("dropout gradients respect the realized masks") {
  ModelConfig cfg = tiny_config();
  cfg.dropout_rate = 0.25;
  Rng rng(51);
  ModelParams p = init_model(cfg, rng);
  const Batch batch = random_batch(cfg, 1, 6, rng);
  // Same dropout seed twice gives the identical realized gradient.
  Rng d1(99), d2(99);
  const GradientUpdate g1 = gradient(p, batch, &d1);
  const GradientUpdate g2 = gradient(p, batch, &d2);
  double diff = 0.0;
  std::vector<const Matrix*> lhs;
  g1.tensors.for_each_tensor([&](const std::string&, const Matrix& m) { lhs.push_back(&m); });
  std::size_t idx = 0;
  g2.tensors.for_each_tensor([&](const std::string&, const Matrix& m) {
    for (std::int64_t i = 0; i < m.size(); ++i)
      diff = std::max(diff, std::fabs(m.data()[i] - lhs[idx]->data()[i]));
    ++idx;
  });
  CHECK(diff == 0.0);

  // Different seeds give different gradients.
  Rng d3(100);
  const GradientUpdate g3 = gradient(p, batch, &d3);
  double any = 0.0;
  idx = 0;
  g3.tensors.for_each_tensor([&](const std::string&, const Matrix& m) {
    for (std::int64_t i = 0; i < m.size(); ++i)
      any = std::max(any, std::fabs(m.data()[i] - lhs[idx]->data()[i]));
    ++idx;
  });
  CHECK(any > 0.0);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  const ModelConfig cfg = tiny_config(Activation::kGelu, Task::kCausal, /*tied=*/true,
                                      /*bias=*/false);
  Rng rng(61);
  const ModelParams p = init_model(cfg, rng);
  const std::string prefix =
      (std::filesystem::temp_directory_path() / "fedleak_ckpt_test").string();
  save_checkpoint(p, prefix);
  const ModelParams q = load_checkpoint(prefix);
  CHECK(q.config.tied_embedding == cfg.tied_embedding);
  CHECK(q.config.activation == cfg.activation);
  bool identical = true;
  std::vector<const Matrix*> lhs;
  p.for_each_tensor([&](const std::string&, const Matrix& m) { lhs.push_back(&m); });
  std::size_t idx = 0;
  q.for_each_tensor([&](const std::string&, const Matrix& m) {
    for (std::int64_t i = 0; i < m.size(); ++i)
      if (m.data()[i] != lhs[idx]->data()[i]) identical = false;
    ++idx;
  });
  CHECK(identical);
  std::filesystem::remove(prefix + ".manifest");
  std::filesystem::remove(prefix + ".bin");
}
