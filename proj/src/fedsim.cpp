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

#include "fedleak/fedsim.hpp"

#include <cmath>
#include <stdexcept>

namespace fedleak::fedsim {

using numkernel::Matrix;

void ProtocolConfig::validate() const {
  if (users_per_round < 1 || batch_size < 1 || seq_len < 1) {
    throw std::invalid_argument("ProtocolConfig: counts must be >= 1");
  }
  if (defense.clip_norm.has_value() && !(*defense.clip_norm > 0.0)) {
    throw std::invalid_argument("ProtocolConfig: clip_norm must be positive");
  }
  if (defense.noise_scale < 0.0) {
    throw std::invalid_argument("ProtocolConfig: noise_scale must be >= 0");
  }
}

GradientUpdate user_update(const ModelParams& params, const Batch& batch,
                           Rng* dropout_rng) {
  if (batch.sequences.empty()) {
    throw std::invalid_argument("user_update: empty batch");
  }
  return minitransformer::gradient(params, batch, dropout_rng);
}

GradientUpdate aggregate(const std::vector<GradientUpdate>& updates) {
  if (updates.empty()) throw std::invalid_argument("aggregate: no updates");
  GradientUpdate out = updates[0];
  for (std::size_t i = 1; i < updates.size(); ++i) {
    std::vector<const Matrix*> others;
    updates[i].tensors.for_each_tensor(
        [&](const std::string&, const Matrix& m) { others.push_back(&m); });
    std::size_t idx = 0;
    out.tensors.for_each_tensor([&](const std::string& name, Matrix& m) {
      if (idx >= others.size() || !m.same_shape(*others[idx])) {
        throw std::invalid_argument("aggregate: shape mismatch at tensor " + name);
      }
      numkernel::axpy(1.0, *others[idx], m);
      ++idx;
    });
    out.token_count += updates[i].token_count;
  }
  const double inv = 1.0 / static_cast<double>(updates.size());
  out.tensors.for_each_tensor([&](const std::string&, Matrix& m) {
    double* d = m.data();
    for (std::int64_t i = 0; i < m.size(); ++i) d[i] *= inv;
  });
  return out;
}

GradientUpdate apply_defense(const GradientUpdate& update, const DefenseConfig& cfg,
                             Rng& rng) {
  GradientUpdate out = update;
  if (cfg.clip_norm.has_value()) {
    double sq = 0.0;
    out.tensors.for_each_tensor([&](const std::string&, const Matrix& m) {
      const double f = numkernel::frobenius_norm(m);
      sq += f * f;
    });
    const double norm = std::sqrt(sq);
    if (norm > *cfg.clip_norm && norm > 0.0) {
      const double scale = *cfg.clip_norm / norm;
      out.tensors.for_each_tensor([&](const std::string&, Matrix& m) {
        double* d = m.data();
        for (std::int64_t i = 0; i < m.size(); ++i) d[i] *= scale;
      });
    }
  }
  if (cfg.noise_scale > 0.0) {
    out.tensors.for_each_tensor([&](const std::string&, Matrix& m) {
      double* d = m.data();
      for (std::int64_t i = 0; i < m.size(); ++i) {
        d[i] += cfg.noise_dist == NoiseDist::kLaplace ? rng.laplace(cfg.noise_scale)
                                                      : rng.gaussian() * cfg.noise_scale;
      }
    });
  }
  return out;
}

}  // namespace fedleak::fedsim
